#pragma once

namespace sola::opcount {

/// Scalar-operation counter used by the complexity tests. Instrumented
/// kernels (the wkv pair) bump it once per innermost loop iteration.
extern thread_local unsigned long long counter;

inline void add(unsigned long long n) { counter += n; }
inline void reset() { counter = 0; }
inline unsigned long long value() { return counter; }

}  // namespace sola::opcount
