#pragma once

#include <functional>
#include <random>
#include <vector>

#include "sola/gradcheck.hpp"
#include "sola/tensor.hpp"

namespace sola::test {

/// Gradient-checks a layer: `forward_sum` must rebuild the layer from the
/// given tensors (input first, then parameters in collect order) and return
/// sum(output); `analytic` are the matching cotangents of that sum.
inline double gradcheck_against(
    const std::function<double(const std::vector<Tensor>&)>& forward_sum,
    const std::vector<Tensor>& inputs, const std::vector<Tensor>& analytic,
    std::size_t max_coords = 0, std::uint64_t seed = 17) {
    GradCheckOptions opts;
    opts.max_coords_per_tensor = max_coords;
    opts.seed = seed;
    return grad_check(forward_sum, inputs, analytic, opts);
}

/// Copies the tensors behind `ptrs` into a value vector.
inline std::vector<Tensor> snapshot(const std::vector<Tensor*>& ptrs) {
    std::vector<Tensor> out;
    out.reserve(ptrs.size());
    for (const Tensor* t : ptrs) out.push_back(*t);
    return out;
}

/// Writes `values` back through `ptrs` (sizes must match).
inline void restore(const std::vector<Tensor*>& ptrs, const std::vector<Tensor>& values) {
    for (std::size_t i = 0; i < ptrs.size(); ++i) *ptrs[i] = values[i];
}

inline double sum(const Tensor& t) {
    double s = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) s += t[i];
    return s;
}

}  // namespace sola::test
