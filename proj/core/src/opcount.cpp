#include "sola/opcount.hpp"

namespace sola::opcount {

thread_local unsigned long long counter = 0;

}  // namespace sola::opcount
