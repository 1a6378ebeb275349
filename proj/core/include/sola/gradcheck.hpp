#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "sola/tensor.hpp"

namespace sola {

struct GradCheckOptions {
    double step = 1e-5;
    /// When nonzero, only this many randomly chosen coordinates per input
    /// tensor are probed by finite differences (seeded below).
    std::size_t max_coords_per_tensor = 0;
    std::uint64_t seed = 17;
};

/// Compares `analytic` (one gradient tensor per input) against central
/// finite differences of the scalar function `f` at `inputs`.
///
/// Returns max_i |analytic_i - fd_i| / max(linf(analytic), linf(fd), 1e-6),
/// the per-coordinate error normalized by the gradient's overall scale.
/// Throws std::runtime_error if `f` evaluates to a non-finite value.
double grad_check(const std::function<double(const std::vector<Tensor>&)>& f,
                  std::vector<Tensor> inputs, const std::vector<Tensor>& analytic,
                  GradCheckOptions opts = {});

}  // namespace sola
