#include "sola/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace sola {

namespace {
double eval_finite(const std::function<double(const std::vector<Tensor>&)>& f,
                   const std::vector<Tensor>& inputs) {
    const double v = f(inputs);
    if (!std::isfinite(v)) throw std::runtime_error("grad_check: function evaluated non-finite");
    return v;
}
}  // namespace

double grad_check(const std::function<double(const std::vector<Tensor>&)>& f,
                  std::vector<Tensor> inputs, const std::vector<Tensor>& analytic,
                  GradCheckOptions opts) {
    if (analytic.size() != inputs.size())
        throw std::invalid_argument("grad_check: gradient count does not match input count");
    eval_finite(f, inputs);

    std::mt19937_64 rng(opts.seed);
    double analytic_scale = 0.0;
    for (const Tensor& g : analytic) analytic_scale = std::max(analytic_scale, g.max_abs());

    double fd_scale = 0.0;
    double max_abs_err = 0.0;
    for (std::size_t t = 0; t < inputs.size(); ++t) {
        if (!analytic[t].same_shape(inputs[t]))
            throw std::invalid_argument("grad_check: gradient shape " + analytic[t].shape_str() +
                                        " does not match input shape " + inputs[t].shape_str());
        std::vector<std::size_t> coords(inputs[t].size());
        std::iota(coords.begin(), coords.end(), std::size_t{0});
        if (opts.max_coords_per_tensor != 0 && coords.size() > opts.max_coords_per_tensor) {
            std::shuffle(coords.begin(), coords.end(), rng);
            coords.resize(opts.max_coords_per_tensor);
        }
        for (std::size_t idx : coords) {
            const double saved = inputs[t][idx];
            inputs[t][idx] = saved + opts.step;
            const double up = eval_finite(f, inputs);
            inputs[t][idx] = saved - opts.step;
            const double down = eval_finite(f, inputs);
            inputs[t][idx] = saved;
            const double fd = (up - down) / (2.0 * opts.step);
            fd_scale = std::max(fd_scale, std::abs(fd));
            max_abs_err = std::max(max_abs_err, std::abs(fd - analytic[t][idx]));
        }
    }
    const double scale = std::max({analytic_scale, fd_scale, 1e-6});
    return max_abs_err / scale;
}

}  // namespace sola
