#include "sola/range.hpp"

#include <cmath>
#include <iomanip>
#include <ostream>
#include <stdexcept>
#include <string>

namespace sola {

double DecayKernel::weight(long delta) const {
    if (delta < -radius || delta > radius) return 0.0;
    return weights[static_cast<std::size_t>(delta + radius)];
}

double DecayKernel::mass() const {
    double s = 0.0;
    for (double w : weights) s += w;
    return s;
}

double DecayKernel::mean() const {
    double s = 0.0;
    for (long d = -radius; d <= radius; ++d) s += static_cast<double>(d) * weight(d);
    return s;
}

double DecayKernel::variance() const {
    const double mu = mean();
    double s = 0.0;
    for (long d = -radius; d <= radius; ++d) {
        const double c = static_cast<double>(d) - mu;
        s += c * c * weight(d);
    }
    return s;
}

void DecayKernel::normalize() {
    const double m = mass();
    if (m <= 0.0) throw std::domain_error("decay kernel: nonpositive mass");
    for (double& w : weights) w /= m;
}

DecayKernel DecayKernel::delta() {
    DecayKernel k;
    k.radius = 0;
    k.weights = {1.0};
    return k;
}

DecayKernel exp_kernel(double rate, long radius) {
    if (rate <= 0.0) throw std::invalid_argument("exp_kernel: rate must be positive");
    const long min_radius = static_cast<long>(std::ceil(25.0 / rate));
    if (radius < min_radius)
        throw std::invalid_argument("exp_kernel: truncation radius " + std::to_string(radius) +
                                    " below required " + std::to_string(min_radius) +
                                    " for rate " + std::to_string(rate));
    DecayKernel k;
    k.radius = radius;
    k.weights.resize(static_cast<std::size_t>(2 * radius + 1));
    for (long d = -radius; d <= radius; ++d)
        k.weights[static_cast<std::size_t>(d + radius)] = std::exp(-rate * std::abs(d));
    k.normalize();
    return k;
}

DecayKernel exp_kernel(double rate) {
    if (rate <= 0.0) throw std::invalid_argument("exp_kernel: rate must be positive");
    return exp_kernel(rate, static_cast<long>(std::ceil(25.0 / rate)));
}

DecayKernel convolve(const DecayKernel& a, const DecayKernel& b) {
    DecayKernel c;
    c.radius = a.radius + b.radius;
    c.weights.assign(static_cast<std::size_t>(2 * c.radius + 1), 0.0);
    for (long da = -a.radius; da <= a.radius; ++da) {
        const double wa = a.weight(da);
        if (wa == 0.0) continue;
        for (long db = -b.radius; db <= b.radius; ++db)
            c.weights[static_cast<std::size_t>(da + db + c.radius)] += wa * b.weight(db);
    }
    c.normalize();  // absorbs rounding drift; support is exact
    return c;
}

DecayKernel power(const DecayKernel& k, std::size_t m) {
    if (m < 1) throw std::invalid_argument("power: depth must be >= 1");
    DecayKernel acc = k;
    for (std::size_t i = 1; i < m; ++i) acc = convolve(acc, k);
    return acc;
}

double gaussian_lobe_error(const DecayKernel& k) {
    const double var = k.variance();
    if (var <= 0.0) throw std::domain_error("gaussian_lobe_error: degenerate kernel");
    const double sigma = std::sqrt(var);
    const long limit = std::min(k.radius, static_cast<long>(std::floor(2.0 * sigma)));
    const double peak = k.weight(0);
    if (peak <= 0.0) throw std::domain_error("gaussian_lobe_error: zero peak weight");
    double worst = 0.0;
    for (long d = 1; d <= limit; ++d) {
        const double ratio = k.weight(d) / peak;
        if (ratio <= 0.0) throw std::domain_error("gaussian_lobe_error: zero weight inside lobe");
        const double dev = std::abs(std::log(ratio) +
                                    static_cast<double>(d) * static_cast<double>(d) / (2.0 * var));
        worst = std::max(worst, dev);
    }
    return worst;
}

long effective_radius(const DecayKernel& k, double eps) {
    if (eps <= 0.0 || eps >= 1.0)
        throw std::invalid_argument("effective_radius: tolerance must lie in (0, 1)");
    const double peak = k.weight(0);
    if (peak <= 0.0) throw std::domain_error("effective_radius: zero peak weight");
    for (long d = 0; d <= k.radius; ++d)
        if (k.weight(d) / peak <= eps) return d;
    throw std::domain_error("effective_radius: kernel never falls below tolerance " +
                            std::to_string(eps) + " inside its support");
}

KernelStats kernel_stats(const DecayKernel& k, double eps) {
    KernelStats s;
    s.mean = k.mean();
    s.variance = k.variance();
    s.radius_at_eps = effective_radius(k, eps);
    return s;
}

ScalingFit fit_sqrt_scaling(const std::vector<std::size_t>& depths, double rate, double eps) {
    if (depths.size() < 4)
        throw std::invalid_argument("fit_sqrt_scaling: need at least 4 depths, got " +
                                    std::to_string(depths.size()));
    const DecayKernel base = exp_kernel(rate);
    ScalingFit fit;
    fit.depths = depths;
    std::vector<double> lx, ly;
    for (std::size_t m : depths) {
        const long xi = effective_radius(power(base, m), eps);
        fit.radii.push_back(static_cast<double>(xi));
        lx.push_back(std::log(static_cast<double>(m)));
        ly.push_back(std::log(static_cast<double>(xi)));
    }
    const std::size_t n = lx.size();
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += lx[i];
        my += ly[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sxy += (lx[i] - mx) * (ly[i] - my);
        sxx += (lx[i] - mx) * (lx[i] - mx);
        syy += (ly[i] - my) * (ly[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0)
        throw std::domain_error("fit_sqrt_scaling: degenerate fit (constant data)");
    fit.exponent = sxy / sxx;
    fit.constant = std::exp(my - fit.exponent * mx);
    fit.r_squared = (sxy * sxy) / (sxx * syy);
    return fit;
}

std::vector<RangeRow> range_table(double rate, double eps, std::size_t max_depth) {
    if (max_depth < 1) throw std::invalid_argument("range_table: max depth must be >= 1");
    const DecayKernel base = exp_kernel(rate);
    const double log_term = std::sqrt(2.0 * std::log(1.0 / eps));
    std::vector<RangeRow> rows;
    DecayKernel current = base;
    std::size_t depth = 1;
    while (depth <= max_depth) {
        RangeRow row;
        row.depth = depth;
        row.sigma = std::sqrt(current.variance());
        row.xi = effective_radius(current, eps);
        row.xi_predicted = row.sigma * log_term;
        row.gaussian_error = gaussian_lobe_error(current);
        rows.push_back(row);
        if (depth > max_depth / 2) break;
        current = convolve(current, current);  // doubling the depth
        depth *= 2;
    }
    return rows;
}

void write_range_csv(std::ostream& os, const std::vector<RangeRow>& rows) {
    os << "M,sigma,xi,gaussian_error\n";
    os << std::setprecision(14);
    for (const RangeRow& r : rows)
        os << r.depth << ',' << r.sigma << ',' << r.xi << ',' << r.gaussian_error << '\n';
}

}  // namespace sola
