#pragma once

#include <cstddef>
#include <iosfwd>
#include <vector>

namespace sola {

/// Symmetric discrete probability kernel over integer offsets [-radius, radius],
/// weights normalized to sum 1.
struct DecayKernel {
    long radius = 0;
    std::vector<double> weights;  // length 2*radius + 1, index = offset + radius

    double weight(long delta) const;
    double mass() const;
    double mean() const;
    double variance() const;
    void normalize();

    static DecayKernel delta();
};

/// Normalized exponential kernel, weights proportional to exp(-rate*|delta|).
/// Requires radius >= 25/rate so the truncated tail mass is negligible.
DecayKernel exp_kernel(double rate, long radius);
/// Auto-chosen radius ceil(25/rate).
DecayKernel exp_kernel(double rate);

/// Exact discrete convolution; the output support is the sum of supports.
DecayKernel convolve(const DecayKernel& a, const DecayKernel& b);

/// M-fold convolution power.
DecayKernel power(const DecayKernel& k, std::size_t m);

/// Max |log(k(d)/k(0)) + d^2/(2 sigma^2)| over |d| <= 2 sigma: how far the
/// peak-normalized kernel is from its Gaussian central-lobe approximation.
double gaussian_lobe_error(const DecayKernel& k);

/// Smallest delta >= 0 with k(delta)/k(0) <= eps. Throws when the kernel never
/// drops below eps inside its support.
long effective_radius(const DecayKernel& k, double eps);

struct KernelStats {
    double mean = 0.0;
    double variance = 0.0;
    long radius_at_eps = 0;
};

KernelStats kernel_stats(const DecayKernel& k, double eps);

struct ScalingFit {
    std::vector<std::size_t> depths;
    std::vector<double> radii;
    double constant = 0.0;   // c in xi = c * M^alpha
    double exponent = 0.0;   // alpha
    double r_squared = 0.0;
};

/// Stacks `depth` identical exponential kernels per entry of `depths`, measures
/// the effective radius at tolerance eps, and least-squares fits
/// log(xi) = log(c) + alpha*log(M).
ScalingFit fit_sqrt_scaling(const std::vector<std::size_t>& depths, double rate, double eps);

struct RangeRow {
    std::size_t depth;
    double sigma;
    long xi;
    double xi_predicted;  // sigma * sqrt(2 ln(1/eps))
    double gaussian_error;
};

/// Rows for depths 1, 2, 4, ... up to max_depth (powers of two).
std::vector<RangeRow> range_table(double rate, double eps, std::size_t max_depth);

/// CSV with header (M, sigma, xi, gaussian_error).
void write_range_csv(std::ostream& os, const std::vector<RangeRow>& rows);

}  // namespace sola
