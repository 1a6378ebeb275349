#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>

#include "sola/range.hpp"

using namespace sola;

TEST_SUITE("range_analysis") {

TEST_CASE("exponential kernel: symmetry, peak, normalization") {
    const DecayKernel k = exp_kernel(1.0);
    CHECK(std::abs(k.mass() - 1.0) <= 1e-12);
    for (long d = 1; d <= k.radius; ++d) CHECK(k.weight(d) == k.weight(-d));
    for (long d = 1; d <= k.radius; ++d) CHECK(k.weight(d) < k.weight(d - 1));
    CHECK(k.weight(0) > k.weight(1));
    CHECK(std::abs(k.mean()) <= 1e-12);
}

TEST_CASE("discrete variance converges to 2/w^2 as w shrinks") {
    const DecayKernel k = exp_kernel(0.05);
    const double continuous = 2.0 / (0.05 * 0.05);  // 800
    CHECK(std::abs(k.variance() - continuous) / continuous <= 0.01);
}

TEST_CASE("insufficient truncation radius is rejected") {
    CHECK_THROWS_AS(exp_kernel(1.0, 10), std::invalid_argument);
    CHECK_THROWS_AS(exp_kernel(0.0), std::invalid_argument);
    CHECK_NOTHROW(exp_kernel(1.0, 25));
}

TEST_CASE("convolving with the delta kernel is the identity") {
    const DecayKernel k = exp_kernel(0.8);
    const DecayKernel c = convolve(k, DecayKernel::delta());
    REQUIRE(c.radius == k.radius);
    for (long d = -k.radius; d <= k.radius; ++d)
        CHECK(c.weight(d) == doctest::Approx(k.weight(d)).epsilon(1e-14));
}

TEST_CASE("variance is additive under convolution") {
    const DecayKernel a = exp_kernel(1.0);
    const DecayKernel b = exp_kernel(0.7);
    const DecayKernel c = convolve(a, b);
    CHECK(std::abs(c.variance() - (a.variance() + b.variance())) <= 1e-9);
    CHECK(std::abs(c.mass() - 1.0) <= 1e-12);
    CHECK(std::abs(c.mean()) <= 1e-9);
}

TEST_CASE("power(k, 2) matches a hand-rolled double sum") {
    const DecayKernel k = exp_kernel(1.0, 25);
    const DecayKernel sq = power(k, 2);
    for (long d = -50; d <= 50; ++d) {
        double expect = 0.0;
        for (long a = -25; a <= 25; ++a) expect += k.weight(a) * k.weight(d - a);
        CHECK(sq.weight(d) == doctest::Approx(expect).epsilon(1e-10));
    }
}

TEST_CASE("gaussian lobe error: self-comparison, CLT regime, M=1 failure") {
    // a genuine discrete gaussian deviates only through discretization
    DecayKernel gauss;
    gauss.radius = 40;
    gauss.weights.resize(81);
    const double s2 = 16.0;
    for (long d = -40; d <= 40; ++d)
        gauss.weights[static_cast<std::size_t>(d + 40)] =
            std::exp(-static_cast<double>(d) * static_cast<double>(d) / (2.0 * s2));
    gauss.normalize();
    CHECK(gaussian_lobe_error(gauss) <= 1e-3);

    const DecayKernel base = exp_kernel(1.0);
    CHECK(gaussian_lobe_error(power(base, 16)) <= 0.1);
    // a single exponential is far from gaussian: the claim is asymptotic
    CHECK(gaussian_lobe_error(base) > 0.5);
}

TEST_CASE("effective radius of a single exponential is ceil(ln(1/eps)/w)") {
    for (double w : {0.3, 0.5, 1.0, 2.0}) {
        for (double eps : {1e-1, 1e-2, 1e-3}) {
            const long expect = static_cast<long>(std::ceil(std::log(1.0 / eps) / w));
            CHECK(effective_radius(exp_kernel(w), eps) == expect);
        }
    }
}

TEST_CASE("effective radius is non-increasing in eps") {
    const DecayKernel k = power(exp_kernel(1.0), 4);
    long prev = effective_radius(k, 1e-5);
    for (double eps : {1e-4, 1e-3, 1e-2, 1e-1}) {
        const long r = effective_radius(k, eps);
        CHECK(r <= prev);
        prev = r;
    }
    CHECK_THROWS_AS(effective_radius(k, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(effective_radius(k, 1e-300), std::domain_error);
}

TEST_CASE("stacked radius matches the sigma * sqrt(2 ln 1/eps) prediction") {
    const DecayKernel base = exp_kernel(1.0);
    const double eps = 1e-3;
    const double log_term = std::sqrt(2.0 * std::log(1.0 / eps));
    for (std::size_t m : {8, 16, 32, 64}) {
        const DecayKernel stacked = power(base, m);
        const double predicted = std::sqrt(stacked.variance()) * log_term;
        const double measured = static_cast<double>(effective_radius(stacked, eps));
        CHECK(std::abs(measured - predicted) / predicted <= 0.15);
    }
}

TEST_CASE("heterogeneous rates: variance equals sum of 2/w^2 at small w") {
    const std::vector<double> rates = {0.05, 0.08, 0.1};
    DecayKernel acc = exp_kernel(rates[0]);
    double expect = 2.0 / (rates[0] * rates[0]);
    for (std::size_t i = 1; i < rates.size(); ++i) {
        acc = convolve(acc, exp_kernel(rates[i]));
        expect += 2.0 / (rates[i] * rates[i]);
    }
    CHECK(std::abs(acc.variance() - expect) / expect <= 0.02);
}

TEST_CASE("sqrt-scaling fit on depths 4..64") {
    const ScalingFit fit = fit_sqrt_scaling({4, 8, 16, 32, 64}, 1.0, 1e-3);
    CHECK(fit.exponent >= 0.42);
    CHECK(fit.exponent <= 0.58);
    CHECK(fit.r_squared >= 0.98);
    CHECK(fit.radii.size() == 5);
    CHECK_THROWS_AS(fit_sqrt_scaling({4, 8}, 1.0, 1e-3), std::invalid_argument);
}

TEST_CASE("kernel stats bundle mean, variance and the radius") {
    const KernelStats stats = kernel_stats(power(exp_kernel(1.0), 4), 1e-3);
    CHECK(std::abs(stats.mean) <= 1e-9);
    CHECK(stats.variance == doctest::Approx(4.0 * exp_kernel(1.0).variance()).epsilon(1e-9));
    CHECK(stats.radius_at_eps == effective_radius(power(exp_kernel(1.0), 4), 1e-3));
}

TEST_CASE("module csv carries the stated four columns") {
    std::ostringstream os;
    write_range_csv(os, range_table(1.0, 1e-3, 8));
    const std::string text = os.str();
    CHECK(text.rfind("M,sigma,xi,gaussian_error\n", 0) == 0);
    CHECK(text.find("\n1,") != std::string::npos);
}

TEST_CASE("range table ties depth 1 back to the single-layer law") {
    const std::vector<RangeRow> rows = range_table(1.0, 1e-3, 64);
    REQUIRE(!rows.empty());
    CHECK(rows.front().depth == 1);
    CHECK(rows.front().xi == static_cast<long>(std::ceil(std::log(1e3))));
    CHECK(rows.back().depth == 64);
    // sigma doubles every two depth-doublings
    for (std::size_t i = 1; i < rows.size(); ++i) {
        CHECK(rows[i].sigma == doctest::Approx(rows[i - 1].sigma * std::sqrt(2.0)).epsilon(1e-9));
        CHECK(rows[i].xi >= rows[i - 1].xi);
    }
}

}  // TEST_SUITE
