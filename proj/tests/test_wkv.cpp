#include <doctest.h>

#include <stdexcept>

#include <cmath>
#include <random>

#include "sola/flops.hpp"
#include "sola/opcount.hpp"
#include "sola/wkv.hpp"
#include "test_util.hpp"

using namespace sola;

namespace {
double rel_err(const Tensor& got, const Tensor& want) {
    return max_abs_diff(got, want) / std::max(want.max_abs(), 1e-9);
}
}  // namespace

TEST_SUITE("wkv_linear") {

TEST_CASE("single token reduces to its value row") {
    std::mt19937_64 rng(1);
    const Tensor k = randn(rng, {1, 3});
    const Tensor v = randn(rng, {1, 3});
    const Tensor w = randn(rng, {3});
    const Tensor u = randn(rng, {3});
    CHECK(max_abs_diff(wkv_naive(k, v, w, u), v) <= 1e-15);
    CHECK(max_abs_diff(wkv_scan(k, v, w, u), v) <= 1e-15);
}

TEST_CASE("two tokens with zero keys and bonus average the values") {
    // adjacent distance puts -(|t-i|-1)/N*w at exponent zero for any w
    std::mt19937_64 rng(2);
    const Tensor k({2, 2});
    const Tensor v = randn(rng, {2, 2});
    const Tensor w = randn(rng, {2}, 3.0);
    const Tensor u({2});
    const Tensor out = wkv_naive(k, v, w, u);
    for (std::size_t c = 0; c < 2; ++c) {
        const double mean = 0.5 * (v.at(0, c) + v.at(1, c));
        CHECK(out.at(0, c) == doctest::Approx(mean).epsilon(1e-14));
        CHECK(out.at(1, c) == doctest::Approx(mean).epsilon(1e-14));
    }
}

TEST_CASE("huge decay rate leaves only immediate neighbors") {
    // the (|t-i|-1) offset pins distance-1 terms at weight exp(0): the w->inf
    // limit is the 3-token neighbor average, not v_t alone
    std::mt19937_64 rng(3);
    const std::size_t n = 8;
    const Tensor k({n, 2});
    const Tensor v = randn(rng, {n, 2});
    const Tensor w = Tensor::full({2}, 1e4);
    const Tensor u({2});
    for (const Tensor& out : {wkv_naive(k, v, w, u), wkv_scan(k, v, w, u)}) {
        for (std::size_t c = 0; c < 2; ++c) {
            CHECK(out.at(0, c) == doctest::Approx(0.5 * (v.at(0, c) + v.at(1, c))).epsilon(1e-10));
            CHECK(out.at(n - 1, c) ==
                  doctest::Approx(0.5 * (v.at(n - 2, c) + v.at(n - 1, c))).epsilon(1e-10));
            for (std::size_t t = 1; t + 1 < n; ++t) {
                const double mean = (v.at(t - 1, c) + v.at(t, c) + v.at(t + 1, c)) / 3.0;
                CHECK(out.at(t, c) == doctest::Approx(mean).epsilon(1e-10));
            }
        }
    }
}

TEST_CASE("scan equals the naive oracle on random instances") {
    std::mt19937_64 rng(4);
    std::uniform_int_distribution<std::size_t> pick_n(1, 64), pick_d(1, 4);
    double worst = 0.0;
    for (int rep = 0; rep < 40; ++rep) {
        const std::size_t n = pick_n(rng), d = pick_d(rng);
        const Tensor k = randn(rng, {n, d});
        const Tensor v = randn(rng, {n, d});
        const Tensor w = randn(rng, {d}, 0.5);
        const Tensor u = randn(rng, {d}, 0.5);
        worst = std::max(worst, rel_err(wkv_scan(k, v, w, u), wkv_naive(k, v, w, u)));
    }
    CHECK(worst <= 1e-8);
}

TEST_CASE("scan survives adversarial key magnitudes") {
    std::mt19937_64 rng(5);
    Tensor k = randn(rng, {64, 4});
    for (std::size_t i = 0; i < k.size(); ++i) k[i] = k[i] > 0.0 ? 30.0 : -30.0;
    const Tensor v = randn(rng, {64, 4});
    const Tensor w = randn(rng, {4}, 0.5);
    const Tensor u = randn(rng, {4}, 0.5);
    const Tensor scan = wkv_scan(k, v, w, u);
    CHECK(scan.all_finite());
    CHECK(rel_err(scan, wkv_naive(k, v, w, u)) <= 1e-8);
}

TEST_CASE("an unstabilized evaluation fails where the stabilized pair holds") {
    // mutation oracle: drop the max subtraction, push keys past exp overflow
    std::mt19937_64 rng(6);
    const std::size_t n = 32;
    Tensor k = randn(rng, {n, 2});
    for (std::size_t i = 0; i < k.size(); ++i) k[i] = k[i] > 0.0 ? 900.0 : -900.0;
    const Tensor v = randn(rng, {n, 2});
    const Tensor w = Tensor::full({2}, 0.7);
    const Tensor u = Tensor::full({2}, 0.2);

    Tensor bad({n, 2});
    for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t t = 0; t < n; ++t) {
            double num = 0.0, den = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double dist = static_cast<double>(i > t ? i - t : t - i);
                const double x = i == t ? u[c] + k.at(t, c)
                                        : -(dist - 1.0) / n * w[c] + k.at(i, c);
                num += std::exp(x) * v.at(i, c);  // overflows without max subtraction
                den += std::exp(x);
            }
            bad.at(t, c) = num / den;
        }
    const Tensor good = wkv_naive(k, v, w, u);
    CHECK(good.all_finite());
    CHECK(!bad.all_finite());  // inf/inf garbage: the mutation is caught
    CHECK(rel_err(wkv_scan(k, v, w, u), good) <= 1e-8);
}

TEST_CASE("wkv output is a convex combination of value rows per channel") {
    std::mt19937_64 rng(7);
    for (int rep = 0; rep < 20; ++rep) {
        const std::size_t n = 2 + rng() % 24;
        const Tensor k = randn(rng, {n, 3});
        const Tensor v = randn(rng, {n, 3});
        const Tensor w = randn(rng, {3});
        const Tensor u = randn(rng, {3});
        const Tensor out = wkv_scan(k, v, w, u);
        for (std::size_t c = 0; c < 3; ++c) {
            double lo = v.at(0, c), hi = v.at(0, c);
            for (std::size_t i = 1; i < n; ++i) {
                lo = std::min(lo, v.at(i, c));
                hi = std::max(hi, v.at(i, c));
            }
            for (std::size_t t = 0; t < n; ++t) {
                CHECK(out.at(t, c) >= lo - 1e-10);
                CHECK(out.at(t, c) <= hi + 1e-10);
            }
        }
    }
}

TEST_CASE("reversing the token sequence reverses the output") {
    std::mt19937_64 rng(8);
    const std::size_t n = 17;
    const Tensor k = randn(rng, {n, 3});
    const Tensor v = randn(rng, {n, 3});
    const Tensor w = randn(rng, {3});
    const Tensor u = randn(rng, {3});
    Tensor kr({n, 3}), vr({n, 3});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < 3; ++c) {
            kr.at(i, c) = k.at(n - 1 - i, c);
            vr.at(i, c) = v.at(n - 1 - i, c);
        }
    const Tensor out = wkv_scan(k, v, w, u);
    const Tensor out_r = wkv_scan(kr, vr, w, u);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < 3; ++c) CHECK(out.at(i, c) == out_r.at(n - 1 - i, c));
}

TEST_CASE("measured operation counts: scan linear, naive quadratic") {
    std::mt19937_64 rng(9);
    std::vector<double> ns, scan_ops, naive_ops;
    for (std::size_t n : {64, 128, 256, 512, 1024, 2048, 4096}) {
        const Tensor k = randn(rng, {n, 2});
        const Tensor v = randn(rng, {n, 2});
        const Tensor w = randn(rng, {2}, 0.5);
        const Tensor u = randn(rng, {2}, 0.5);
        opcount::reset();
        wkv_scan(k, v, w, u);
        scan_ops.push_back(static_cast<double>(opcount::value()));
        if (n <= 1024) {
            opcount::reset();
            wkv_naive(k, v, w, u);
            naive_ops.push_back(static_cast<double>(opcount::value()));
        }
        ns.push_back(static_cast<double>(n));
    }
    const double scan_slope = fit_loglog_slope(ns, scan_ops);
    CHECK(scan_slope >= 0.95);
    CHECK(scan_slope <= 1.05);
    const std::vector<double> ns_small(ns.begin(), ns.begin() + 5);
    const double naive_slope = fit_loglog_slope(ns_small, naive_ops);
    CHECK(naive_slope >= 1.9);
    CHECK(naive_slope <= 2.1);
}

TEST_CASE("wkv pullback vs finite differences") {
    std::mt19937_64 rng(10);
    const Tensor k = randn(rng, {6, 3});
    const Tensor v = randn(rng, {6, 3});
    const Tensor w = randn(rng, {3}, 0.5);
    const Tensor u = randn(rng, {3}, 0.5);
    Tensor weights = randn(rng, {6, 3});
    const std::vector<Tensor> analytic = wkv_vjp(k, v, w, u).pullback(weights);
    auto f = [&weights](const std::vector<Tensor>& in) {
        return test::sum(elementwise_mul(wkv_scan(in[0], in[1], in[2], in[3]), weights));
    };
    CHECK(test::gradcheck_against(f, {k, v, w, u}, analytic) <= 1e-6);
}

TEST_CASE("spatial mix: shape contract, gate saturation, gradients") {
    std::mt19937_64 rng(11);
    WkvParams p = WkvParams::init(6, rng);
    const TokenGrid zero{Tensor({4, 6}), 2, 2};
    const Tensor out_zero = spatial_mix(zero, p);
    CHECK(out_zero.all_finite());
    CHECK(out_zero.shape() == std::vector<std::size_t>{4, 6});

    // saturate the gate: output approaches residual + out-projection of wkv
    const TokenGrid x{randn(rng, {4, 6}), 2, 2};
    WkvParams saturated = p;
    for (std::size_t i = 0; i < saturated.recept.bias->size(); ++i)
        (*saturated.recept.bias)[i] = 1e3;
    Tensor tap;
    const Tensor out_sat = spatial_mix(x, saturated, &tap);
    const Tensor h = layer_norm(x.tokens, saturated.norm_gain, saturated.norm_shift);
    const Tensor expected =
        add(linear_apply(wkv_scan(linear_apply(h, saturated.key), linear_apply(h, saturated.value),
                                  saturated.decay, saturated.bonus),
                         saturated.out),
            x.tokens);
    CHECK(max_abs_diff(out_sat, expected) <= 1e-10);
    CHECK(tap.shape() == std::vector<std::size_t>{4, 6});

    // gradient check over the input and every parameter
    std::vector<Tensor*> ptrs;
    p.collect(ptrs);
    std::vector<Tensor> inputs = test::snapshot(ptrs);
    inputs.insert(inputs.begin(), x.tokens);
    WkvParams work = p;
    std::vector<Tensor*> work_ptrs;
    work.collect(work_ptrs);
    auto f = [&](const std::vector<Tensor>& in) {
        test::restore(work_ptrs, {in.begin() + 1, in.end()});
        return test::sum(spatial_mix(TokenGrid{in[0], 2, 2}, work));
    };
    SpatialMixCache cache;
    const Tensor out = spatial_mix_train(x, p, cache);
    WkvParams grads = zeros_like(p);
    Tensor g_x;
    spatial_mix_backward(cache, Tensor::full(out.shape(), 1.0), nullptr, g_x, grads);
    std::vector<Tensor*> grad_ptrs;
    grads.collect(grad_ptrs);
    std::vector<Tensor> analytic = test::snapshot(grad_ptrs);
    analytic.insert(analytic.begin(), g_x);
    CHECK(test::gradcheck_against(f, inputs, analytic) <= 1e-4);
}

TEST_CASE("channel mix: dead ReLU region, sigmoid(0) gate, gradients") {
    std::mt19937_64 rng(12);
    ChannelMixParams p = ChannelMixParams::init(4, rng);
    const TokenGrid x{randn(rng, {3, 4}), 3, 1};

    // all-negative keys kill the squared ReLU: output = x + 0.5-gated value bias
    ChannelMixParams dead = p;
    for (std::size_t i = 0; i < dead.key.weight.size(); ++i) dead.key.weight[i] = 0.0;
    for (std::size_t i = 0; i < dead.key.bias->size(); ++i) (*dead.key.bias)[i] = -1e3;
    dead.value.bias = randn(rng, {4});
    const TokenGrid xn{Tensor({3, 4}), 3, 1};
    const Tensor out_dead = channel_mix(xn, dead);
    // relu_sq(K_c) = 0, so V_c reduces to the value bias; gate logits are the
    // receptance bias (zero here), so sigmoid = 0.5
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 4; ++j)
            CHECK(out_dead.at(i, j) ==
                  doctest::Approx(0.5 * (*dead.value.bias)[j]).epsilon(1e-12));

    ChannelMixParams half = p;
    for (std::size_t i = 0; i < half.recept.weight.size(); ++i) half.recept.weight[i] = 0.0;
    for (std::size_t i = 0; i < half.recept.bias->size(); ++i) (*half.recept.bias)[i] = 0.0;
    const Tensor h = layer_norm(x.tokens, half.norm_gain, half.norm_shift);
    const Tensor vc = linear_apply(relu_sq(linear_apply(h, half.key)), half.value);
    const Tensor expected = add(scale(vc, 0.5), x.tokens);
    CHECK(max_abs_diff(channel_mix(x, half), expected) <= 1e-12);

    std::vector<Tensor*> ptrs;
    p.collect(ptrs);
    std::vector<Tensor> inputs = test::snapshot(ptrs);
    inputs.insert(inputs.begin(), x.tokens);
    ChannelMixParams work = p;
    std::vector<Tensor*> work_ptrs;
    work.collect(work_ptrs);
    auto f = [&](const std::vector<Tensor>& in) {
        test::restore(work_ptrs, {in.begin() + 1, in.end()});
        return test::sum(channel_mix(TokenGrid{in[0], 3, 1}, work));
    };
    ChannelMixCache cache;
    const Tensor out = channel_mix_train(x, p, cache);
    ChannelMixParams grads = zeros_like(p);
    Tensor g_x;
    channel_mix_backward(cache, Tensor::full(out.shape(), 1.0), g_x, grads);
    std::vector<Tensor*> grad_ptrs;
    grads.collect(grad_ptrs);
    std::vector<Tensor> analytic = test::snapshot(grad_ptrs);
    analytic.insert(analytic.begin(), g_x);
    CHECK(test::gradcheck_against(f, inputs, analytic) <= 1e-4);
}

TEST_CASE("wkv layer composes the two mixes and taps the wkv output") {
    std::mt19937_64 rng(13);
    const WkvLayerParams p = WkvLayerParams::init(4, rng);
    const TokenGrid x{randn(rng, {49, 4}), 7, 7};

    Tensor tap;
    const TokenGrid out = wkv_layer(x, p, &tap);
    CHECK(out.tokens.shape() == x.tokens.shape());
    CHECK(out.height == 7);
    CHECK(out.width == 7);

    const TokenGrid mid{spatial_mix(x, p.spatial), 7, 7};
    const Tensor expected = channel_mix(mid, p.channel);
    CHECK(max_abs_diff(out.tokens, expected) == 0.0);

    // tap point is the spatial-mix wkv output (post-attention, pre-gate)
    const Tensor h = layer_norm(x.tokens, p.spatial.norm_gain, p.spatial.norm_shift);
    const Tensor wkv_expected =
        wkv_scan(linear_apply(h, p.spatial.key), linear_apply(h, p.spatial.value),
                 p.spatial.decay, p.spatial.bonus);
    CHECK(max_abs_diff(tap, wkv_expected) == 0.0);
}

TEST_CASE("wkv layer end-to-end gradcheck including the tap cotangent") {
    std::mt19937_64 rng(14);
    WkvLayerParams p = WkvLayerParams::init(6, rng);
    const TokenGrid x{randn(rng, {4, 6}), 2, 2};
    Tensor tap_weights = randn(rng, {4, 6});

    // f = sum(layer(x)) + <tap_weights, tap>: exercises the extra cotangent path
    std::vector<Tensor*> ptrs;
    p.collect(ptrs);
    std::vector<Tensor> inputs = test::snapshot(ptrs);
    inputs.insert(inputs.begin(), x.tokens);
    WkvLayerParams work = p;
    std::vector<Tensor*> work_ptrs;
    work.collect(work_ptrs);
    auto f = [&](const std::vector<Tensor>& in) {
        test::restore(work_ptrs, {in.begin() + 1, in.end()});
        Tensor tap;
        const TokenGrid out = wkv_layer(TokenGrid{in[0], 2, 2}, work, &tap);
        return test::sum(out.tokens) + test::sum(elementwise_mul(tap, tap_weights));
    };
    WkvLayerCache cache;
    const TokenGrid out = wkv_layer_train(x, p, cache);
    WkvLayerParams grads = zeros_like(p);
    Tensor g_x;
    wkv_layer_backward(cache, Tensor::full(out.tokens.shape(), 1.0), &tap_weights, g_x, grads);
    std::vector<Tensor*> grad_ptrs;
    grads.collect(grad_ptrs);
    std::vector<Tensor> analytic = test::snapshot(grad_ptrs);
    analytic.insert(analytic.begin(), g_x);
    CHECK(test::gradcheck_against(f, inputs, analytic, 0, 99) <= 1e-4);
}

}  // TEST_SUITE
