#include <doctest.h>

#include <stdexcept>

#include <cmath>
#include <numeric>
#include <random>

#include "sola/attention.hpp"
#include "sola/flops.hpp"
#include "sola/softmax_layer.hpp"
#include "test_util.hpp"

using namespace sola;

TEST_SUITE("softmax_layer") {

TEST_CASE("single-head mhsa with identity projections matches softmax attention") {
    std::mt19937_64 rng(1);
    const std::size_t d = 4;
    MhsaParams p = MhsaParams::init(d, 1, rng);
    // qkv = [I I I], out = I, all biases zero
    p.qkv.weight = Tensor({d, 3 * d});
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t blk = 0; blk < 3; ++blk) p.qkv.weight.at(i, blk * d + i) = 1.0;
    for (std::size_t i = 0; i < p.qkv.bias->size(); ++i) (*p.qkv.bias)[i] = 0.0;
    p.out.weight = Tensor::identity(d);
    for (std::size_t i = 0; i < p.out.bias->size(); ++i) (*p.out.bias)[i] = 0.0;

    const TokenGrid x{randn(rng, {6, d}), 2, 3};
    const Tensor got = mhsa(x, p);

    const Tensor h = layer_norm(x.tokens, p.norm_gain, p.norm_shift);
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(d));
    const Tensor expected =
        add(softmax_attention({scale(h, att_scale), h, h}), x.tokens);
    CHECK(max_abs_diff(got, expected) <= 1e-12);
}

TEST_CASE("mhsa with one token keeps the residual structure") {
    std::mt19937_64 rng(2);
    const MhsaParams p = MhsaParams::init(8, 2, rng);
    const TokenGrid x{randn(rng, {1, 8}), 1, 1};
    const Tensor out = mhsa(x, p);
    // attention over one token returns its value row; output = x + out_proj(v)
    const Tensor h = layer_norm(x.tokens, p.norm_gain, p.norm_shift);
    const Tensor qkv = linear_apply(h, p.qkv);
    Tensor v({1, 8});
    for (std::size_t j = 0; j < 8; ++j) v.at(0, j) = qkv.at(0, 16 + j);
    const Tensor expected = add(linear_apply(v, p.out), x.tokens);
    CHECK(max_abs_diff(out, expected) <= 1e-12);
}

TEST_CASE("head divisibility violations are configuration errors") {
    std::mt19937_64 rng(3);
    CHECK_THROWS_AS(MhsaParams::init(6, 4, rng), std::invalid_argument);
    MhsaParams p = MhsaParams::init(8, 2, rng);
    p.heads = 3;
    const TokenGrid x{randn(rng, {2, 8}), 1, 2};
    CHECK_THROWS_AS(mhsa(x, p), std::invalid_argument);
}

TEST_CASE("the mhsa sub-block is permutation-equivariant") {
    std::mt19937_64 rng(4);
    const MhsaParams p = MhsaParams::init(8, 2, rng);
    const std::size_t n = 12;
    const TokenGrid x{randn(rng, {n, 8}), 3, 4};

    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);

    Tensor permuted({n, 8});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < 8; ++j) permuted.at(i, j) = x.tokens.at(perm[i], j);

    const Tensor base = mhsa(x, p);
    const Tensor shuffled = mhsa(TokenGrid{permuted, 3, 4}, p);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < 8; ++j)
            CHECK(std::abs(shuffled.at(i, j) - base.at(perm[i], j)) <= 1e-12);
}

TEST_CASE("conv mlp: delta kernel reduces to a plain MLP") {
    std::mt19937_64 rng(5);
    ConvMlpParams p = ConvMlpParams::init(4, 2, rng);
    p.conv_kernel = Tensor({3, 3, 8});
    for (std::size_t c = 0; c < 8; ++c) p.conv_kernel.at(1, 1, c) = 1.0;
    for (std::size_t c = 0; c < 8; ++c) p.conv_bias[c] = 0.0;

    const TokenGrid x{randn(rng, {6, 4}), 2, 3};
    const Tensor got = conv_mlp(x, p);
    const Tensor h = layer_norm(x.tokens, p.norm_gain, p.norm_shift);
    const Tensor expected =
        add(linear_apply(gelu(linear_apply(h, p.up)), p.down), x.tokens);
    CHECK(max_abs_diff(got, expected) == 0.0);
}

TEST_CASE("conv mlp preserves shape on a 7x7 grid") {
    std::mt19937_64 rng(6);
    const ConvMlpParams p = ConvMlpParams::init(96, 4, rng);
    const TokenGrid x{randn(rng, {49, 96}), 7, 7};
    const Tensor out = conv_mlp(x, p);
    CHECK(out.shape() == x.tokens.shape());
    CHECK(out.all_finite());
}

TEST_CASE("conv mlp rejects grid mismatches") {
    std::mt19937_64 rng(7);
    const ConvMlpParams p = ConvMlpParams::init(4, 2, rng);
    const TokenGrid bad{randn(rng, {6, 4}), 2, 2};  // 6 != 2*2
    CHECK_THROWS_AS(conv_mlp(bad, p), std::invalid_argument);
}

TEST_CASE("softmax layer equals its two sub-blocks called in sequence") {
    std::mt19937_64 rng(8);
    const SoftmaxLayerParams p = SoftmaxLayerParams::init(8, 2, 2, rng);
    const TokenGrid x{randn(rng, {9, 8}), 3, 3};
    const TokenGrid composed = softmax_layer(x, p);
    const TokenGrid mid{mhsa(x, p.attn), 3, 3};
    const Tensor expected = conv_mlp(mid, p.mlp);
    CHECK(max_abs_diff(composed.tokens, expected) == 0.0);
}

TEST_CASE("attention-matrix flop term grows quadratically in N") {
    std::vector<double> tokens, attn;
    for (std::size_t side : {8, 16, 32, 64}) {
        long long quad = 0;
        flops_softmax_layer(side * side, 64, 4, 2, &quad);
        tokens.push_back(static_cast<double>(side * side));
        attn.push_back(static_cast<double>(quad));
    }
    const double slope = fit_loglog_slope(tokens, attn);
    CHECK(slope >= 1.9);
    CHECK(slope <= 2.1);
}

TEST_CASE("attention weights per head per query sum to 1") {
    std::mt19937_64 rng(12);
    const MhsaParams p = MhsaParams::init(8, 2, rng);
    const TokenGrid x{randn(rng, {10, 8}), 2, 5};
    MhsaCache cache;
    mhsa_train(x, p, cache);
    REQUIRE(cache.head_attn.size() == 2);
    for (const Tensor& weights : cache.head_attn)
        for (std::size_t t = 0; t < 10; ++t) {
            double s = 0.0;
            for (std::size_t i = 0; i < 10; ++i) s += weights.at(t, i);
            CHECK(std::abs(s - 1.0) <= 1e-12);
        }
}

TEST_CASE("mhsa gradients vs finite differences") {
    std::mt19937_64 rng(9);
    MhsaParams p = MhsaParams::init(8, 2, rng);
    const TokenGrid x{randn(rng, {4, 8}), 2, 2};

    std::vector<Tensor*> ptrs;
    p.collect(ptrs);
    std::vector<Tensor> inputs = test::snapshot(ptrs);
    inputs.insert(inputs.begin(), x.tokens);
    MhsaParams work = p;
    std::vector<Tensor*> work_ptrs;
    work.collect(work_ptrs);
    auto f = [&](const std::vector<Tensor>& in) {
        test::restore(work_ptrs, {in.begin() + 1, in.end()});
        return test::sum(mhsa(TokenGrid{in[0], 2, 2}, work));
    };
    MhsaCache cache;
    const Tensor out = mhsa_train(x, p, cache);
    MhsaParams grads = zeros_like(p);
    Tensor g_x;
    mhsa_backward(cache, Tensor::full(out.shape(), 1.0), g_x, grads);
    std::vector<Tensor*> grad_ptrs;
    grads.collect(grad_ptrs);
    std::vector<Tensor> analytic = test::snapshot(grad_ptrs);
    analytic.insert(analytic.begin(), g_x);
    CHECK(test::gradcheck_against(f, inputs, analytic) <= 1e-4);
}

TEST_CASE("conv mlp gradients vs finite differences") {
    std::mt19937_64 rng(10);
    ConvMlpParams p = ConvMlpParams::init(4, 2, rng);
    const TokenGrid x{randn(rng, {9, 4}), 3, 3};

    std::vector<Tensor*> ptrs;
    p.collect(ptrs);
    std::vector<Tensor> inputs = test::snapshot(ptrs);
    inputs.insert(inputs.begin(), x.tokens);
    ConvMlpParams work = p;
    std::vector<Tensor*> work_ptrs;
    work.collect(work_ptrs);
    auto f = [&](const std::vector<Tensor>& in) {
        test::restore(work_ptrs, {in.begin() + 1, in.end()});
        return test::sum(conv_mlp(TokenGrid{in[0], 3, 3}, work));
    };
    ConvMlpCache cache;
    const Tensor out = conv_mlp_train(x, p, cache);
    ConvMlpParams grads = zeros_like(p);
    Tensor g_x;
    conv_mlp_backward(cache, Tensor::full(out.shape(), 1.0), g_x, grads);
    std::vector<Tensor*> grad_ptrs;
    grads.collect(grad_ptrs);
    std::vector<Tensor> analytic = test::snapshot(grad_ptrs);
    analytic.insert(analytic.begin(), g_x);
    CHECK(test::gradcheck_against(f, inputs, analytic) <= 1e-4);
}

TEST_CASE("full softmax layer gradcheck") {
    std::mt19937_64 rng(11);
    SoftmaxLayerParams p = SoftmaxLayerParams::init(8, 2, 2, rng);
    const TokenGrid x{randn(rng, {4, 8}), 2, 2};

    std::vector<Tensor*> ptrs;
    p.collect(ptrs);
    std::vector<Tensor> inputs = test::snapshot(ptrs);
    inputs.insert(inputs.begin(), x.tokens);
    SoftmaxLayerParams work = p;
    std::vector<Tensor*> work_ptrs;
    work.collect(work_ptrs);
    auto f = [&](const std::vector<Tensor>& in) {
        test::restore(work_ptrs, {in.begin() + 1, in.end()});
        return test::sum(softmax_layer(TokenGrid{in[0], 2, 2}, work).tokens);
    };
    SoftmaxLayerCache cache;
    const TokenGrid out = softmax_layer_train(x, p, cache);
    SoftmaxLayerParams grads = zeros_like(p);
    Tensor g_x;
    softmax_layer_backward(cache, Tensor::full(out.tokens.shape(), 1.0), g_x, grads);
    std::vector<Tensor*> grad_ptrs;
    grads.collect(grad_ptrs);
    std::vector<Tensor> analytic = test::snapshot(grad_ptrs);
    analytic.insert(analytic.begin(), g_x);
    CHECK(test::gradcheck_against(f, inputs, analytic) <= 1e-4);
}

}  // TEST_SUITE
