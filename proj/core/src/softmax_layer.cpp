#include "sola/softmax_layer.hpp"

#include <cmath>
#include <stdexcept>

namespace sola {

namespace {
Tensor columns(const Tensor& x, std::size_t c0, std::size_t c1) {
    const std::size_t n = x.extent(0), m = c1 - c0;
    Tensor out({n, m});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) out.at(i, j) = x.at(i, c0 + j);
    return out;
}

void add_columns(Tensor& dst, const Tensor& src, std::size_t c0) {
    const std::size_t n = src.extent(0), m = src.extent(1);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) dst.at(i, c0 + j) += src.at(i, j);
}

std::size_t head_dim(std::size_t dim, std::size_t heads) {
    if (heads == 0 || dim % heads != 0)
        throw std::invalid_argument("mhsa: dim " + std::to_string(dim) +
                                    " not divisible by head count " + std::to_string(heads));
    return dim / heads;
}

Tensor grid_view(const Tensor& tokens, std::size_t h, std::size_t w) {
    return Tensor({h, w, tokens.extent(1)}, tokens.values());
}

Tensor token_view(const Tensor& grid) {
    return Tensor({grid.extent(0) * grid.extent(1), grid.extent(2)}, grid.values());
}

Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
    Tensor y = x;
    const std::size_t c = bias.size();
    const std::size_t cells = y.size() / c;
    for (std::size_t i = 0; i < cells; ++i)
        for (std::size_t j = 0; j < c; ++j) y[i * c + j] += bias[j];
    return y;
}

Tensor channel_sums(const Tensor& g, std::size_t c) {
    Tensor sums({c});
    const std::size_t cells = g.size() / c;
    for (std::size_t i = 0; i < cells; ++i)
        for (std::size_t j = 0; j < c; ++j) sums[j] += g[i * c + j];
    return sums;
}

void accumulate(Tensor& into, const Tensor& g) {
    for (std::size_t i = 0; i < into.size(); ++i) into[i] += g[i];
}

void accumulate_linear(LinearProjection& grads, const std::vector<Tensor>& pulled) {
    accumulate(grads.weight, pulled[1]);
    if (grads.bias) accumulate(*grads.bias, pulled[2]);
}
}  // namespace

MhsaParams MhsaParams::init(std::size_t dim, std::size_t heads, std::mt19937_64& rng) {
    head_dim(dim, heads);
    MhsaParams p;
    p.heads = heads;
    p.norm_gain = Tensor::full({dim}, 1.0);
    p.norm_shift = Tensor({dim});
    p.qkv = LinearProjection::init(dim, 3 * dim, rng);
    p.out = LinearProjection::init(dim, dim, rng);
    return p;
}

void MhsaParams::collect(std::vector<Tensor*>& dst) {
    dst.push_back(&norm_gain);
    dst.push_back(&norm_shift);
    for (LinearProjection* proj : {&qkv, &out}) {
        dst.push_back(&proj->weight);
        if (proj->bias) dst.push_back(&*proj->bias);
    }
}

ConvMlpParams ConvMlpParams::init(std::size_t dim, std::size_t ratio, std::mt19937_64& rng) {
    if (ratio < 1) throw std::invalid_argument("conv_mlp: expansion ratio must be >= 1");
    ConvMlpParams p;
    p.norm_gain = Tensor::full({dim}, 1.0);
    p.norm_shift = Tensor({dim});
    p.up = LinearProjection::init(dim, dim * ratio, rng);
    p.conv_kernel = randn(rng, {3, 3, dim * ratio}, 1.0 / 3.0);
    p.conv_bias = Tensor({dim * ratio});
    p.down = LinearProjection::init(dim * ratio, dim, rng);
    return p;
}

void ConvMlpParams::collect(std::vector<Tensor*>& dst) {
    dst.push_back(&norm_gain);
    dst.push_back(&norm_shift);
    dst.push_back(&up.weight);
    if (up.bias) dst.push_back(&*up.bias);
    dst.push_back(&conv_kernel);
    dst.push_back(&conv_bias);
    dst.push_back(&down.weight);
    if (down.bias) dst.push_back(&*down.bias);
}

SoftmaxLayerParams SoftmaxLayerParams::init(std::size_t dim, std::size_t heads,
                                            std::size_t mlp_ratio, std::mt19937_64& rng) {
    SoftmaxLayerParams p;
    p.attn = MhsaParams::init(dim, heads, rng);
    p.mlp = ConvMlpParams::init(dim, mlp_ratio, rng);
    return p;
}

void SoftmaxLayerParams::collect(std::vector<Tensor*>& dst) {
    attn.collect(dst);
    mlp.collect(dst);
}

Tensor mhsa(const TokenGrid& x, const MhsaParams& p) {
    x.validate();
    const std::size_t d = x.dim();
    const std::size_t dh = head_dim(d, p.heads);
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const Tensor h = layer_norm(x.tokens, p.norm_gain, p.norm_shift);
    const Tensor qkv = linear_apply(h, p.qkv);
    Tensor attn({x.count(), d});
    for (std::size_t head = 0; head < p.heads; ++head) {
        const std::size_t c0 = head * dh;
        const Tensor q = columns(qkv, c0, c0 + dh);
        const Tensor k = columns(qkv, d + c0, d + c0 + dh);
        const Tensor v = columns(qkv, 2 * d + c0, 2 * d + c0 + dh);
        const Tensor weights = softmax_rows(scale(matmul(q, transpose(k)), att_scale));
        add_columns(attn, matmul(weights, v), c0);
    }
    return add(linear_apply(attn, p.out), x.tokens);
}

Tensor mhsa_train(const TokenGrid& x, const MhsaParams& p, MhsaCache& cache) {
    x.validate();
    const std::size_t d = x.dim();
    const std::size_t dh = head_dim(d, p.heads);
    cache.heads = p.heads;
    cache.scale = 1.0 / std::sqrt(static_cast<double>(dh));
    cache.head_q.clear();
    cache.head_k.clear();
    cache.head_v.clear();
    cache.head_attn.clear();
    cache.head_softmax.clear();

    Differentiable ln = layer_norm_vjp(x.tokens, p.norm_gain, p.norm_shift);
    Differentiable qkv = linear_vjp(ln.value, p.qkv);
    Tensor attn({x.count(), d});
    for (std::size_t head = 0; head < p.heads; ++head) {
        const std::size_t c0 = head * dh;
        Tensor q = columns(qkv.value, c0, c0 + dh);
        Tensor k = columns(qkv.value, d + c0, d + c0 + dh);
        Tensor v = columns(qkv.value, 2 * d + c0, 2 * d + c0 + dh);
        Differentiable sm = softmax_rows_vjp(scale(matmul(q, transpose(k)), cache.scale));
        add_columns(attn, matmul(sm.value, v), c0);
        cache.head_q.push_back(std::move(q));
        cache.head_k.push_back(std::move(k));
        cache.head_v.push_back(std::move(v));
        cache.head_attn.push_back(sm.value);
        cache.head_softmax.push_back(sm.pullback);
    }
    Differentiable out = linear_vjp(attn, p.out);
    cache.ln = ln.pullback;
    cache.qkv = qkv.pullback;
    cache.out = out.pullback;
    return add(out.value, x.tokens);
}

void mhsa_backward(const MhsaCache& cache, const Tensor& g_y, Tensor& g_x, MhsaParams& grads) {
    std::vector<Tensor> out_pulled = cache.out(g_y);
    accumulate_linear(grads.out, out_pulled);
    const Tensor& g_attn = out_pulled[0];
    const std::size_t d = g_attn.extent(1);
    const std::size_t dh = d / cache.heads;
    Tensor g_qkv({g_attn.extent(0), 3 * d});
    for (std::size_t head = 0; head < cache.heads; ++head) {
        const std::size_t c0 = head * dh;
        const Tensor g_out = columns(g_attn, c0, c0 + dh);
        const Tensor& weights = cache.head_attn[head];
        const Tensor g_weights = matmul(g_out, transpose(cache.head_v[head]));
        const Tensor g_v = matmul(transpose(weights), g_out);
        const Tensor g_scores = cache.head_softmax[head](g_weights)[0];
        const Tensor g_q = scale(matmul(g_scores, cache.head_k[head]), cache.scale);
        const Tensor g_k = scale(matmul(transpose(g_scores), cache.head_q[head]), cache.scale);
        add_columns(g_qkv, g_q, c0);
        add_columns(g_qkv, g_k, d + c0);
        add_columns(g_qkv, g_v, 2 * d + c0);
    }
    std::vector<Tensor> qkv_pulled = cache.qkv(g_qkv);
    accumulate_linear(grads.qkv, qkv_pulled);
    std::vector<Tensor> ln_pulled = cache.ln(qkv_pulled[0]);
    accumulate(grads.norm_gain, ln_pulled[1]);
    accumulate(grads.norm_shift, ln_pulled[2]);
    g_x = add(ln_pulled[0], g_y);
}

Tensor conv_mlp(const TokenGrid& x, const ConvMlpParams& p) {
    x.validate();
    const Tensor h = layer_norm(x.tokens, p.norm_gain, p.norm_shift);
    const Tensor up = linear_apply(h, p.up);
    const Tensor conv = add_channel_bias(
        depthwise_conv3x3(grid_view(up, x.height, x.width), p.conv_kernel), p.conv_bias);
    const Tensor act = gelu(token_view(conv));
    return add(linear_apply(act, p.down), x.tokens);
}

Tensor conv_mlp_train(const TokenGrid& x, const ConvMlpParams& p, ConvMlpCache& cache) {
    x.validate();
    cache.height = x.height;
    cache.width = x.width;
    Differentiable ln = layer_norm_vjp(x.tokens, p.norm_gain, p.norm_shift);
    Differentiable up = linear_vjp(ln.value, p.up);
    Differentiable conv = depthwise_conv3x3_vjp(grid_view(up.value, x.height, x.width),
                                                p.conv_kernel);
    Differentiable act = gelu_vjp(token_view(add_channel_bias(conv.value, p.conv_bias)));
    Differentiable down = linear_vjp(act.value, p.down);
    cache.ln = ln.pullback;
    cache.up = up.pullback;
    cache.conv = conv.pullback;
    cache.act = act.pullback;
    cache.down = down.pullback;
    return add(down.value, x.tokens);
}

void conv_mlp_backward(const ConvMlpCache& cache, const Tensor& g_y, Tensor& g_x,
                       ConvMlpParams& grads) {
    std::vector<Tensor> down_pulled = cache.down(g_y);
    accumulate_linear(grads.down, down_pulled);
    std::vector<Tensor> act_pulled = cache.act(down_pulled[0]);
    const Tensor& g_conv_out = act_pulled[0];
    accumulate(grads.conv_bias, channel_sums(g_conv_out, grads.conv_bias.size()));
    std::vector<Tensor> conv_pulled =
        cache.conv(grid_view(g_conv_out, cache.height, cache.width));
    accumulate(grads.conv_kernel, conv_pulled[1]);
    std::vector<Tensor> up_pulled = cache.up(token_view(conv_pulled[0]));
    accumulate_linear(grads.up, up_pulled);
    std::vector<Tensor> ln_pulled = cache.ln(up_pulled[0]);
    accumulate(grads.norm_gain, ln_pulled[1]);
    accumulate(grads.norm_shift, ln_pulled[2]);
    g_x = add(ln_pulled[0], g_y);
}

TokenGrid softmax_layer(const TokenGrid& x, const SoftmaxLayerParams& p) {
    TokenGrid mid{mhsa(x, p.attn), x.height, x.width};
    return TokenGrid{conv_mlp(mid, p.mlp), x.height, x.width};
}

TokenGrid softmax_layer_train(const TokenGrid& x, const SoftmaxLayerParams& p,
                              SoftmaxLayerCache& cache) {
    TokenGrid mid{mhsa_train(x, p.attn, cache.attn), x.height, x.width};
    return TokenGrid{conv_mlp_train(mid, p.mlp, cache.mlp), x.height, x.width};
}

void softmax_layer_backward(const SoftmaxLayerCache& cache, const Tensor& g_y, Tensor& g_x,
                            SoftmaxLayerParams& grads) {
    Tensor g_mid;
    conv_mlp_backward(cache.mlp, g_y, g_mid, grads.mlp);
    mhsa_backward(cache.attn, g_mid, g_x, grads.attn);
}

}  // namespace sola
