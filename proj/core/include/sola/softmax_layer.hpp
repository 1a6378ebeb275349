#pragma once

#include <random>

#include "sola/ops.hpp"
#include "sola/wkv.hpp"

namespace sola {

struct MhsaParams {
    std::size_t heads = 1;
    Tensor norm_gain, norm_shift;
    LinearProjection qkv;  // D -> 3D
    LinearProjection out;  // D -> D

    static MhsaParams init(std::size_t dim, std::size_t heads, std::mt19937_64& rng);
    void collect(std::vector<Tensor*>& dst);
};

struct ConvMlpParams {
    Tensor norm_gain, norm_shift;
    LinearProjection up;    // D -> r*D
    Tensor conv_kernel;     // 3x3x(r*D) depthwise
    Tensor conv_bias;       // [r*D]
    LinearProjection down;  // r*D -> D

    static ConvMlpParams init(std::size_t dim, std::size_t ratio, std::mt19937_64& rng);
    void collect(std::vector<Tensor*>& dst);
};

struct SoftmaxLayerParams {
    MhsaParams attn;
    ConvMlpParams mlp;

    static SoftmaxLayerParams init(std::size_t dim, std::size_t heads, std::size_t mlp_ratio,
                                   std::mt19937_64& rng);
    void collect(std::vector<Tensor*>& dst);
};

struct MhsaCache {
    Pullback ln, qkv, out;
    std::vector<Pullback> head_softmax;
    std::vector<Tensor> head_q, head_k, head_v, head_attn;
    std::size_t heads = 0;
    double scale = 1.0;
};

struct ConvMlpCache {
    Pullback ln, up, conv, act, down;
    std::size_t height = 0, width = 0;
};

struct SoftmaxLayerCache {
    MhsaCache attn;
    ConvMlpCache mlp;
};

/// Pre-norm multi-head self-attention over all N tokens (global, never
/// windowed), per-head scale 1/sqrt(D/heads), residual added.
Tensor mhsa(const TokenGrid& x, const MhsaParams& p);
Tensor mhsa_train(const TokenGrid& x, const MhsaParams& p, MhsaCache& cache);
void mhsa_backward(const MhsaCache& cache, const Tensor& g_y, Tensor& g_x, MhsaParams& grads);

/// LN -> up projection -> 3x3 depthwise conv on the HxW grid -> GELU ->
/// down projection -> residual.
Tensor conv_mlp(const TokenGrid& x, const ConvMlpParams& p);
Tensor conv_mlp_train(const TokenGrid& x, const ConvMlpParams& p, ConvMlpCache& cache);
void conv_mlp_backward(const ConvMlpCache& cache, const Tensor& g_y, Tensor& g_x,
                       ConvMlpParams& grads);

/// conv_mlp(mhsa(x)).
TokenGrid softmax_layer(const TokenGrid& x, const SoftmaxLayerParams& p);
TokenGrid softmax_layer_train(const TokenGrid& x, const SoftmaxLayerParams& p,
                              SoftmaxLayerCache& cache);
void softmax_layer_backward(const SoftmaxLayerCache& cache, const Tensor& g_y, Tensor& g_x,
                            SoftmaxLayerParams& grads);

}  // namespace sola
