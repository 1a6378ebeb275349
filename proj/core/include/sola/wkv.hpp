#pragma once

#include <functional>
#include <random>

#include "sola/ops.hpp"
#include "sola/tensor.hpp"

namespace sola {

/// Channel-mix hidden expansion (R: D->D, K: D->ratio*D, V: ratio*D->D).
inline constexpr std::size_t kChannelMixRatio = 4;

/// Tokens of one feature map, flattened row-major; tokens = height * width.
struct TokenGrid {
    Tensor tokens;  // [N x D]
    std::size_t height = 0;
    std::size_t width = 0;

    std::size_t count() const { return tokens.extent(0); }
    std::size_t dim() const { return tokens.extent(1); }
    void validate() const;
};

/// Bidirectional WKV attention, literal double-loop form with per-token
/// running-max subtraction. k, v are [N x d]; w (decay) and u (bonus) are [d].
/// Serves as the oracle for the scan.
Tensor wkv_naive(const Tensor& k, const Tensor& v, const Tensor& w, const Tensor& u);

/// Same map in O(N*d): one forward and one backward cumulative pass per
/// channel, each carrying (numerator, denominator, max-exponent) triples,
/// combined with the diagonal bonus term.
Tensor wkv_scan(const Tensor& k, const Tensor& v, const Tensor& w, const Tensor& u);

/// Scan-valued forward plus a pullback returning {g_k, g_v, g_w, g_u}.
Differentiable wkv_vjp(const Tensor& k, const Tensor& v, const Tensor& w, const Tensor& u);

struct WkvParams {
    Tensor norm_gain, norm_shift;
    LinearProjection recept, key, value, out;  // all D -> D
    Tensor decay, bonus;                       // [D]

    static WkvParams init(std::size_t dim, std::mt19937_64& rng);
    void collect(std::vector<Tensor*>& dst);
    std::size_t dim() const { return decay.size(); }
};

struct ChannelMixParams {
    Tensor norm_gain, norm_shift;
    LinearProjection recept;  // D -> D
    LinearProjection key;     // D -> ratio*D
    LinearProjection value;   // ratio*D -> D, applied after ReLU^2

    static ChannelMixParams init(std::size_t dim, std::mt19937_64& rng,
                                 std::size_t ratio = kChannelMixRatio);
    void collect(std::vector<Tensor*>& dst);
};

struct WkvLayerParams {
    WkvParams spatial;
    ChannelMixParams channel;

    static WkvLayerParams init(std::size_t dim, std::mt19937_64& rng);
    void collect(std::vector<Tensor*>& dst);
};

using Pullback = std::function<std::vector<Tensor>(const Tensor&)>;

struct SpatialMixCache {
    Pullback ln, recept, key, value, wkv, gate, mix, out;
    Tensor wkv_out;  // the layer's tappable hidden state (post-attention, pre-gate)
};

struct ChannelMixCache {
    Pullback ln, recept, key, act, value, gate, mix;
};

struct WkvLayerCache {
    SpatialMixCache spatial;
    ChannelMixCache channel;
};

/// LN -> R/K/V projections -> wkv_scan -> sigmoid(R) gate -> out projection
/// -> residual. Forward-only.
Tensor spatial_mix(const TokenGrid& x, const WkvParams& p, Tensor* tap = nullptr);
Tensor spatial_mix_train(const TokenGrid& x, const WkvParams& p, SpatialMixCache& cache);
/// g_tap, when present, is the cotangent arriving at the tapped wkv output.
void spatial_mix_backward(const SpatialMixCache& cache, const Tensor& g_y, const Tensor* g_tap,
                          Tensor& g_x, WkvParams& grads);

/// LN -> R/K -> V = proj_v(ReLU^2(K)) -> sigmoid(R) .* V -> residual.
Tensor channel_mix(const TokenGrid& x, const ChannelMixParams& p);
Tensor channel_mix_train(const TokenGrid& x, const ChannelMixParams& p, ChannelMixCache& cache);
void channel_mix_backward(const ChannelMixCache& cache, const Tensor& g_y, Tensor& g_x,
                          ChannelMixParams& grads);

/// channel_mix(spatial_mix(x)); shape preserving.
TokenGrid wkv_layer(const TokenGrid& x, const WkvLayerParams& p, Tensor* tap = nullptr);
TokenGrid wkv_layer_train(const TokenGrid& x, const WkvLayerParams& p, WkvLayerCache& cache);
void wkv_layer_backward(const WkvLayerCache& cache, const Tensor& g_y, const Tensor* g_tap,
                        Tensor& g_x, WkvLayerParams& grads);

/// Zero-filled copy of a params struct (gradient accumulator).
template <typename Params>
Params zeros_like(const Params& src) {
    Params copy = src;
    std::vector<Tensor*> tensors;
    copy.collect(tensors);
    for (Tensor* t : tensors)
        for (std::size_t i = 0; i < t->size(); ++i) (*t)[i] = 0.0;
    return copy;
}

}  // namespace sola
