#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sola/config.hpp"

namespace sola {

/// Analytic operation counts, multiply-accumulate convention (one MAC = one
/// flop, the convention behind the usual vision-backbone GFLOP figures), plus
/// elementwise work for norms, activations, softmax and the wkv scan.
namespace flop_model {
inline constexpr long long kLayerNorm = 8;   // per element
inline constexpr long long kSigmoid = 4;
inline constexpr long long kGelu = 8;
inline constexpr long long kReluSq = 2;
inline constexpr long long kSoftmax = 5;     // per attention-matrix element
inline constexpr long long kWkvScan = 40;    // per token-channel, both passes + combine
}  // namespace flop_model

long long flops_stem(std::size_t tokens, std::size_t patch, std::size_t dim);
long long flops_patch_merge(std::size_t out_tokens, std::size_t in_dim, std::size_t out_dim);
long long flops_wkv_layer(std::size_t tokens, std::size_t dim);
/// `attn_matrix` receives the 2*N^2*D multiply-accumulate term alone.
long long flops_softmax_layer(std::size_t tokens, std::size_t dim, std::size_t mlp_ratio,
                              std::size_t heads, long long* attn_matrix = nullptr);
long long flops_hsb(std::size_t dst_tokens, std::size_t src_dim, std::size_t dst_dim);
long long flops_final_pool(std::size_t tokens, std::size_t dim);

struct FlopEntry {
    char kind = '?';  // 'E' stem, 'M' merge, 'L', 'S', 'H' bridge, 'F' final
    std::size_t stage = 0, layer = 0;  // 1-based where applicable
    std::size_t tokens = 0, dim = 0;
    long long flops = 0;
    long long attn_matrix = 0;
};

struct FlopReport {
    std::vector<FlopEntry> entries;
    long long total = 0;
    long long attn_matrix_total = 0;
};

/// Walks the stage geometry (with odd-grid padding at merges, mirroring the
/// forward pass) and tallies every component.
FlopReport count_flops_detailed(const BackboneConfig& cfg, std::size_t height, std::size_t width);

/// Total for a square input.
long long count_flops(const BackboneConfig& cfg, std::size_t resolution);

struct ScalingPoint {
    std::size_t resolution = 0;
    std::size_t tokens = 0;          // token count after the stem
    long long flops_config = 0;
    long long flops_full_softmax = 0;
};

/// FLOP totals for the config and its all-S variant at each resolution.
/// Resolutions must be divisible by the patch size.
std::vector<ScalingPoint> scaling_curve(const BackboneConfig& cfg,
                                        const std::vector<std::size_t>& resolutions);

/// Least-squares slope of log(y) against log(x).
double fit_loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace sola
