#include "sola/flops.hpp"

#include <cmath>
#include <stdexcept>

#include "sola/wkv.hpp"

namespace sola {

namespace fm = flop_model;

namespace {
long long ll(std::size_t v) { return static_cast<long long>(v); }
}

long long flops_stem(std::size_t tokens, std::size_t patch, std::size_t dim) {
    const long long n = ll(tokens), d = ll(dim);
    const long long patch_in = ll(patch) * ll(patch) * 3;
    return n * patch_in * d  // patch projection
           + 4 * n * d      // bilinear position resize (4 taps)
           + n * d;         // position add
}

long long flops_patch_merge(std::size_t out_tokens, std::size_t in_dim, std::size_t out_dim) {
    const long long n = ll(out_tokens), ci = 4 * ll(in_dim), co = ll(out_dim);
    return fm::kLayerNorm * n * ci + n * ci * co;
}

long long flops_wkv_layer(std::size_t tokens, std::size_t dim) {
    const long long n = ll(tokens), d = ll(dim);
    const long long hidden = d * ll(kChannelMixRatio);
    const long long spatial = fm::kLayerNorm * n * d       // pre-norm
                              + 4 * n * d * d              // R/K/V/out projections
                              + fm::kWkvScan * n * d       // scan recurrence
                              + fm::kSigmoid * n * d       // gate
                              + n * d                      // gate multiply
                              + n * d;                     // residual
    const long long channel = fm::kLayerNorm * n * d
                              + n * d * d                  // R projection
                              + n * d * hidden             // K projection
                              + fm::kReluSq * n * hidden
                              + n * hidden * d             // V projection
                              + fm::kSigmoid * n * d
                              + n * d                      // gate multiply
                              + n * d;                     // residual
    return spatial + channel;
}

long long flops_softmax_layer(std::size_t tokens, std::size_t dim, std::size_t mlp_ratio,
                              std::size_t heads, long long* attn_matrix) {
    const long long n = ll(tokens), d = ll(dim), r = ll(mlp_ratio);
    const long long quad = 2 * n * n * d;  // QK^T and A.V
    if (attn_matrix) *attn_matrix = quad;
    const long long attn = fm::kLayerNorm * n * d
                           + 3 * n * d * d               // qkv projection
                           + quad
                           + fm::kSoftmax * n * n * ll(heads)
                           + n * d * d                   // out projection
                           + n * d;                      // residual
    const long long mlp = fm::kLayerNorm * n * d
                          + r * n * d * d                // up projection
                          + 9 * n * r * d                // depthwise 3x3
                          + fm::kGelu * n * r * d
                          + r * n * d * d                // down projection
                          + n * d;                       // residual
    return attn + mlp;
}

long long flops_hsb(std::size_t dst_tokens, std::size_t src_dim, std::size_t dst_dim) {
    const long long t = ll(dst_tokens), cs = ll(src_dim), cd = ll(dst_dim);
    return t * cs * cd         // bridge projection
           + t * cd * cd       // gate projection
           + fm::kSigmoid * t * cd
           + 2 * t * cd;       // gate multiply + fuse add
}

long long flops_final_pool(std::size_t tokens, std::size_t dim) {
    return fm::kLayerNorm * ll(tokens) * ll(dim) + ll(tokens) * ll(dim);
}

FlopReport count_flops_detailed(const BackboneConfig& cfg, std::size_t height,
                                std::size_t width) {
    cfg.validate();
    if (height % cfg.patch_size != 0 || width % cfg.patch_size != 0)
        throw std::invalid_argument("count_flops: resolution " + std::to_string(height) + "x" +
                                    std::to_string(width) + " not divisible by patch size " +
                                    std::to_string(cfg.patch_size));
    FlopReport report;
    auto push = [&report](FlopEntry e) {
        report.total += e.flops;
        report.attn_matrix_total += e.attn_matrix;
        report.entries.push_back(e);
    };

    std::size_t gh = height / cfg.patch_size, gw = width / cfg.patch_size;
    push({'E', 0, 0, gh * gw, cfg.stem_dim, flops_stem(gh * gw, cfg.patch_size, cfg.stem_dim), 0});

    std::size_t prev_dim = cfg.stem_dim;
    for (std::size_t s = 0; s < 4; ++s) {
        const std::size_t dim = cfg.stage_dims[s];
        if (s > 0) {
            gh = (gh + 1) / 2;  // odd grids are zero-padded before merging
            gw = (gw + 1) / 2;
            push({'M', s + 1, 0, gh * gw, dim, flops_patch_merge(gh * gw, prev_dim, dim), 0});
        }
        const std::size_t tokens = gh * gw;
        for (std::size_t li = 0; li < cfg.patterns[s].size(); ++li) {
            for (const HsbRoute& r : cfg.hsb_routes) {
                if (r.dst_stage == s + 1 && r.dst_layer == li + 1)
                    push({'H', s + 1, li + 1, tokens, dim,
                          flops_hsb(tokens, cfg.stage_dims[r.src_stage - 1], dim), 0});
            }
            if (cfg.patterns[s][li] == 'L') {
                push({'L', s + 1, li + 1, tokens, dim, flops_wkv_layer(tokens, dim), 0});
            } else {
                long long quad = 0;
                const long long f = flops_softmax_layer(tokens, dim, cfg.mlp_ratio,
                                                        cfg.heads_for(dim), &quad);
                push({'S', s + 1, li + 1, tokens, dim, f, quad});
            }
        }
        prev_dim = dim;
    }
    push({'F', 0, 0, gh * gw, prev_dim, flops_final_pool(gh * gw, prev_dim), 0});
    return report;
}

long long count_flops(const BackboneConfig& cfg, std::size_t resolution) {
    return count_flops_detailed(cfg, resolution, resolution).total;
}

std::vector<ScalingPoint> scaling_curve(const BackboneConfig& cfg,
                                        const std::vector<std::size_t>& resolutions) {
    const BackboneConfig full_softmax = cfg.uniform_variant('S');
    std::vector<ScalingPoint> points;
    for (std::size_t res : resolutions) {
        ScalingPoint p;
        p.resolution = res;
        p.tokens = (res / cfg.patch_size) * (res / cfg.patch_size);
        p.flops_config = count_flops(cfg, res);
        p.flops_full_softmax = count_flops(full_softmax, res);
        points.push_back(p);
    }
    return points;
}

double fit_loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2)
        throw std::invalid_argument("fit_loglog_slope: need >= 2 matching points");
    const std::size_t n = x.size();
    double mx = 0.0, my = 0.0;
    std::vector<double> lx(n), ly(n);
    for (std::size_t i = 0; i < n; ++i) {
        lx[i] = std::log(x[i]);
        ly[i] = std::log(y[i]);
        mx += lx[i];
        my += ly[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sxy += (lx[i] - mx) * (ly[i] - my);
        sxx += (lx[i] - mx) * (lx[i] - mx);
    }
    return sxy / sxx;
}

}  // namespace sola
