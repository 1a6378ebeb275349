#include "sola/backbone.hpp"

#include <cmath>
#include <set>
#include <stdexcept>

namespace sola {

namespace {
void accumulate(Tensor& into, const Tensor& g) {
    for (std::size_t i = 0; i < into.size(); ++i) into[i] += g[i];
}

void accumulate_linear(LinearProjection& grads, const std::vector<Tensor>& pulled) {
    accumulate(grads.weight, pulled[1]);
    if (grads.bias) accumulate(*grads.bias, pulled[2]);
}

Tensor gather_rows(const Tensor& src, const std::vector<std::size_t>& indices) {
    const std::size_t d = src.extent(1);
    Tensor out({indices.size(), d});
    for (std::size_t i = 0; i < indices.size(); ++i)
        for (std::size_t j = 0; j < d; ++j) out.at(i, j) = src.at(indices[i], j);
    return out;
}

/// Four (source index, weight) taps per destination cell for a bilinear
/// resize from the square kPosGrid table to a gh x gw grid.
void bilinear_plan(std::size_t src_side, std::size_t gh, std::size_t gw,
                   std::vector<std::size_t>& index, std::vector<double>& weight) {
    index.clear();
    weight.clear();
    index.reserve(gh * gw * 4);
    weight.reserve(gh * gw * 4);
    const double s = static_cast<double>(src_side);
    for (std::size_t y = 0; y < gh; ++y) {
        double fy = (static_cast<double>(y) + 0.5) * s / static_cast<double>(gh) - 0.5;
        fy = std::min(std::max(fy, 0.0), s - 1.0);
        const std::size_t y0 = static_cast<std::size_t>(fy);
        const std::size_t y1 = std::min(y0 + 1, src_side - 1);
        const double wy = fy - static_cast<double>(y0);
        for (std::size_t x = 0; x < gw; ++x) {
            double fx = (static_cast<double>(x) + 0.5) * s / static_cast<double>(gw) - 0.5;
            fx = std::min(std::max(fx, 0.0), s - 1.0);
            const std::size_t x0 = static_cast<std::size_t>(fx);
            const std::size_t x1 = std::min(x0 + 1, src_side - 1);
            const double wx = fx - static_cast<double>(x0);
            index.push_back(y0 * src_side + x0);
            weight.push_back((1.0 - wy) * (1.0 - wx));
            index.push_back(y0 * src_side + x1);
            weight.push_back((1.0 - wy) * wx);
            index.push_back(y1 * src_side + x0);
            weight.push_back(wy * (1.0 - wx));
            index.push_back(y1 * src_side + x1);
            weight.push_back(wy * wx);
        }
    }
}

Tensor resize_pos_table(const Tensor& table, const std::vector<std::size_t>& index,
                        const std::vector<double>& weight, std::size_t tokens) {
    const std::size_t d = table.extent(1);
    Tensor out({tokens, d});
    for (std::size_t i = 0; i < tokens; ++i) {
        for (std::size_t tap = 0; tap < 4; ++tap) {
            const double w = weight[i * 4 + tap];
            if (w == 0.0) continue;
            const double* src = table.data() + index[i * 4 + tap] * d;
            double* dst = out.data() + i * d;
            for (std::size_t j = 0; j < d; ++j) dst[j] += w * src[j];
        }
    }
    return out;
}

Tensor build_patches(const Tensor& image, std::size_t patch) {
    const std::size_t h = image.extent(0), w = image.extent(1), c = image.extent(2);
    const std::size_t gh = h / patch, gw = w / patch;
    Tensor patches({gh * gw, patch * patch * c});
    for (std::size_t gy = 0; gy < gh; ++gy)
        for (std::size_t gx = 0; gx < gw; ++gx) {
            double* row = patches.data() + (gy * gw + gx) * patch * patch * c;
            std::size_t k = 0;
            for (std::size_t dy = 0; dy < patch; ++dy)
                for (std::size_t dx = 0; dx < patch; ++dx)
                    for (std::size_t ch = 0; ch < c; ++ch)
                        row[k++] = image.at(gy * patch + dy, gx * patch + dx, ch);
        }
    return patches;
}

TokenGrid pad_to_even(const TokenGrid& x) {
    const std::size_t h2 = x.height + x.height % 2, w2 = x.width + x.width % 2;
    if (h2 == x.height && w2 == x.width) return x;
    const std::size_t d = x.dim();
    Tensor padded({h2 * w2, d});
    for (std::size_t i = 0; i < x.height; ++i)
        for (std::size_t j = 0; j < x.width; ++j)
            for (std::size_t ch = 0; ch < d; ++ch)
                padded.at(i * w2 + j, ch) = x.tokens.at(i * x.width + j, ch);
    return TokenGrid{std::move(padded), h2, w2};
}

/// 2x2 neighborhood concatenation; input extents must be even.
Tensor merge_concat(const TokenGrid& x) {
    const std::size_t ho = x.height / 2, wo = x.width / 2, d = x.dim();
    Tensor cat({ho * wo, 4 * d});
    for (std::size_t i = 0; i < ho; ++i)
        for (std::size_t j = 0; j < wo; ++j) {
            double* row = cat.data() + (i * wo + j) * 4 * d;
            for (std::size_t q = 0; q < 4; ++q) {
                const std::size_t sy = 2 * i + (q >> 1), sx = 2 * j + (q & 1);
                const double* src = x.tokens.data() + (sy * x.width + sx) * d;
                for (std::size_t ch = 0; ch < d; ++ch) row[q * d + ch] = src[ch];
            }
        }
    return cat;
}
}  // namespace

PatchEmbedParams PatchEmbedParams::init(std::size_t patch, std::size_t dim,
                                        std::mt19937_64& rng) {
    PatchEmbedParams p;
    p.patch = patch;
    p.proj = LinearProjection::init(patch * patch * 3, dim, rng);
    p.pos_table = randn(rng, {kPosGrid * kPosGrid, dim}, 0.02);
    return p;
}

void PatchEmbedParams::collect(std::vector<Tensor*>& dst) {
    dst.push_back(&proj.weight);
    if (proj.bias) dst.push_back(&*proj.bias);
    dst.push_back(&pos_table);
}

PatchMergeParams PatchMergeParams::init(std::size_t in_dim, std::size_t out_dim,
                                        std::mt19937_64& rng) {
    PatchMergeParams p;
    p.norm_gain = Tensor::full({4 * in_dim}, 1.0);
    p.norm_shift = Tensor({4 * in_dim});
    p.reduce = LinearProjection::init(4 * in_dim, out_dim, rng);
    return p;
}

void PatchMergeParams::collect(std::vector<Tensor*>& dst) {
    dst.push_back(&norm_gain);
    dst.push_back(&norm_shift);
    dst.push_back(&reduce.weight);
    if (reduce.bias) dst.push_back(&*reduce.bias);
}

HsbParams HsbParams::init(std::size_t src_dim, std::size_t dst_dim, std::mt19937_64& rng) {
    HsbParams p;
    p.bridge = LinearProjection::init(src_dim, dst_dim, rng);
    p.gate = LinearProjection::init(dst_dim, dst_dim, rng);
    return p;
}

void HsbParams::collect(std::vector<Tensor*>& dst) {
    for (LinearProjection* proj : {&bridge, &gate}) {
        dst.push_back(&proj->weight);
        if (proj->bias) dst.push_back(&*proj->bias);
    }
}

std::vector<std::size_t> equidistant_indices(std::size_t n_src, std::size_t n_out) {
    if (n_out == 0 || n_out > n_src)
        throw std::invalid_argument("sample_equidistant: cannot select " + std::to_string(n_out) +
                                    " of " + std::to_string(n_src) + " tokens");
    std::vector<std::size_t> idx(n_out);
    for (std::size_t j = 0; j < n_out; ++j)
        idx[j] = static_cast<std::size_t>((static_cast<double>(j) + 0.5) *
                                          static_cast<double>(n_src) /
                                          static_cast<double>(n_out));
    return idx;
}

Tensor sample_equidistant(const Tensor& tokens, std::size_t n_out) {
    return gather_rows(tokens, equidistant_indices(tokens.extent(0), n_out));
}

TokenGrid patch_embed(const Tensor& image, const PatchEmbedParams& p) {
    if (image.rank() != 3 || image.extent(2) != 3)
        throw std::invalid_argument("patch_embed: image must be HxWx3, got " + image.shape_str());
    const std::size_t h = image.extent(0), w = image.extent(1);
    if (h % p.patch != 0 || w % p.patch != 0)
        throw std::invalid_argument("patch_embed: resolution " + std::to_string(h) + "x" +
                                    std::to_string(w) + " not divisible by patch size " +
                                    std::to_string(p.patch));
    const std::size_t gh = h / p.patch, gw = w / p.patch;
    Tensor tokens = linear_apply(build_patches(image, p.patch), p.proj);
    std::vector<std::size_t> index;
    std::vector<double> weight;
    bilinear_plan(PatchEmbedParams::kPosGrid, gh, gw, index, weight);
    tokens = add(tokens, resize_pos_table(p.pos_table, index, weight, gh * gw));
    return TokenGrid{std::move(tokens), gh, gw};
}

TokenGrid patch_merge(const TokenGrid& x, const PatchMergeParams& p) {
    x.validate();
    if (x.height % 2 != 0 || x.width % 2 != 0)
        throw std::invalid_argument("patch_merge: grid " + std::to_string(x.height) + "x" +
                                    std::to_string(x.width) + " has odd extents");
    const Tensor cat = merge_concat(x);
    const Tensor normed = layer_norm(cat, p.norm_gain, p.norm_shift);
    return TokenGrid{linear_apply(normed, p.reduce), x.height / 2, x.width / 2};
}

Tensor hidden_state_bridge(const Tensor& src_hidden, const Tensor& dst_input,
                           const HsbParams& p) {
    if (src_hidden.rank() != 2 || dst_input.rank() != 2)
        throw std::invalid_argument("hidden_state_bridge: rank-2 tensors required");
    if (src_hidden.extent(1) != p.bridge.in_dim() || dst_input.extent(1) != p.bridge.out_dim())
        throw std::invalid_argument("hidden_state_bridge: route dims (src " +
                                    src_hidden.shape_str() + ", dst " + dst_input.shape_str() +
                                    ") do not match bridge projection " +
                                    p.bridge.weight.shape_str());
    const Tensor sampled = sample_equidistant(src_hidden, dst_input.extent(0));
    const Tensor bridged = linear_apply(sampled, p.bridge);
    const Tensor gate = sigmoid(linear_apply(dst_input, p.gate));
    return add(dst_input, elementwise_mul(gate, bridged));
}

std::string ForwardTrace::layer_kind_string() const {
    std::string out;
    std::size_t current_stage = 0;
    for (const TraceRow& r : rows) {
        if (r.kind != 'L' && r.kind != 'S') continue;
        if (r.stage != current_stage) {
            if (current_stage != 0) out += '/';
            current_stage = r.stage;
        }
        out += r.kind;
    }
    return out;
}

Backbone Backbone::build(const BackboneConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Backbone model;
    model.cfg_ = cfg;
    std::mt19937_64 rng(seed);
    model.stem_ = PatchEmbedParams::init(cfg.patch_size, cfg.stem_dim, rng);
    std::size_t prev_dim = cfg.stem_dim;
    for (std::size_t s = 0; s < 4; ++s) {
        const std::size_t dim = cfg.stage_dims[s];
        Stage& stage = model.stages_[s];
        if (s > 0) stage.merge = PatchMergeParams::init(prev_dim, dim, rng);
        for (char kind : cfg.patterns[s]) {
            if (kind == 'L')
                stage.layers.emplace_back(WkvLayerParams::init(dim, rng));
            else
                stage.layers.emplace_back(
                    SoftmaxLayerParams::init(dim, cfg.heads_for(dim), cfg.mlp_ratio, rng));
        }
        prev_dim = dim;
    }
    model.final_gain_ = Tensor::full({prev_dim}, 1.0);
    model.final_shift_ = Tensor({prev_dim});
    // Bridge parameters are drawn last so that models differing only in
    // routes share every other weight for a given seed.
    for (const HsbRoute& r : cfg.hsb_routes)
        model.routes_.push_back(HsbParams::init(cfg.stage_dims[r.src_stage - 1],
                                                cfg.stage_dims[r.dst_stage - 1], rng));
    return model;
}

ForwardTrace Backbone::forward(const Tensor& image) const {
    ForwardTrace trace;
    std::set<std::pair<std::size_t, std::size_t>> tap_set;
    for (const HsbRoute& r : cfg_.hsb_routes) tap_set.insert({r.src_stage, r.src_layer});

    TokenGrid grid = patch_embed(image, stem_);
    trace.rows.push_back({'E', 0, 0, grid.height, grid.width, cfg_.stem_dim,
                          flops_stem(grid.count(), cfg_.patch_size, cfg_.stem_dim), 0});

    for (std::size_t s = 0; s < 4; ++s) {
        const std::size_t dim = cfg_.stage_dims[s];
        if (s > 0) {
            const std::size_t in_dim = grid.dim();
            grid = patch_merge(pad_to_even(grid), *stages_[s].merge);
            trace.rows.push_back({'M', s + 1, 0, grid.height, grid.width, dim,
                                  flops_patch_merge(grid.count(), in_dim, dim), 0});
        }
        for (std::size_t li = 0; li < cfg_.patterns[s].size(); ++li) {
            for (std::size_t ri = 0; ri < cfg_.hsb_routes.size(); ++ri) {
                const HsbRoute& r = cfg_.hsb_routes[ri];
                if (r.dst_stage != s + 1 || r.dst_layer != li + 1) continue;
                const Tensor& src = trace.taps.at({r.src_stage, r.src_layer});
                grid.tokens = hidden_state_bridge(src, grid.tokens, routes_[ri]);
                trace.rows.push_back({'H', s + 1, li + 1, grid.height, grid.width, dim,
                                      flops_hsb(grid.count(), src.extent(1), dim), 0});
            }
            if (cfg_.patterns[s][li] == 'L') {
                const bool want_tap = tap_set.count({s + 1, li + 1}) > 0;
                Tensor tap;
                grid = wkv_layer(grid, std::get<WkvLayerParams>(stages_[s].layers[li]),
                                 want_tap ? &tap : nullptr);
                if (want_tap) trace.taps[{s + 1, li + 1}] = std::move(tap);
                trace.rows.push_back({'L', s + 1, li + 1, grid.height, grid.width, dim,
                                      flops_wkv_layer(grid.count(), dim), 0});
            } else {
                grid = softmax_layer(grid, std::get<SoftmaxLayerParams>(stages_[s].layers[li]));
                long long quad = 0;
                const long long f = flops_softmax_layer(grid.count(), dim, cfg_.mlp_ratio,
                                                        cfg_.heads_for(dim), &quad);
                trace.rows.push_back({'S', s + 1, li + 1, grid.height, grid.width, dim, f, quad});
            }
        }
    }

    const Tensor normed = layer_norm(grid.tokens, final_gain_, final_shift_);
    const std::size_t n = grid.count(), d = grid.dim();
    Tensor pooled({d});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) pooled[j] += normed.at(i, j);
    for (std::size_t j = 0; j < d; ++j) pooled[j] /= static_cast<double>(n);
    trace.rows.push_back({'F', 0, 0, grid.height, grid.width, d,
                          flops_final_pool(n, d), 0});
    trace.final_grid = grid;
    trace.pooled = std::move(pooled);
    return trace;
}

Tensor Backbone::forward_pooled(const Tensor& image, Cache* cache) const {
    if (!cache) {
        ForwardTrace trace = forward(image);
        return trace.pooled;
    }
    std::set<std::pair<std::size_t, std::size_t>> tap_set;
    for (const HsbRoute& r : cfg_.hsb_routes) tap_set.insert({r.src_stage, r.src_layer});
    std::map<std::pair<std::size_t, std::size_t>, Tensor> taps;

    if (image.rank() != 3 || image.extent(2) != 3)
        throw std::invalid_argument("forward: image must be HxWx3, got " + image.shape_str());
    if (image.extent(0) % cfg_.patch_size != 0 || image.extent(1) % cfg_.patch_size != 0)
        throw std::invalid_argument("forward: resolution not divisible by patch size");

    const std::size_t gh0 = image.extent(0) / cfg_.patch_size;
    const std::size_t gw0 = image.extent(1) / cfg_.patch_size;
    cache->patches = build_patches(image, cfg_.patch_size);
    bilinear_plan(PatchEmbedParams::kPosGrid, gh0, gw0, cache->pos_index, cache->pos_weight);
    Tensor tokens = linear_apply(cache->patches, stem_.proj);
    tokens = add(tokens, resize_pos_table(stem_.pos_table, cache->pos_index, cache->pos_weight,
                                          gh0 * gw0));
    TokenGrid grid{std::move(tokens), gh0, gw0};

    for (std::size_t s = 0; s < 4; ++s) {
        if (s > 0) {
            TokenGrid padded = pad_to_even(grid);
            auto mc = std::make_unique<Cache::MergeCache>();
            mc->stage = s + 1;
            mc->h_in = grid.height;
            mc->w_in = grid.width;
            mc->h_pad = padded.height;
            mc->w_pad = padded.width;
            mc->in_dim = grid.dim();
            const PatchMergeParams& p = *stages_[s].merge;
            Differentiable ln = layer_norm_vjp(merge_concat(padded), p.norm_gain, p.norm_shift);
            Differentiable red = linear_vjp(ln.value, p.reduce);
            mc->ln = ln.pullback;
            mc->reduce = red.pullback;
            grid = TokenGrid{red.value, padded.height / 2, padded.width / 2};
            Cache::Step step;
            step.kind = Cache::Step::Kind::Merge;
            step.stage = s + 1;
            step.merge = std::move(mc);
            cache->steps.push_back(std::move(step));
        }
        for (std::size_t li = 0; li < cfg_.patterns[s].size(); ++li) {
            for (std::size_t ri = 0; ri < cfg_.hsb_routes.size(); ++ri) {
                const HsbRoute& r = cfg_.hsb_routes[ri];
                if (r.dst_stage != s + 1 || r.dst_layer != li + 1) continue;
                const Tensor& src = taps.at({r.src_stage, r.src_layer});
                const HsbParams& p = routes_[ri];
                auto fc = std::make_unique<Cache::FuseCache>();
                fc->route_index = ri;
                fc->indices = equidistant_indices(src.extent(0), grid.count());
                fc->src_tokens = src.extent(0);
                Differentiable z = linear_vjp(grid.tokens, p.gate);
                Differentiable gate = sigmoid_vjp(z.value);
                Differentiable bridged = linear_vjp(gather_rows(src, fc->indices), p.bridge);
                Differentiable mixed = elementwise_mul_vjp(gate.value, bridged.value);
                fc->gate_z = z.pullback;
                fc->gate_s = gate.pullback;
                fc->bridge = bridged.pullback;
                fc->mix = mixed.pullback;
                grid.tokens = add(grid.tokens, mixed.value);
                Cache::Step step;
                step.kind = Cache::Step::Kind::Fuse;
                step.stage = s + 1;
                step.layer = li + 1;
                step.fuse = std::move(fc);
                cache->steps.push_back(std::move(step));
            }
            Cache::Step step;
            step.stage = s + 1;
            step.layer = li + 1;
            if (cfg_.patterns[s][li] == 'L') {
                step.kind = Cache::Step::Kind::Wkv;
                step.wkv = std::make_unique<WkvLayerCache>();
                grid = wkv_layer_train(grid, std::get<WkvLayerParams>(stages_[s].layers[li]),
                                       *step.wkv);
                if (tap_set.count({s + 1, li + 1}) > 0) {
                    step.tapped = true;
                    taps[{s + 1, li + 1}] = step.wkv->spatial.wkv_out;
                }
            } else {
                step.kind = Cache::Step::Kind::Soft;
                step.soft = std::make_unique<SoftmaxLayerCache>();
                grid = softmax_layer_train(grid, std::get<SoftmaxLayerParams>(stages_[s].layers[li]),
                                           *step.soft);
            }
            cache->steps.push_back(std::move(step));
        }
    }

    Differentiable ln = layer_norm_vjp(grid.tokens, final_gain_, final_shift_);
    cache->final_ln = ln.pullback;
    cache->final_tokens = grid.count();
    const std::size_t n = grid.count(), d = grid.dim();
    Tensor pooled({d});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) pooled[j] += ln.value.at(i, j);
    for (std::size_t j = 0; j < d; ++j) pooled[j] /= static_cast<double>(n);
    return pooled;
}

void Backbone::backward(const Cache& cache, const Tensor& g_pooled, Backbone& grads) const {
    const std::size_t n = cache.final_tokens, d = g_pooled.size();
    Tensor g_tokens({n, d});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j)
            g_tokens.at(i, j) = g_pooled[j] / static_cast<double>(n);
    std::vector<Tensor> final_pulled = cache.final_ln(g_tokens);
    accumulate(grads.final_gain_, final_pulled[1]);
    accumulate(grads.final_shift_, final_pulled[2]);
    Tensor g = std::move(final_pulled[0]);

    std::map<std::pair<std::size_t, std::size_t>, Tensor> g_taps;
    for (std::size_t si = cache.steps.size(); si-- > 0;) {
        const Cache::Step& step = cache.steps[si];
        switch (step.kind) {
            case Cache::Step::Kind::Wkv: {
                const Tensor* g_tap = nullptr;
                auto it = g_taps.find({step.stage, step.layer});
                if (step.tapped && it != g_taps.end()) g_tap = &it->second;
                Tensor g_in;
                auto& layer_grads = std::get<WkvLayerParams>(
                    grads.stages_[step.stage - 1].layers[step.layer - 1]);
                wkv_layer_backward(*step.wkv, g, g_tap, g_in, layer_grads);
                g = std::move(g_in);
                break;
            }
            case Cache::Step::Kind::Soft: {
                Tensor g_in;
                auto& layer_grads = std::get<SoftmaxLayerParams>(
                    grads.stages_[step.stage - 1].layers[step.layer - 1]);
                softmax_layer_backward(*step.soft, g, g_in, layer_grads);
                g = std::move(g_in);
                break;
            }
            case Cache::Step::Kind::Fuse: {
                const Cache::FuseCache& fc = *step.fuse;
                const HsbRoute& route = cfg_.hsb_routes[fc.route_index];
                HsbParams& route_grads = grads.routes_[fc.route_index];
                std::vector<Tensor> mix_pulled = fc.mix(g);
                std::vector<Tensor> gate_pulled = fc.gate_s(mix_pulled[0]);
                std::vector<Tensor> z_pulled = fc.gate_z(gate_pulled[0]);
                accumulate_linear(route_grads.gate, z_pulled);
                std::vector<Tensor> bridge_pulled = fc.bridge(mix_pulled[1]);
                accumulate_linear(route_grads.bridge, bridge_pulled);
                const Tensor& g_sampled = bridge_pulled[0];
                Tensor g_src({fc.src_tokens, g_sampled.extent(1)});
                for (std::size_t i = 0; i < fc.indices.size(); ++i)
                    for (std::size_t j = 0; j < g_sampled.extent(1); ++j)
                        g_src.at(fc.indices[i], j) += g_sampled.at(i, j);
                const auto key = std::make_pair(route.src_stage, route.src_layer);
                auto it = g_taps.find(key);
                if (it == g_taps.end())
                    g_taps.emplace(key, std::move(g_src));
                else
                    accumulate(it->second, g_src);
                g = add(g, z_pulled[0]);
                break;
            }
            case Cache::Step::Kind::Merge: {
                const Cache::MergeCache& mc = *step.merge;
                PatchMergeParams& merge_grads = *grads.stages_[mc.stage - 1].merge;
                std::vector<Tensor> red_pulled = mc.reduce(g);
                accumulate_linear(merge_grads.reduce, red_pulled);
                std::vector<Tensor> ln_pulled = mc.ln(red_pulled[0]);
                accumulate(merge_grads.norm_gain, ln_pulled[1]);
                accumulate(merge_grads.norm_shift, ln_pulled[2]);
                const Tensor& g_cat = ln_pulled[0];
                const std::size_t c = mc.in_dim;
                const std::size_t wo = mc.w_pad / 2;
                Tensor g_in({mc.h_in * mc.w_in, c});
                for (std::size_t i = 0; i < mc.h_pad / 2; ++i)
                    for (std::size_t j = 0; j < wo; ++j) {
                        const double* row = g_cat.data() + (i * wo + j) * 4 * c;
                        for (std::size_t q = 0; q < 4; ++q) {
                            const std::size_t sy = 2 * i + (q >> 1), sx = 2 * j + (q & 1);
                            if (sy >= mc.h_in || sx >= mc.w_in) continue;  // padded cells
                            double* dst = g_in.data() + (sy * mc.w_in + sx) * c;
                            for (std::size_t ch = 0; ch < c; ++ch) dst[ch] += row[q * c + ch];
                        }
                    }
                g = std::move(g_in);
                break;
            }
        }
    }

    // Stem: projection and positional-table gradients (no image cotangent).
    accumulate(grads.stem_.proj.weight, matmul(transpose(cache.patches), g));
    if (grads.stem_.proj.bias) {
        Tensor gb({g.extent(1)});
        for (std::size_t i = 0; i < g.extent(0); ++i)
            for (std::size_t j = 0; j < g.extent(1); ++j) gb[j] += g.at(i, j);
        accumulate(*grads.stem_.proj.bias, gb);
    }
    const std::size_t dim = g.extent(1);
    for (std::size_t i = 0; i < g.extent(0); ++i)
        for (std::size_t tap = 0; tap < 4; ++tap) {
            const double w = cache.pos_weight[i * 4 + tap];
            if (w == 0.0) continue;
            double* dst = grads.stem_.pos_table.data() + cache.pos_index[i * 4 + tap] * dim;
            const double* src = g.data() + i * dim;
            for (std::size_t j = 0; j < dim; ++j) dst[j] += w * src[j];
        }
}

Backbone Backbone::zero_clone() const {
    Backbone clone = *this;
    std::vector<Tensor*> tensors;
    clone.collect(tensors);
    for (Tensor* t : tensors)
        for (std::size_t i = 0; i < t->size(); ++i) (*t)[i] = 0.0;
    return clone;
}

void Backbone::collect(std::vector<Tensor*>& dst) {
    stem_.collect(dst);
    for (Stage& stage : stages_) {
        if (stage.merge) stage.merge->collect(dst);
        for (LayerParams& layer : stage.layers)
            std::visit([&dst](auto& p) { p.collect(dst); }, layer);
    }
    dst.push_back(&final_gain_);
    dst.push_back(&final_shift_);
    for (HsbParams& route : routes_) route.collect(dst);
}

std::size_t Backbone::param_count() const {
    std::vector<Tensor*> tensors;
    const_cast<Backbone*>(this)->collect(tensors);
    std::size_t n = 0;
    for (const Tensor* t : tensors) n += t->size();
    return n;
}

void Backbone::apply_gradient(const Backbone& grads, double lr) {
    std::vector<Tensor*> params, gs;
    collect(params);
    const_cast<Backbone&>(grads).collect(gs);
    for (std::size_t i = 0; i < params.size(); ++i)
        for (std::size_t j = 0; j < params[i]->size(); ++j)
            (*params[i])[j] -= lr * (*gs[i])[j];
}

std::size_t count_params(const Backbone& model) { return model.param_count(); }

long long count_flops(const Backbone& model, std::size_t resolution) {
    return count_flops(model.config(), resolution);
}

}  // namespace sola
