#pragma once

#include <map>
#include <memory>
#include <optional>
#include <variant>

#include "sola/config.hpp"
#include "sola/flops.hpp"
#include "sola/softmax_layer.hpp"
#include "sola/wkv.hpp"

namespace sola {

struct PatchEmbedParams {
    static constexpr std::size_t kPosGrid = 56;  // native positional-table side
    std::size_t patch = 4;
    LinearProjection proj;  // (patch*patch*3) -> stem_dim
    Tensor pos_table;       // [kPosGrid*kPosGrid x stem_dim]

    static PatchEmbedParams init(std::size_t patch, std::size_t dim, std::mt19937_64& rng);
    void collect(std::vector<Tensor*>& dst);
};

struct PatchMergeParams {
    Tensor norm_gain, norm_shift;  // over 4*C_in
    LinearProjection reduce;       // 4*C_in -> C_out

    static PatchMergeParams init(std::size_t in_dim, std::size_t out_dim, std::mt19937_64& rng);
    void collect(std::vector<Tensor*>& dst);
};

struct HsbParams {
    LinearProjection bridge;  // C_src -> C_dst
    LinearProjection gate;    // C_dst -> C_dst

    static HsbParams init(std::size_t src_dim, std::size_t dst_dim, std::mt19937_64& rng);
    void collect(std::vector<Tensor*>& dst);
};

/// Indices floor((j+0.5)*n_src/n_out), j = 0..n_out-1 (center-aligned stride).
std::vector<std::size_t> equidistant_indices(std::size_t n_src, std::size_t n_out);
Tensor sample_equidistant(const Tensor& tokens, std::size_t n_out);

/// Non-overlapping patch projection plus the (bilinearly resized) learned
/// absolute positional embedding. H, W must be divisible by the patch size.
TokenGrid patch_embed(const Tensor& image, const PatchEmbedParams& p);

/// Concatenate 2x2 neighborhoods, layer-normalize, project. Strict contract:
/// odd extents are an error (the backbone pads before calling this).
TokenGrid patch_merge(const TokenGrid& x, const PatchMergeParams& p);

/// dst + sigmoid(gate(dst)) .* (Samp(src) . W_bridge): samples dst-many tokens
/// from the source hidden state, projects, and gate-fuses into dst.
Tensor hidden_state_bridge(const Tensor& src_hidden, const Tensor& dst_input, const HsbParams& p);

struct TraceRow {
    char kind = '?';  // 'E' stem, 'M' merge, 'L'/'S' layers, 'H' bridge, 'F' final
    std::size_t stage = 0, layer = 0;
    std::size_t height = 0, width = 0, dim = 0;
    long long flops = 0;
    long long attn_flops = 0;
};

struct ForwardTrace {
    std::vector<TraceRow> rows;
    /// Tapped spatial-mix WKV outputs, keyed by the 1-based (stage, layer)
    /// source positions of the bridge routes — exactly the src set.
    std::map<std::pair<std::size_t, std::size_t>, Tensor> taps;
    TokenGrid final_grid;
    Tensor pooled;

    std::string layer_kind_string() const;  // executed L/S sequence, stages joined by '/'
};

class Backbone {
public:
    static Backbone build(const BackboneConfig& cfg, std::uint64_t seed);

    const BackboneConfig& config() const { return cfg_; }

    ForwardTrace forward(const Tensor& image) const;

    struct Cache;
    /// Forward returning the pooled feature, filling `cache` for backward.
    Tensor forward_pooled(const Tensor& image, Cache* cache = nullptr) const;
    /// Accumulates parameter cotangents into `grads` (a zero clone).
    void backward(const Cache& cache, const Tensor& g_pooled, Backbone& grads) const;

    Backbone zero_clone() const;
    void collect(std::vector<Tensor*>& dst);
    std::size_t param_count() const;

    std::vector<HsbParams>& routes() { return routes_; }
    const std::vector<HsbParams>& routes() const { return routes_; }

    /// In-place SGD step: p -= lr * g.
    void apply_gradient(const Backbone& grads, double lr);

private:
    using LayerParams = std::variant<WkvLayerParams, SoftmaxLayerParams>;
    struct Stage {
        std::optional<PatchMergeParams> merge;
        std::vector<LayerParams> layers;
    };

    BackboneConfig cfg_;
    PatchEmbedParams stem_;
    std::array<Stage, 4> stages_;
    Tensor final_gain_, final_shift_;
    std::vector<HsbParams> routes_;  // parallel to cfg_.hsb_routes

    friend std::size_t count_params(const Backbone& model);
};

struct Backbone::Cache {
    struct FuseCache {
        std::size_t route_index = 0;
        std::vector<std::size_t> indices;
        std::size_t src_tokens = 0;
        Pullback gate_z, gate_s, bridge, mix;
    };
    struct MergeCache {
        std::size_t stage = 0;  // 1-based
        std::size_t h_in = 0, w_in = 0, h_pad = 0, w_pad = 0, in_dim = 0;
        Pullback ln, reduce;
    };
    struct Step {
        enum class Kind { Merge, Fuse, Wkv, Soft } kind;
        std::size_t stage = 0, layer = 0;  // 1-based for Wkv/Soft
        bool tapped = false;
        std::unique_ptr<WkvLayerCache> wkv;
        std::unique_ptr<SoftmaxLayerCache> soft;
        std::unique_ptr<MergeCache> merge;
        std::unique_ptr<FuseCache> fuse;
    };

    Tensor patches;                         // [N_stem x patch*patch*3]
    std::vector<std::size_t> pos_index;     // 4 entries per stem token
    std::vector<double> pos_weight;
    std::vector<Step> steps;
    Pullback final_ln;
    std::size_t final_tokens = 0;
};

/// Exact parameter total of the built model (backbone only, no head).
std::size_t count_params(const Backbone& model);
long long count_flops(const Backbone& model, std::size_t resolution);

}  // namespace sola
