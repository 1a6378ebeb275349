#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace sola {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// One Hidden State Bridge route; stage/layer indices are 1-based as in the
/// shipped configs. The source must be a linear (L) layer, the destination a
/// softmax (S) layer strictly later in network order.
struct HsbRoute {
    std::size_t src_stage = 0, src_layer = 0;
    std::size_t dst_stage = 0, dst_layer = 0;
};

struct BackboneConfig {
    std::size_t patch_size = 4;
    std::size_t stem_dim = 0;
    std::array<std::size_t, 4> stage_dims{};
    std::array<std::string, 4> patterns{};  // strings over {L, S}
    std::vector<HsbRoute> hsb_routes;
    std::size_t mlp_ratio = 4;
    std::size_t head_divisor = 32;

    /// Throws ConfigError naming the offending field.
    void validate() const;

    std::size_t heads_for(std::size_t dim) const;
    /// Layer kind at 1-based (stage, layer).
    char layer_kind(std::size_t stage, std::size_t layer) const;
    std::size_t total_layers() const;

    /// Same depths/dims with every layer forced to `kind` ('L' or 'S');
    /// bridge routes are dropped (their kind constraints cannot hold).
    BackboneConfig uniform_variant(char kind) const;

    static BackboneConfig from_json_string(const std::string& text);
    static BackboneConfig load(const std::string& path);
    std::string to_json_string() const;
    /// FNV-1a hash of the canonical JSON form, as fixed-width hex.
    std::string digest() const;
};

}  // namespace sola
