#include "sola/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace sola {

using nlohmann::json;

void BackboneConfig::validate() const {
    if (patch_size < 1) throw ConfigError("config field patch_size: must be >= 1");
    if (stem_dim < 1) throw ConfigError("config field stem_dim: must be >= 1");
    if (stem_dim != stage_dims[0])
        throw ConfigError("config field stem_dim: must equal stage_dims[0]");
    for (std::size_t s = 0; s < 4; ++s) {
        if (stage_dims[s] < 1) throw ConfigError("config field stage_dims: must be >= 1");
        if (s > 0 && stage_dims[s] < stage_dims[s - 1])
            throw ConfigError("config field stage_dims: dims must be non-decreasing across merges");
        if (patterns[s].empty())
            throw ConfigError("config field patterns: stage " + std::to_string(s + 1) +
                              " pattern is empty");
        for (char c : patterns[s]) {
            if (c != 'L' && c != 'S')
                throw ConfigError("config field patterns: stage " + std::to_string(s + 1) +
                                  " contains '" + std::string(1, c) + "' (must be L or S)");
            if (c == 'S') heads_for(stage_dims[s]);  // throws if heads do not divide dim
        }
    }
    if (mlp_ratio < 1) throw ConfigError("config field mlp_ratio: must be >= 1");
    if (head_divisor < 1) throw ConfigError("config field head_divisor: must be >= 1");
    for (const HsbRoute& r : hsb_routes) {
        auto check_pos = [&](std::size_t stage, std::size_t layer, const char* which) {
            if (stage < 1 || stage > 4)
                throw ConfigError(std::string("config field hsb_routes: ") + which +
                                  " stage out of range");
            if (layer < 1 || layer > patterns[stage - 1].size())
                throw ConfigError(std::string("config field hsb_routes: ") + which +
                                  " layer out of range for stage " + std::to_string(stage));
        };
        check_pos(r.src_stage, r.src_layer, "src");
        check_pos(r.dst_stage, r.dst_layer, "dst");
        if (layer_kind(r.src_stage, r.src_layer) != 'L')
            throw ConfigError("config field hsb_routes: src (" + std::to_string(r.src_stage) +
                              "," + std::to_string(r.src_layer) + ") is not an L layer");
        if (layer_kind(r.dst_stage, r.dst_layer) != 'S')
            throw ConfigError("config field hsb_routes: dst (" + std::to_string(r.dst_stage) +
                              "," + std::to_string(r.dst_layer) + ") is not an S layer");
        const bool later = r.dst_stage > r.src_stage ||
                           (r.dst_stage == r.src_stage && r.dst_layer > r.src_layer);
        if (!later)
            throw ConfigError("config field hsb_routes: dst must come strictly after src");
    }
}

std::size_t BackboneConfig::heads_for(std::size_t dim) const {
    const std::size_t heads = head_divisor >= dim ? 1 : dim / head_divisor;
    if (dim % heads != 0)
        throw ConfigError("config field head_divisor: " + std::to_string(head_divisor) +
                          " yields head count " + std::to_string(heads) +
                          " that does not divide dim " + std::to_string(dim));
    return heads;
}

char BackboneConfig::layer_kind(std::size_t stage, std::size_t layer) const {
    return patterns[stage - 1][layer - 1];
}

std::size_t BackboneConfig::total_layers() const {
    std::size_t n = 0;
    for (const std::string& p : patterns) n += p.size();
    return n;
}

BackboneConfig BackboneConfig::uniform_variant(char kind) const {
    BackboneConfig v = *this;
    for (std::string& p : v.patterns) p.assign(p.size(), kind);
    v.hsb_routes.clear();
    return v;
}

namespace {
json to_json(const BackboneConfig& cfg) {
    json j;
    j["patch_size"] = cfg.patch_size;
    j["stem_dim"] = cfg.stem_dim;
    j["stage_dims"] = cfg.stage_dims;
    j["patterns"] = cfg.patterns;
    json routes = json::array();
    for (const HsbRoute& r : cfg.hsb_routes)
        routes.push_back({{"src", {r.src_stage, r.src_layer}}, {"dst", {r.dst_stage, r.dst_layer}}});
    j["hsb_routes"] = routes;
    j["mlp_ratio"] = cfg.mlp_ratio;
    j["head_divisor"] = cfg.head_divisor;
    return j;
}

BackboneConfig parse(const json& j) {
    BackboneConfig cfg;
    try {
        cfg.patch_size = j.at("patch_size").get<std::size_t>();
        cfg.stem_dim = j.at("stem_dim").get<std::size_t>();
        const auto dims = j.at("stage_dims").get<std::vector<std::size_t>>();
        const auto pats = j.at("patterns").get<std::vector<std::string>>();
        if (dims.size() != 4) throw ConfigError("config field stage_dims: need exactly 4 stages");
        if (pats.size() != 4) throw ConfigError("config field patterns: need exactly 4 stages");
        for (std::size_t s = 0; s < 4; ++s) {
            cfg.stage_dims[s] = dims[s];
            cfg.patterns[s] = pats[s];
        }
        for (const json& r : j.value("hsb_routes", json::array())) {
            HsbRoute route;
            const auto src = r.at("src").get<std::vector<std::size_t>>();
            const auto dst = r.at("dst").get<std::vector<std::size_t>>();
            if (src.size() != 2 || dst.size() != 2)
                throw ConfigError("config field hsb_routes: src/dst must be [stage, layer]");
            route.src_stage = src[0];
            route.src_layer = src[1];
            route.dst_stage = dst[0];
            route.dst_layer = dst[1];
            cfg.hsb_routes.push_back(route);
        }
        cfg.mlp_ratio = j.value("mlp_ratio", std::size_t{4});
        cfg.head_divisor = j.value("head_divisor", std::size_t{32});
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config parse: ") + e.what());
    }
    cfg.validate();
    return cfg;
}
}  // namespace

BackboneConfig BackboneConfig::from_json_string(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config parse: ") + e.what());
    }
    return parse(j);
}

BackboneConfig BackboneConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config file not readable: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return from_json_string(buf.str());
}

std::string BackboneConfig::to_json_string() const { return to_json(*this).dump(2); }

std::string BackboneConfig::digest() const {
    const std::string canon = to_json(*this).dump();
    std::uint64_t h = 1469598103934665603ull;  // FNV-1a 64
    for (unsigned char c : canon) {
        h ^= c;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

}  // namespace sola
