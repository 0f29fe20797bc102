#include "bevsplat/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace bevsplat {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& field, const std::string& why) {
    throw std::invalid_argument("config field '" + field + "': " + why);
}

double get_number(const json& j, const char* field, double fallback) {
    if (!j.contains(field)) return fallback;
    if (!j[field].is_number()) fail(field, "expected a number");
    return j[field].get<double>();
}

int get_int(const json& j, const char* field, int fallback) {
    if (!j.contains(field)) return fallback;
    if (!j[field].is_number_integer()) fail(field, "expected an integer");
    return j[field].get<int>();
}

}  // namespace

void RunConfig::validate() const {
    if (!(depth.d_min > 0.0)) fail("depth.d_min", "d_min > 0 required");
    if (!(depth.d_max > depth.d_min)) fail("depth.d_max", "d_max > d_min required");
    if (depth.bins < 2) fail("depth.bins", "bins >= 2 required");
    if (!(k > 0.0)) fail("k", "k > 0 required");
    if (!(bev.x_max > bev.x_min)) fail("bev.x_max", "x_max > x_min required");
    if (!(bev.y_max > bev.y_min)) fail("bev.y_max", "y_max > y_min required");
    if (bev.resolution < 1) fail("bev.resolution", "resolution >= 1 required");
    if (scales.empty()) fail("scales", "at least one scale required");
    for (int s : scales) {
        if (s < 1) fail("scales", "every scale must be >= 1");
        if (bev.resolution % s != 0)
            fail("scales", "resolution " + std::to_string(bev.resolution) +
                               " not divisible by scale " + std::to_string(s));
    }
    if (opacity_threshold < 0.0 || opacity_threshold > 1.0)
        fail("opacity_threshold", "must lie in [0, 1]");
    if (!(splat_eps >= 0.0)) fail("splat_eps", "must be >= 0");
    if (stride < 1) fail("stride", "stride >= 1 required");
}

RunConfig parse_config(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw std::invalid_argument(std::string("config: malformed JSON: ") + e.what());
    }
    if (!j.is_object()) throw std::invalid_argument("config: top-level value must be an object");

    RunConfig c;
    if (j.contains("depth")) {
        const json& d = j["depth"];
        if (!d.is_object()) fail("depth", "expected an object");
        c.depth.d_min = get_number(d, "d_min", c.depth.d_min);
        c.depth.d_max = get_number(d, "d_max", c.depth.d_max);
        c.depth.bins = get_int(d, "bins", c.depth.bins);
    }
    c.k = get_number(j, "k", c.k);
    if (j.contains("bev")) {
        const json& b = j["bev"];
        if (!b.is_object()) fail("bev", "expected an object");
        c.bev.x_min = get_number(b, "x_min", c.bev.x_min);
        c.bev.x_max = get_number(b, "x_max", c.bev.x_max);
        c.bev.y_min = get_number(b, "y_min", c.bev.y_min);
        c.bev.y_max = get_number(b, "y_max", c.bev.y_max);
        c.bev.resolution = get_int(b, "resolution", c.bev.resolution);
    }
    if (j.contains("scales")) {
        if (!j["scales"].is_array()) fail("scales", "expected an array");
        c.scales.clear();
        for (const auto& s : j["scales"]) {
            if (!s.is_number_integer()) fail("scales", "entries must be integers");
            c.scales.push_back(s.get<int>());
        }
    }
    c.opacity_threshold = get_number(j, "opacity_threshold", c.opacity_threshold);
    if (j.contains("fuse_mode")) {
        const std::string m = j["fuse_mode"].get<std::string>();
        if (m == "sum")
            c.fuse_mode = FuseMode::sum;
        else if (m == "concat")
            c.fuse_mode = FuseMode::concat;
        else
            fail("fuse_mode", "expected 'sum' or 'concat'");
    }
    if (j.contains("seed")) {
        if (!j["seed"].is_number_integer()) fail("seed", "expected an integer");
        c.seed = j["seed"].get<std::uint64_t>();
    }
    c.splat_eps = get_number(j, "splat_eps", c.splat_eps);
    if (j.contains("k_mode")) {
        const std::string m = j["k_mode"].get<std::string>();
        if (m == "truncate")
            c.k_mode = KMode::truncate;
        else if (m == "cov_scale")
            c.k_mode = KMode::cov_scale;
        else
            fail("k_mode", "expected 'truncate' or 'cov_scale'");
    }
    if (j.contains("upsample_mode")) {
        const std::string m = j["upsample_mode"].get<std::string>();
        if (m == "nearest")
            c.upsample_mode = UpsampleMode::nearest;
        else if (m == "bilinear")
            c.upsample_mode = UpsampleMode::bilinear;
        else
            fail("upsample_mode", "expected 'nearest' or 'bilinear'");
    }
    c.stride = get_int(j, "stride", c.stride);

    c.validate();
    return c;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("config: cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str());
}

std::string fuse_mode_name(FuseMode m) { return m == FuseMode::sum ? "sum" : "concat"; }

}  // namespace bevsplat
