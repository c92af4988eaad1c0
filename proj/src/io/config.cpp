#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "cbn/io.hpp"

namespace cbn::io {
namespace {

using json = nlohmann::ordered_json;
using cascade::CascadeConfig;

json point_json(Point2 p) { return json::array({p.x, p.y}); }

const char* gate_name(binet::GateMode m) {
    switch (m) {
        case binet::GateMode::Learned: return "learned";
        case binet::GateMode::CommonOnly: return "common_only";
        case binet::GateMode::HighFrequencyOnly: return "hf_only";
    }
    return "learned";
}

json to_tree(const CascadeConfig& c) {
    json j;
    j["stages"] = c.stages;
    j["frame"] = {{"width", c.frame.width},
                  {"height", c.frame.height},
                  {"eye_left", point_json(c.frame.eye_left)},
                  {"eye_right", point_json(c.frame.eye_right)}};
    j["num_bases"] = c.num_bases;
    j["template_dilation"] = c.template_dilation;
    j["prior"] = {{"channels", c.prior.channels},
                  {"magnitude_percentile_floor", c.prior.magnitude_percentile_floor},
                  {"smoothing_radius", c.prior.smoothing_radius},
                  {"kmeans_iterations", c.prior.kmeans_iterations}};
    j["network"] = {{"first_depth", c.first_depth},
                    {"later_depth", c.later_depth},
                    {"gate_depth", c.gate_depth},
                    {"width_scale", c.width_scale},
                    {"gate_lr_multiplier", c.gate_lr_multiplier}};
    j["schedule"] = {{"epochs_common", c.schedule.epochs_common},
                     {"epochs_hf", c.schedule.epochs_hf},
                     {"epochs_joint", c.schedule.epochs_joint},
                     {"batch_size", c.schedule.batch_size},
                     {"base_lr", c.schedule.base_lr},
                     {"momentum", c.schedule.momentum},
                     {"grad_clip", c.schedule.grad_clip}};
    const regressor::DescriptorConfig& d = c.regressor.descriptor;
    j["regressor"] = {{"ridge", c.regressor.ridge},
                      {"perturbations", c.regressor.perturbations},
                      {"include_current", c.regressor.include_current},
                      {"descriptor",
                       {{"patch_iod", d.patch_iod},
                        {"cells", d.cells},
                        {"bins", d.bins},
                        {"samples_per_cell", d.samples_per_cell},
                        {"clip", d.clip}}}};
    j["back_projection"] = {{"enabled", c.back_projection.enabled},
                            {"iterations", c.back_projection.iterations},
                            {"step", c.back_projection.step}};
    j["ablation"] = {{"gate", gate_name(c.ablation.gate)},
                     {"frozen_correspondence", c.ablation.frozen_correspondence},
                     {"single_cascade", c.ablation.single_cascade}};
    j["degradation"] = {{"sigma", c.degradation.sigma}, {"eta", c.degradation.eta}};
    j["seed"] = c.seed;
    return j;
}

// 1-based line of the first occurrence of "key" in the source text.
int line_of(const std::string& text, const std::string& key) {
    const std::size_t at = text.find('"' + key + '"');
    if (at == std::string::npos) return 0;
    return 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(at), '\n'));
}

bool same_kind(const json& a, const json& b) {
    if (a.is_number() && b.is_number()) {
        // Integers must stay integers; reals accept either.
        return a.is_number_float() || !b.is_number_float();
    }
    return a.type() == b.type();
}

void merge(json& base, const json& user, const std::string& path, const std::string& text) {
    for (const auto& [key, value] : user.items()) {
        const std::string full = path.empty() ? key : path + "." + key;
        if (!base.contains(key)) throw ParseError("unknown configuration key", line_of(text, key), full);
        json& slot = base[key];
        if (slot.is_object()) {
            if (!value.is_object()) throw ParseError("expected an object", line_of(text, key), full);
            merge(slot, value, full, text);
        } else {
            if (!same_kind(slot, value))
                throw ParseError("expected " + std::string(slot.type_name()) + ", got " + value.type_name(),
                                 line_of(text, key), full);
            if (slot.is_array() && value.size() != slot.size())
                throw ParseError("expected " + std::to_string(slot.size()) + " elements",
                                 line_of(text, key), full);
            slot = value;
        }
    }
}

template <typename T>
T get(const json& j, const char* key) {
    return j.at(key).get<T>();
}

Point2 get_point(const json& j, const char* key) {
    const json& v = j.at(key);
    return {v.at(0).get<double>(), v.at(1).get<double>()};
}

CascadeConfig from_tree(const json& j, const std::string& text) {
    CascadeConfig c;
    c.stages = get<int>(j, "stages");
    const json& f = j.at("frame");
    c.frame.width = get<int>(f, "width");
    c.frame.height = get<int>(f, "height");
    c.frame.eye_left = get_point(f, "eye_left");
    c.frame.eye_right = get_point(f, "eye_right");
    c.num_bases = get<int>(j, "num_bases");
    c.template_dilation = get<double>(j, "template_dilation");
    const json& p = j.at("prior");
    c.prior.channels = get<int>(p, "channels");
    c.prior.magnitude_percentile_floor = get<double>(p, "magnitude_percentile_floor");
    c.prior.smoothing_radius = get<double>(p, "smoothing_radius");
    c.prior.kmeans_iterations = get<int>(p, "kmeans_iterations");
    const json& n = j.at("network");
    c.first_depth = get<int>(n, "first_depth");
    c.later_depth = get<int>(n, "later_depth");
    c.gate_depth = get<int>(n, "gate_depth");
    c.width_scale = get<double>(n, "width_scale");
    c.gate_lr_multiplier = get<double>(n, "gate_lr_multiplier");
    const json& s = j.at("schedule");
    c.schedule.epochs_common = get<int>(s, "epochs_common");
    c.schedule.epochs_hf = get<int>(s, "epochs_hf");
    c.schedule.epochs_joint = get<int>(s, "epochs_joint");
    c.schedule.batch_size = get<int>(s, "batch_size");
    c.schedule.base_lr = get<double>(s, "base_lr");
    c.schedule.momentum = get<double>(s, "momentum");
    c.schedule.grad_clip = get<double>(s, "grad_clip");
    const json& r = j.at("regressor");
    c.regressor.ridge = get<double>(r, "ridge");
    c.regressor.perturbations = get<int>(r, "perturbations");
    c.regressor.include_current = get<bool>(r, "include_current");
    const json& d = r.at("descriptor");
    c.regressor.descriptor.patch_iod = get<double>(d, "patch_iod");
    c.regressor.descriptor.cells = get<int>(d, "cells");
    c.regressor.descriptor.bins = get<int>(d, "bins");
    c.regressor.descriptor.samples_per_cell = get<int>(d, "samples_per_cell");
    c.regressor.descriptor.clip = get<double>(d, "clip");
    const json& b = j.at("back_projection");
    c.back_projection.enabled = get<bool>(b, "enabled");
    c.back_projection.iterations = get<int>(b, "iterations");
    c.back_projection.step = get<double>(b, "step");
    const json& a = j.at("ablation");
    const std::string gate = get<std::string>(a, "gate");
    if (gate == "learned") c.ablation.gate = binet::GateMode::Learned;
    else if (gate == "common_only") c.ablation.gate = binet::GateMode::CommonOnly;
    else if (gate == "hf_only") c.ablation.gate = binet::GateMode::HighFrequencyOnly;
    else throw ParseError("expected learned, common_only or hf_only", line_of(text, "gate"), "ablation.gate");
    c.ablation.frozen_correspondence = get<bool>(a, "frozen_correspondence");
    c.ablation.single_cascade = get<bool>(a, "single_cascade");
    const json& g = j.at("degradation");
    c.degradation.sigma = get<double>(g, "sigma");
    c.degradation.eta = get<double>(g, "eta");
    c.seed = get<std::uint64_t>(j, "seed");
    try {
        c.validate();
    } catch (const ArgumentError& e) {
        throw ParseError(e.what(), 0, "config");
    }
    return c;
}

void collect_leaves(const json& j, const std::string& path, std::vector<std::string>& out) {
    for (const auto& [key, value] : j.items()) {
        const std::string full = path.empty() ? key : path + "." + key;
        if (value.is_object()) collect_leaves(value, full, out);
        else out.push_back(full);
    }
}

}  // namespace

CascadeConfig config_from_json(const std::string& text) {
    json user;
    try {
        user = json::parse(text);
    } catch (const json::parse_error& e) {
        const std::size_t at = std::min<std::size_t>(e.byte, text.size());
        const int line = 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(at), '\n'));
        throw ParseError(std::string("malformed JSON: ") + e.what(), line, "config");
    }
    if (!user.is_object()) throw ParseError("configuration must be a JSON object", 1, "config");
    json tree = to_tree(CascadeConfig{});
    merge(tree, user, "", text);
    return from_tree(tree, text);
}

std::string config_to_json(const CascadeConfig& cfg) { return to_tree(cfg).dump(2) + "\n"; }

CascadeConfig load_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return config_from_json(buf.str());
}

std::string env_name(const std::string& key_path) {
    std::string out = "CBN_";
    for (char c : key_path) out.push_back(c == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
    return out;
}

CascadeConfig apply_env_overrides(const CascadeConfig& cfg) {
    json tree = to_tree(cfg);
    std::vector<std::string> leaves;
    collect_leaves(tree, "", leaves);
    json patch = json::object();
    bool any = false;
    for (const std::string& leaf : leaves) {
        const char* v = std::getenv(env_name(leaf).c_str());
        if (!v) continue;
        json value;
        try {
            value = json::parse(v);
        } catch (const json::parse_error&) {
            value = std::string(v);
        }
        json::json_pointer ptr("/" + [&] {
            std::string s = leaf;
            std::replace(s.begin(), s.end(), '.', '/');
            return s;
        }());
        patch[ptr] = value;
        any = true;
    }
    if (!any) return cfg;
    const std::string text = patch.dump();
    merge(tree, patch, "", text);
    return from_tree(tree, text);
}

}  // namespace cbn::io
