#include <fstream>
#include <sstream>

#include <json.hpp>

#include "cbn/io.hpp"

namespace cbn::io {
namespace {

using json = nlohmann::ordered_json;

Point2 parse_point(const json& v, int line, const std::string& field) {
    if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number())
        throw ParseError("expected a point [x, y]", line, field);
    return {v[0].get<double>(), v[1].get<double>()};
}

std::string parse_string(const json& obj, const char* key, int line, bool required) {
    if (!obj.contains(key)) {
        if (required) throw ParseError("missing required field", line, key);
        return {};
    }
    if (!obj[key].is_string()) throw ParseError("expected a string", line, key);
    return obj[key].get<std::string>();
}

json point_json(Point2 p) { return json::array({p.x, p.y}); }

}  // namespace

Manifest parse_manifest(const std::string& text, const fs::path& base_dir, int landmark_count) {
    Manifest m;
    m.base_dir = base_dir;
    m.landmark_count = landmark_count;
    std::istringstream in(text);
    std::string raw;
    int line = 0;
    while (std::getline(in, raw)) {
        ++line;
        if (raw.find_first_not_of(" \t\r") == std::string::npos) continue;
        json obj;
        try {
            obj = json::parse(raw);
        } catch (const json::parse_error& e) {
            throw ParseError(std::string("malformed JSON: ") + e.what(), line, "record");
        }
        if (!obj.is_object()) throw ParseError("record must be a JSON object", line, "record");
        for (const auto& [key, _] : obj.items()) {
            if (key != "id" && key != "image" && key != "eyes" && key != "landmarks" && key != "split")
                throw ParseError("unknown field", line, key);
        }
        ManifestRecord r;
        r.id = parse_string(obj, "id", line, true);
        r.image = parse_string(obj, "image", line, true);
        r.split = parse_string(obj, "split", line, false);
        if (!obj.contains("eyes")) throw ParseError("missing required field", line, "eyes");
        const json& eyes = obj["eyes"];
        if (!eyes.is_array() || eyes.size() != 2)
            throw ParseError("expected two eye points", line, "eyes");
        r.eye_left = parse_point(eyes[0], line, "eyes");
        r.eye_right = parse_point(eyes[1], line, "eyes");
        if (obj.contains("landmarks")) {
            const json& lm = obj["landmarks"];
            if (!lm.is_array()) throw ParseError("expected an array of points", line, "landmarks");
            for (const json& p : lm) r.landmarks.push_back(parse_point(p, line, "landmarks"));
            if (!r.landmarks.empty() && static_cast<int>(r.landmarks.size()) != landmark_count)
                throw ParseError("expected 0 or " + std::to_string(landmark_count) +
                                     " landmarks, got " + std::to_string(r.landmarks.size()),
                                 line, "landmarks");
        }
        m.records.push_back(std::move(r));
    }
    return m;
}

Manifest load_manifest(const fs::path& path, int landmark_count) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_manifest(buf.str(), path.parent_path(), landmark_count);
}

std::string serialize_manifest(const Manifest& m) {
    std::string out;
    for (const ManifestRecord& r : m.records) {
        json obj;
        obj["id"] = r.id;
        obj["image"] = r.image;
        obj["eyes"] = json::array({point_json(r.eye_left), point_json(r.eye_right)});
        if (!r.landmarks.empty()) {
            json lm = json::array();
            for (Point2 p : r.landmarks) lm.push_back(point_json(p));
            obj["landmarks"] = std::move(lm);
        }
        obj["split"] = r.split;
        out += obj.dump();
        out += '\n';
    }
    return out;
}

void save_manifest(const fs::path& path, const Manifest& m) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write manifest " + path.string());
    out << serialize_manifest(m);
}

}  // namespace cbn::io
