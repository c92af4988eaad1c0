#pragma once

// Image files, face manifests, configuration and the model container.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cbn/cascade.hpp"
#include "cbn/image.hpp"
#include "cbn/metrics.hpp"

namespace cbn::io {

namespace fs = std::filesystem;

// ---- images ---------------------------------------------------------------

/// Luminance plus optional chroma, all on [0, 1] (chroma centered at 0.5).
struct ColorImage {
    Image y;
    Image cb, cr;  // empty for grayscale sources

    bool is_color() const { return !cb.empty(); }
};

// Reads binary or ASCII PGM/PPM (P2, P3, P5, P6), maxval up to 65535.
ColorImage read_image(const fs::path& path);
// Writes 8-bit PGM (grayscale) or PPM (color). Values are clamped and rounded.
void write_image(const fs::path& path, const ColorImage& img);
void write_pgm(const fs::path& path, const Image& y);

// BT.601 full-range conversions.
ColorImage from_rgb(const Image& r, const Image& g, const Image& b);
void to_rgb(const ColorImage& img, Image& r, Image& g, Image& b);

// ---- manifests ------------------------------------------------------------

/// One face per line, a JSON object with fields in this order:
///   {"id": str, "image": str, "eyes": [[x, y], [x, y]],
///    "landmarks": [[x, y], ...] (optional), "split": str}
/// Image paths are relative to the manifest's directory.
struct ManifestRecord {
    std::string id;
    std::string image;
    Point2 eye_left, eye_right;
    std::vector<Point2> landmarks;
    std::string split;

    bool operator==(const ManifestRecord&) const = default;
};

struct Manifest {
    fs::path base_dir;
    std::vector<ManifestRecord> records;
    int landmark_count = 68;

    fs::path resolve(const ManifestRecord& r) const { return base_dir / r.image; }
};

// Throws ParseError naming the 1-based line and the offending field.
Manifest parse_manifest(const std::string& text, const fs::path& base_dir = {},
                        int landmark_count = 68);
Manifest load_manifest(const fs::path& path, int landmark_count = 68);
std::string serialize_manifest(const Manifest& m);
void save_manifest(const fs::path& path, const Manifest& m);

// ---- configuration --------------------------------------------------------

/// JSON tree with every CascadeConfig field; missing keys keep defaults and
/// unknown keys are rejected.
cascade::CascadeConfig config_from_json(const std::string& text);
std::string config_to_json(const cascade::CascadeConfig& cfg);
cascade::CascadeConfig load_config(const fs::path& path);

/// Environment overrides: the leaf "a.b_c" is overridden by CBN_A_B_C, its
/// value parsed as JSON (or taken as a string when that fails).
cascade::CascadeConfig apply_env_overrides(const cascade::CascadeConfig& cfg);
std::string env_name(const std::string& key_path);

// ---- model container ------------------------------------------------------

inline constexpr std::uint32_t kModelVersion = 1;

/// Magic "CBNMODEL", version, section count, then per section a 4-byte tag,
/// a 64-bit payload length, the payload and its CRC-32. Integers and reals
/// are little-endian.
std::vector<std::uint8_t> serialize_model(const cascade::CascadeModel& model);
cascade::CascadeModel deserialize_model(const std::vector<std::uint8_t>& bytes);
void save_model(const fs::path& path, const cascade::CascadeModel& model);
cascade::CascadeModel load_model(const fs::path& path);

// 64-bit FNV-1a of the serialized model, as 16 hex digits.
std::string model_checksum(const cascade::CascadeModel& model);

// ---- evaluation -----------------------------------------------------------

/// Scores `<pred_dir>/<sanitized id>.pgm` (or .ppm) against every manifest
/// record's image over the record's landmark hull. Missing or mismatched files
/// become itemized errors; the run continues.
metrics::ScoreReport score_run(const fs::path& pred_dir, const Manifest& truth, int workers = 1);

// Prediction file for a record id inside `dir`, or empty when none exists.
fs::path prediction_path(const fs::path& dir, const std::string& id);

// ---- misc -----------------------------------------------------------------

// Keeps [A-Za-z0-9._-], maps everything else to '_', never returns "", "." or "..".
std::string sanitize_name(const std::string& name);

}  // namespace cbn::io
