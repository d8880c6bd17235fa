#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "desco/volume.hpp"

namespace desco::io {

namespace fs = std::filesystem;

enum class DType { u8, i16, i32, f32, f64 };

const char* dtype_name(DType t);
DType parse_dtype(const std::string& name);
std::size_t dtype_size(DType t);

/// Sidecar of the simple format. The raw file holds shape[0]*shape[1]*shape[2]
/// little-endian elements, axis 0 fastest.
struct RawHeader {
    std::array<int, 3> shape{};
    DType dtype = DType::f32;
    Spacing spacing;
    std::string id;
};

/// "<stem>.raw" -> "<stem>.json".
fs::path sidecar_path(const fs::path& raw_path);

enum class Format { simple, nifti };
Format detect_format(const fs::path& path);

// Format-dispatching loaders: .raw -> simple, .nii/.nii.gz -> NIfTI-1.
Volume3D load_volume(const fs::path& path);
void save_volume(const Volume3D& v, const fs::path& path);
LabelVolume load_label(const fs::path& path);
void save_label(const LabelVolume& v, const fs::path& path, const std::string& id = "");

/// Real-valued grid dump (weight maps, probability volumes) in the simple format, float32.
void save_real_grid(const Grid3<double>& g, const Spacing& spacing, const fs::path& path, const std::string& id);

// Low level simple-format access.
RawHeader read_raw_header(const fs::path& raw_path);
void write_raw_header(const RawHeader& h, const fs::path& raw_path);
std::vector<double> read_raw_values(const fs::path& raw_path, const RawHeader& h);
void write_raw_f32(const fs::path& path, std::span<const float> values);
void write_raw_u8(const fs::path& path, std::span<const std::uint8_t> values);
std::vector<float> read_raw_f32(const fs::path& path, std::size_t count);

struct ManifestEntry {
    std::string id;
    std::string volume_path;
    std::optional<std::string> label_path;
    bool annotated = false;
    std::optional<int> m;
    std::optional<int> n;
    /// "train" or "test"; entries default to train.
    std::string split = "train";
};

struct Manifest {
    fs::path base_dir;
    std::vector<ManifestEntry> entries;
    nlohmann::json provenance;

    fs::path resolve(const std::string& rel) const;
    /// First `limit` annotated training entries (all of them when limit < 0).
    std::vector<ManifestEntry> labeled(int limit = -1) const;
    /// Training entries that are not in the labeled set.
    std::vector<ManifestEntry> unlabeled(int limit = -1) const;
    std::vector<ManifestEntry> test() const;
};

Manifest load_manifest(const fs::path& path);
void save_manifest(const Manifest& m, const fs::path& path);

nlohmann::json read_json(const fs::path& path);
void write_json(const nlohmann::json& j, const fs::path& path);
void write_text(const std::string& text, const fs::path& path);
std::string read_text(const fs::path& path);

} // namespace desco::io
