#include "desco/volume_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "desco/nifti.hpp"

namespace desco::io {

static_assert(std::endian::native == std::endian::little, "raw fixtures are little-endian; add byte swapping");

const char* dtype_name(DType t)
{
    switch (t) {
    case DType::u8: return "uint8";
    case DType::i16: return "int16";
    case DType::i32: return "int32";
    case DType::f32: return "float32";
    case DType::f64: return "float64";
    }
    return "?";
}

DType parse_dtype(const std::string& name)
{
    if (name == "uint8") return DType::u8;
    if (name == "int16") return DType::i16;
    if (name == "int32") return DType::i32;
    if (name == "float32") return DType::f32;
    if (name == "float64") return DType::f64;
    throw FormatError("unsupported dtype '" + name + "'");
}

std::size_t dtype_size(DType t)
{
    switch (t) {
    case DType::u8: return 1;
    case DType::i16: return 2;
    case DType::i32: return 4;
    case DType::f32: return 4;
    case DType::f64: return 8;
    }
    return 0;
}

fs::path sidecar_path(const fs::path& raw_path)
{
    fs::path p = raw_path;
    return p.replace_extension(".json");
}

Format detect_format(const fs::path& path)
{
    const std::string s = path.string();
    if (s.ends_with(".nii") || s.ends_with(".nii.gz"))
        return Format::nifti;
    if (s.ends_with(".raw"))
        return Format::simple;
    throw FormatError("unrecognised volume extension: " + s);
}

nlohmann::json read_json(const fs::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw IoError("cannot open " + path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

void write_text(const std::string& text, const fs::path& path)
{
    if (path.has_parent_path())
        fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw IoError("cannot create " + path.string());
    out << text;
    if (!out)
        throw IoError("short write to " + path.string());
}

std::string read_text(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_json(const nlohmann::json& j, const fs::path& path) { write_text(j.dump(2) + "\n", path); }

RawHeader read_raw_header(const fs::path& raw_path)
{
    const fs::path side = sidecar_path(raw_path);
    const auto j = read_json(side);
    RawHeader h;
    const std::string where = side.string();
    if (!j.contains("shape") || !j["shape"].is_array() || j["shape"].size() != 3)
        throw FormatError(where + ": field 'shape' must be an array of 3 integers");
    for (int i = 0; i < 3; ++i) {
        if (!j["shape"][i].is_number_integer() || j["shape"][i].get<int>() < 1)
            throw FormatError(where + ": field 'shape' has a non-positive entry");
        h.shape[i] = j["shape"][i].get<int>();
    }
    if (!j.contains("dtype") || !j["dtype"].is_string())
        throw FormatError(where + ": missing field 'dtype'");
    try {
        h.dtype = parse_dtype(j["dtype"].get<std::string>());
    } catch (const FormatError& e) {
        throw FormatError(where + ": field 'dtype': " + e.what());
    }
    if (j.contains("spacing")) {
        const auto& s = j["spacing"];
        if (!s.is_array() || s.size() != 3)
            throw FormatError(where + ": field 'spacing' must be an array of 3 numbers");
        h.spacing = {s[0].get<double>(), s[1].get<double>(), s[2].get<double>()};
        if (!(h.spacing.sx > 0 && h.spacing.sy > 0 && h.spacing.sz > 0))
            throw FormatError(where + ": field 'spacing' must be positive");
    }
    h.id = j.value("id", std::string{});
    return h;
}

void write_raw_header(const RawHeader& h, const fs::path& raw_path)
{
    nlohmann::ordered_json j;
    j["shape"] = {h.shape[0], h.shape[1], h.shape[2]};
    j["dtype"] = dtype_name(h.dtype);
    j["spacing"] = {h.spacing.sx, h.spacing.sy, h.spacing.sz};
    j["id"] = h.id;
    j["order"] = "axis0-fastest";
    write_text(j.dump(2) + "\n", sidecar_path(raw_path));
}

namespace {

std::vector<unsigned char> read_bytes(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open " + path.string());
    return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {});
}

void write_bytes(const fs::path& path, const void* data, std::size_t n)
{
    if (path.has_parent_path())
        fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw IoError("cannot create " + path.string());
    out.write(static_cast<const char*>(data), std::streamsize(n));
    if (!out)
        throw IoError("short write to " + path.string());
}

template <class T>
T load_le(const unsigned char* p)
{
    T v;
    std::memcpy(&v, p, sizeof(T));
    return v;
}

} // namespace

std::vector<double> read_raw_values(const fs::path& raw_path, const RawHeader& h)
{
    const auto bytes = read_bytes(raw_path);
    const std::size_t n = std::size_t(h.shape[0]) * h.shape[1] * h.shape[2];
    const std::size_t es = dtype_size(h.dtype);
    if (bytes.size() != n * es)
        throw FormatError(raw_path.string() + ": size " + std::to_string(bytes.size()) + " bytes does not match shape/dtype (" +
                          std::to_string(n * es) + " expected)");
    std::vector<double> out(n);
    const unsigned char* p = bytes.data();
    for (std::size_t i = 0; i < n; ++i, p += es) {
        switch (h.dtype) {
        case DType::u8: out[i] = *p; break;
        case DType::i16: out[i] = load_le<std::int16_t>(p); break;
        case DType::i32: out[i] = load_le<std::int32_t>(p); break;
        case DType::f32: out[i] = load_le<float>(p); break;
        case DType::f64: out[i] = load_le<double>(p); break;
        }
    }
    return out;
}

void write_raw_f32(const fs::path& path, std::span<const float> values)
{
    write_bytes(path, values.data(), values.size_bytes());
}

void write_raw_u8(const fs::path& path, std::span<const std::uint8_t> values)
{
    write_bytes(path, values.data(), values.size_bytes());
}

std::vector<float> read_raw_f32(const fs::path& path, std::size_t count)
{
    const auto bytes = read_bytes(path);
    if (bytes.size() != count * sizeof(float))
        throw FormatError(path.string() + ": expected " + std::to_string(count) + " float32 values");
    std::vector<float> out(count);
    std::memcpy(out.data(), bytes.data(), bytes.size());
    return out;
}

Volume3D load_volume(const fs::path& path)
{
    if (detect_format(path) == Format::nifti) {
        auto img = nifti::read(path);
        std::vector<float> data(img.data.begin(), img.data.end());
        Volume3D v(Grid3<float>(img.dims, std::move(data)), img.spacing, path.stem().string());
        require_full_volume(v);
        return v;
    }
    const RawHeader h = read_raw_header(path);
    const Dims dims{h.shape[0], h.shape[1], h.shape[2]};
    std::vector<float> data;
    if (h.dtype == DType::f32) {
        data = read_raw_f32(path, dims.count());
    } else {
        const auto vals = read_raw_values(path, h);
        data.assign(vals.begin(), vals.end());
    }
    Volume3D v(Grid3<float>(dims, std::move(data)), h.spacing, h.id.empty() ? path.stem().string() : h.id);
    require_full_volume(v);
    return v;
}

void save_volume(const Volume3D& v, const fs::path& path)
{
    if (detect_format(path) == Format::nifti) {
        std::vector<double> data(v.grid().values().begin(), v.grid().values().end());
        nifti::write(path, v.dims(), v.spacing(), data, nifti::Payload::f32);
        return;
    }
    write_raw_f32(path, v.grid().values());
    write_raw_header({{v.dims().h, v.dims().w, v.dims().d}, DType::f32, v.spacing(), v.id()}, path);
}

namespace {

LabelVolume to_label(const Dims& dims, const std::vector<double>& vals, const Spacing& sp, const std::string& where)
{
    LabelGrid g(dims);
    for (std::size_t i = 0; i < vals.size(); ++i) {
        const double v = vals[i];
        if (v != 0.0 && v != 1.0)
            throw FormatError(where + ": label value " + std::to_string(v) + " outside {0,1}");
        g[i] = static_cast<std::uint8_t>(v);
    }
    return LabelVolume(std::move(g), sp);
}

} // namespace

LabelVolume load_label(const fs::path& path)
{
    if (detect_format(path) == Format::nifti) {
        auto img = nifti::read(path);
        return to_label(img.dims, img.data, img.spacing, path.string());
    }
    const RawHeader h = read_raw_header(path);
    return to_label({h.shape[0], h.shape[1], h.shape[2]}, read_raw_values(path, h), h.spacing, path.string());
}

void save_label(const LabelVolume& v, const fs::path& path, const std::string& id)
{
    if (detect_format(path) == Format::nifti) {
        std::vector<double> data(v.grid().values().begin(), v.grid().values().end());
        nifti::write(path, v.dims(), v.spacing(), data, nifti::Payload::u8);
        return;
    }
    write_raw_u8(path, v.grid().values());
    write_raw_header({{v.dims().h, v.dims().w, v.dims().d}, DType::u8, v.spacing(), id}, path);
}

void save_real_grid(const Grid3<double>& g, const Spacing& spacing, const fs::path& path, const std::string& id)
{
    std::vector<float> f(g.values().begin(), g.values().end());
    write_raw_f32(path, f);
    write_raw_header({{g.dims().h, g.dims().w, g.dims().d}, DType::f32, spacing, id}, path);
}

// ---------------------------------------------------------------- manifest

fs::path Manifest::resolve(const std::string& rel) const
{
    const fs::path p(rel);
    return p.is_absolute() ? p : base_dir / p;
}

std::vector<ManifestEntry> Manifest::labeled(int limit) const
{
    std::vector<ManifestEntry> out;
    for (const auto& e : entries)
        if (e.split == "train" && e.annotated && (limit < 0 || int(out.size()) < limit))
            out.push_back(e);
    return out;
}

std::vector<ManifestEntry> Manifest::unlabeled(int limit) const
{
    const auto lab = labeled(limit);
    std::vector<ManifestEntry> out;
    for (const auto& e : entries) {
        if (e.split != "train")
            continue;
        const bool in_labeled = std::any_of(lab.begin(), lab.end(), [&](const auto& l) { return l.id == e.id; });
        if (!in_labeled)
            out.push_back(e);
    }
    return out;
}

std::vector<ManifestEntry> Manifest::test() const
{
    std::vector<ManifestEntry> out;
    for (const auto& e : entries)
        if (e.split == "test")
            out.push_back(e);
    return out;
}

Manifest load_manifest(const fs::path& path)
{
    const auto j = read_json(path);
    const std::string where = path.string();
    Manifest m;
    m.base_dir = path.has_parent_path() ? path.parent_path() : fs::path(".");
    const nlohmann::json* list = nullptr;
    if (j.is_array())
        list = &j;
    else if (j.is_object() && j.contains("entries") && j["entries"].is_array())
        list = &j["entries"];
    else
        throw FormatError(where + ": expected an array of entries or an object with 'entries'");
    if (j.is_object() && j.contains("provenance"))
        m.provenance = j["provenance"];

    int idx = 0;
    for (const auto& e : *list) {
        const std::string at = where + ": entry " + std::to_string(idx);
        if (!e.is_object() || !e.contains("volume_path") || !e["volume_path"].is_string())
            throw FormatError(at + ": missing field 'volume_path'");
        ManifestEntry me;
        me.volume_path = e["volume_path"].get<std::string>();
        if (e.contains("label_path") && !e["label_path"].is_null())
            me.label_path = e["label_path"].get<std::string>();
        me.annotated = e.value("annotated", false);
        if (e.contains("m") && !e["m"].is_null())
            me.m = e["m"].get<int>();
        if (e.contains("n") && !e["n"].is_null())
            me.n = e["n"].get<int>();
        me.split = e.value("split", std::string("train"));
        if (me.split != "train" && me.split != "test")
            throw FormatError(at + ": field 'split' must be train or test");
        me.id = e.value("id", fs::path(me.volume_path).stem().string());
        if (me.annotated && (!me.label_path || !me.m || !me.n))
            throw FormatError(at + ": annotated entries need 'label_path', 'm' and 'n'");
        if (me.split == "test" && !me.label_path)
            throw FormatError(at + ": test entries need 'label_path'");
        m.entries.push_back(std::move(me));
        ++idx;
    }
    return m;
}

void save_manifest(const Manifest& m, const fs::path& path)
{
    nlohmann::ordered_json j;
    if (!m.provenance.is_null())
        j["provenance"] = m.provenance;
    j["entries"] = nlohmann::ordered_json::array();
    for (const auto& e : m.entries) {
        nlohmann::ordered_json je;
        je["id"] = e.id;
        je["volume_path"] = e.volume_path;
        je["label_path"] = e.label_path ? nlohmann::ordered_json(*e.label_path) : nlohmann::ordered_json(nullptr);
        je["annotated"] = e.annotated;
        if (e.m) je["m"] = *e.m;
        if (e.n) je["n"] = *e.n;
        je["split"] = e.split;
        j["entries"].push_back(je);
    }
    write_text(j.dump(2) + "\n", path);
}

} // namespace desco::io
