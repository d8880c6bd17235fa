#include "desco/nifti.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <zlib.h>

namespace desco::nifti {

namespace {

constexpr int kHeaderSize = 348;
constexpr int kVoxOffset = 352;

enum DataType : short { DT_UINT8 = 2, DT_INT16 = 4, DT_INT32 = 8, DT_FLOAT32 = 16, DT_FLOAT64 = 64 };

std::vector<unsigned char> slurp(const std::filesystem::path& path)
{
    // gzread passes uncompressed files through unchanged.
    gzFile f = gzopen(path.string().c_str(), "rb");
    if (!f)
        throw IoError("cannot open " + path.string());
    std::vector<unsigned char> bytes;
    unsigned char buf[1 << 16];
    int got = 0;
    while ((got = gzread(f, buf, sizeof buf)) > 0)
        bytes.insert(bytes.end(), buf, buf + got);
    const bool failed = got < 0;
    gzclose(f);
    if (failed)
        throw FormatError(path.string() + ": corrupt gzip stream");
    return bytes;
}

template <class T>
T get(const std::vector<unsigned char>& b, std::size_t off, bool swap)
{
    T v;
    std::memcpy(&v, b.data() + off, sizeof(T));
    if (swap) {
        auto* p = reinterpret_cast<unsigned char*>(&v);
        std::reverse(p, p + sizeof(T));
    }
    return v;
}

template <class T>
void put(std::vector<unsigned char>& b, std::size_t off, T v)
{
    static_assert(std::endian::native == std::endian::little, "writer assumes a little-endian host");
    std::memcpy(b.data() + off, &v, sizeof(T));
}

} // namespace

Image read(const std::filesystem::path& path)
{
    const auto b = slurp(path);
    const std::string name = path.string();
    if (b.size() < kHeaderSize)
        throw FormatError(name + ": truncated header (sizeof_hdr)");

    bool swap = false;
    int sizeof_hdr = get<int>(b, 0, false);
    if (sizeof_hdr != kHeaderSize) {
        swap = true;
        sizeof_hdr = get<int>(b, 0, true);
        if (sizeof_hdr != kHeaderSize)
            throw FormatError(name + ": bad sizeof_hdr " + std::to_string(get<int>(b, 0, false)));
    }
    if (!(b[344] == 'n' && (b[345] == '+' || b[345] == 'i') && b[346] == '1'))
        throw FormatError(name + ": bad magic (expected n+1)");

    short dim[8];
    for (int i = 0; i < 8; ++i)
        dim[i] = get<short>(b, 40 + 2 * i, swap);
    if (dim[0] < 3 || dim[0] > 7)
        throw FormatError(name + ": unsupported dim[0]=" + std::to_string(dim[0]));
    if (dim[1] < 1 || dim[2] < 1 || dim[3] < 1)
        throw FormatError(name + ": non-positive dim");

    const short datatype = get<short>(b, 70, swap);
    float pixdim[8];
    for (int i = 0; i < 8; ++i)
        pixdim[i] = get<float>(b, 76 + 4 * i, swap);
    const float vox_offset = get<float>(b, 108, swap);
    float slope = get<float>(b, 112, swap);
    const float inter = get<float>(b, 116, swap);
    if (slope == 0.0f || !std::isfinite(slope))
        slope = 1.0f;

    Image img;
    img.dims = {dim[1], dim[2], dim[3]};
    img.spacing = {std::abs(pixdim[1]) > 0 ? std::abs(pixdim[1]) : 1.0, std::abs(pixdim[2]) > 0 ? std::abs(pixdim[2]) : 1.0,
                   std::abs(pixdim[3]) > 0 ? std::abs(pixdim[3]) : 1.0};

    std::size_t elem = 0;
    switch (datatype) {
    case DT_UINT8: elem = 1; break;
    case DT_INT16: elem = 2; break;
    case DT_INT32: elem = 4; break;
    case DT_FLOAT32: elem = 4; break;
    case DT_FLOAT64: elem = 8; break;
    default: throw FormatError(name + ": unsupported datatype " + std::to_string(datatype));
    }
    const std::size_t n = img.dims.count();
    const std::size_t off = vox_offset >= kHeaderSize ? std::size_t(vox_offset) : std::size_t(kVoxOffset);
    if (b.size() < off + n * elem)
        throw FormatError(name + ": payload shorter than dim/datatype imply");

    img.data.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t p = off + i * elem;
        double v = 0;
        switch (datatype) {
        case DT_UINT8: v = b[p]; break;
        case DT_INT16: v = get<std::int16_t>(b, p, swap); break;
        case DT_INT32: v = get<std::int32_t>(b, p, swap); break;
        case DT_FLOAT32: v = get<float>(b, p, swap); break;
        case DT_FLOAT64: v = get<double>(b, p, swap); break;
        }
        img.data[i] = v * slope + inter;
    }
    return img;
}

void write(const std::filesystem::path& path, const Dims& dims, const Spacing& spacing,
           const std::vector<double>& data, Payload payload)
{
    if (data.size() != dims.count())
        throw ShapeError("nifti write: data size does not match dims");
    const std::size_t elem = payload == Payload::u8 ? 1 : 4;
    std::vector<unsigned char> b(kVoxOffset + data.size() * elem, 0);

    put<int>(b, 0, kHeaderSize);
    b[38] = 'r';
    const short dim[8] = {3, short(dims.h), short(dims.w), short(dims.d), 1, 1, 1, 1};
    for (int i = 0; i < 8; ++i)
        put<short>(b, 40 + 2 * i, dim[i]);
    put<short>(b, 70, payload == Payload::u8 ? short(DT_UINT8) : short(DT_FLOAT32));
    put<short>(b, 72, short(elem * 8));
    const float pixdim[8] = {1.0f, float(spacing.sx), float(spacing.sy), float(spacing.sz), 1, 1, 1, 1};
    for (int i = 0; i < 8; ++i)
        put<float>(b, 76 + 4 * i, pixdim[i]);
    put<float>(b, 108, float(kVoxOffset));
    put<float>(b, 112, 1.0f);
    put<float>(b, 116, 0.0f);
    b[123] = 2; // millimetres
    put<short>(b, 254, 1); // sform: scaled identity
    put<float>(b, 280, float(spacing.sx));
    put<float>(b, 296 + 4, float(spacing.sy));
    put<float>(b, 312 + 8, float(spacing.sz));
    std::memcpy(b.data() + 344, "n+1\0", 4);

    for (std::size_t i = 0; i < data.size(); ++i) {
        const std::size_t p = kVoxOffset + i * elem;
        if (payload == Payload::u8)
            b[p] = static_cast<unsigned char>(std::clamp(std::lround(data[i]), 0L, 255L));
        else
            put<float>(b, p, float(data[i]));
    }

    const std::string name = path.string();
    if (name.size() > 3 && name.ends_with(".gz")) {
        gzFile f = gzopen(name.c_str(), "wb6");
        if (!f)
            throw IoError("cannot create " + name);
        const int wrote = gzwrite(f, b.data(), unsigned(b.size()));
        gzclose(f);
        if (wrote != int(b.size()))
            throw IoError("short write to " + name);
        return;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw IoError("cannot create " + name);
    out.write(reinterpret_cast<const char*>(b.data()), std::streamsize(b.size()));
    if (!out)
        throw IoError("short write to " + name);
}

} // namespace desco::nifti
