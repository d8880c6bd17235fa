#include "desco/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

namespace desco {

void PhantomSpec::validate() const
{
    if (dims.h < 16 || dims.w < 16 || dims.d < 16)
        throw ConfigError("phantom dims must be >= 16 on every axis, got " + to_string(dims));
    if (n_blobs < 1)
        throw ConfigError("phantom needs at least one blob");
    if (n_distractors < 0)
        throw ConfigError("n_distractors must be >= 0");
    if (!(drift >= 0))
        throw ConfigError("phantom drift must be >= 0");
    if (!(noise_sigma >= 0))
        throw ConfigError("phantom noise_sigma must be >= 0");
}

namespace {

struct Ellipsoid {
    double cx, cy, cz;
    double a, b, c;   // radii along x, y, z
    double sx, sy;    // shear of the x/y centre per unit z

    bool contains(double x, double y, double z) const
    {
        const double Z = z - cz;
        const double X = x - cx - sx * Z;
        const double Y = y - cy - sy * Z;
        return (X * X) / (a * a) + (Y * Y) / (b * b) + (Z * Z) / (c * c) <= 1.0;
    }
    double extent() const { return std::max({a, b, c}) + std::max(std::abs(sx), std::abs(sy)) * c; }
};

// Cross-sections at fixed x are centred at z*(x) = x * sx c^2 / (a^2 + sx^2 c^2)
// (and y* = sy z*), so the per-slice centre motion in plane B is that slope.
double plane_b_slope(const Ellipsoid& e)
{
    const double k = std::abs(e.sx) * e.c * e.c / (e.a * e.a + e.sx * e.sx * e.c * e.c);
    return std::max(k, k * std::abs(e.sy));
}

void limit_drift(Ellipsoid& e, double drift)
{
    while (plane_b_slope(e) > drift) {
        e.sx *= 0.9;
        e.sy *= 0.9;
    }
}

} // namespace

Phantom generate_phantom(const PhantomSpec& spec, const std::string& id)
{
    spec.validate();
    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

    const Dims& d = spec.dims;
    const double smallest = std::min({d.h, d.w, d.d});

    std::vector<Ellipsoid> blobs;
    const double spread = spec.n_blobs == 1 ? 0.08 : 0.2;
    for (int k = 0; k < spec.n_blobs; ++k) {
        Ellipsoid e{};
        e.a = uniform(0.16, 0.24) * smallest;
        e.b = uniform(0.16, 0.24) * smallest;
        e.c = uniform(0.16, 0.24) * smallest;
        e.cx = d.h * (0.5 + uniform(-spread, spread));
        e.cy = d.w * (0.5 + uniform(-spread, spread));
        e.cz = d.d * (0.5 + uniform(-spread, spread));
        e.sx = uniform(-spec.drift, spec.drift);
        e.sy = uniform(-spec.drift, spec.drift);
        limit_drift(e, spec.drift);
        blobs.push_back(e);
    }

    std::vector<Ellipsoid> distractors;
    for (int k = 0; k < spec.n_distractors; ++k) {
        for (int attempt = 0; attempt < 200; ++attempt) {
            Ellipsoid e{};
            e.a = uniform(0.08, 0.12) * smallest;
            e.b = uniform(0.08, 0.12) * smallest;
            e.c = uniform(0.08, 0.12) * smallest;
            e.sx = e.sy = 0.0;
            const double r = e.extent();
            e.cx = uniform(r + 1, d.h - r - 2);
            e.cy = uniform(r + 1, d.w - r - 2);
            e.cz = uniform(r + 1, d.d - r - 2);
            auto clear_of = [&](const Ellipsoid& o) {
                const double dist = std::hypot(e.cx - o.cx, e.cy - o.cy, e.cz - o.cz);
                return dist > r + o.extent() + 2.0;
            };
            if (std::all_of(blobs.begin(), blobs.end(), clear_of) &&
                std::all_of(distractors.begin(), distractors.end(), clear_of)) {
                distractors.push_back(e);
                break;
            }
        }
    }

    Grid3<float> image(d);
    LabelGrid label(d);
    std::normal_distribution<double> noise(0.0, 1.0);
    for (int z = 0; z < d.d; ++z)
        for (int y = 0; y < d.w; ++y)
            for (int x = 0; x < d.h; ++x) {
                const bool fg = std::any_of(blobs.begin(), blobs.end(), [&](const auto& e) { return e.contains(x, y, z); });
                const bool distract =
                    !fg && std::any_of(distractors.begin(), distractors.end(), [&](const auto& e) { return e.contains(x, y, z); });
                double v = fg ? spec.foreground_intensity
                              : (distract ? spec.distractor_intensity : spec.background_intensity);
                if (spec.noise_sigma > 0)
                    v += spec.noise_sigma * noise(rng);
                image(x, y, z) = float(v);
                label(x, y, z) = fg ? 1 : 0;
            }

    Volume3D vol(std::move(image), spec.spacing, id);
    require_full_volume(vol);
    return {std::move(vol), LabelVolume(std::move(label), spec.spacing)};
}

Phantom generate_translation_phantom(const TranslationPhantomSpec& spec, const std::string& id)
{
    const Dims& d = spec.dims;
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> noise(0.0, 1.0);
    const double z0 = (d.d - 1) / 2.0;
    Grid3<float> image(d);
    LabelGrid label(d);
    for (int z = 0; z < d.d; ++z) {
        const double cx = (d.h - 1) / 2.0 + spec.shift_x * (z - z0);
        const double cy = (d.w - 1) / 2.0 + spec.shift_y * (z - z0);
        for (int y = 0; y < d.w; ++y)
            for (int x = 0; x < d.h; ++x) {
                const double X = (x - cx) / spec.radius_x;
                const double Y = (y - cy) / spec.radius_y;
                const bool fg = X * X + Y * Y <= 1.0;
                double v = fg ? 1.0 : 0.0;
                if (spec.noise_sigma > 0)
                    v += spec.noise_sigma * noise(rng);
                image(x, y, z) = float(v);
                label(x, y, z) = fg ? 1 : 0;
            }
    }
    Volume3D vol(std::move(image), Spacing{}, id);
    require_full_volume(vol);
    return {std::move(vol), LabelVolume(std::move(label), Spacing{})};
}

namespace {

int centroid_slice(const LabelVolume& label, int axis)
{
    const Dims& d = label.dims();
    const int extent = d.extent(axis);
    std::vector<std::size_t> per_slice(std::size_t(extent), 0);
    for (int z = 0; z < d.d; ++z)
        for (int y = 0; y < d.w; ++y)
            for (int x = 0; x < d.h; ++x)
                if (label.grid()(x, y, z)) {
                    const int c = axis == 0 ? x : (axis == 1 ? y : z);
                    ++per_slice[std::size_t(c)];
                }
    double sum = 0, count = 0;
    for (int k = 0; k < extent; ++k) {
        sum += double(k) * double(per_slice[std::size_t(k)]);
        count += double(per_slice[std::size_t(k)]);
    }
    if (count == 0)
        throw NoTargetError("label has no foreground; cannot select annotation slices");
    const double centroid = sum / count;
    // round half toward the lower index
    int k = int(std::ceil(centroid - 0.5));
    k = std::clamp(k, 0, extent - 1);
    if (per_slice[std::size_t(k)] > 0)
        return k;
    for (int r = 1; r < extent; ++r) {
        if (k - r >= 0 && per_slice[std::size_t(k - r)] > 0)
            return k - r;
        if (k + r < extent && per_slice[std::size_t(k + r)] > 0)
            return k + r;
    }
    return k;
}

} // namespace

std::pair<int, int> select_annotation_slices(const LabelVolume& label, const PlaneAxes& axes)
{
    axes.validate();
    return {centroid_slice(label, axes.a), centroid_slice(label, axes.b)};
}

OrthogonalAnnotation make_orthogonal_annotation(const LabelVolume& label, int m, int n, const PlaneAxes& axes)
{
    OrthogonalAnnotation ann;
    ann.m = m;
    ann.n = n;
    ann.dims = label.dims();
    ann.axes = axes;
    ann.label_a = extract_slice(label, Plane::A, m, axes);
    ann.label_b = extract_slice(label, Plane::B, n, axes);
    ann.validate();
    return ann;
}

} // namespace desco
