#include "desco/registration.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <queue>

#include <unistd.h>

#include "desco/volume_io.hpp"

namespace desco {

double DeformationField2D::max_magnitude() const
{
    double m = 0;
    for (std::size_t k = 0; k < du.size(); ++k)
        m = std::max(m, std::hypot(double(du[k]), double(dv[k])));
    return m;
}

bool DeformationField2D::finite() const
{
    for (std::size_t k = 0; k < du.size(); ++k)
        if (!std::isfinite(du[k]) || !std::isfinite(dv[k]))
            return false;
    return true;
}

const char* to_string(RegistrationBackend b)
{
    switch (b) {
    case RegistrationBackend::builtin_demons: return "builtin_demons";
    case RegistrationBackend::translation_only: return "translation_only";
    case RegistrationBackend::external_command: return "external_command";
    }
    return "?";
}

RegistrationBackend parse_backend(const std::string& name)
{
    if (name == "builtin_demons") return RegistrationBackend::builtin_demons;
    if (name == "translation_only") return RegistrationBackend::translation_only;
    if (name == "external_command") return RegistrationBackend::external_command;
    throw ConfigError("unknown registration backend '" + name + "'");
}

void RegistrationConfig::validate() const
{
    if (iterations < 1)
        throw ConfigError("registration iterations must be >= 1");
    if (!(sigma >= 0) || !(fluid_sigma >= 0))
        throw ConfigError("registration smoothing sigma must be >= 0");
    if (levels < 1)
        throw ConfigError("registration pyramid levels must be >= 1");
    if (!(field_cap > 0))
        throw ConfigError("registration field_cap must be > 0");
    if (backend == RegistrationBackend::external_command && external_command.empty())
        throw ConfigError("external_command backend needs a command template");
}

namespace {

float sample_bilinear(const ImageSlice& img, double fi, double fj)
{
    fi = std::clamp(fi, 0.0, double(img.rows() - 1));
    fj = std::clamp(fj, 0.0, double(img.cols() - 1));
    const int i0 = std::min(int(fi), img.rows() - 1);
    const int j0 = std::min(int(fj), img.cols() - 1);
    const int i1 = std::min(i0 + 1, img.rows() - 1);
    const int j1 = std::min(j0 + 1, img.cols() - 1);
    const double ti = fi - i0, tj = fj - j0;
    return float((1 - ti) * (1 - tj) * img(i0, j0) + ti * (1 - tj) * img(i1, j0) + (1 - ti) * tj * img(i0, j1) +
                 ti * tj * img(i1, j1));
}

std::vector<double> gaussian_kernel(double sigma)
{
    const int radius = std::max(1, int(std::ceil(3.0 * sigma)));
    std::vector<double> k(std::size_t(2 * radius + 1));
    double sum = 0;
    for (int t = -radius; t <= radius; ++t) {
        k[std::size_t(t + radius)] = std::exp(-0.5 * t * t / (sigma * sigma));
        sum += k[std::size_t(t + radius)];
    }
    for (auto& v : k)
        v /= sum;
    return k;
}

void smooth(ImageSlice& img, double sigma)
{
    if (sigma <= 0)
        return;
    const auto k = gaussian_kernel(sigma);
    const int r = int(k.size() / 2);
    ImageSlice tmp(img.rows(), img.cols());
    for (int j = 0; j < img.cols(); ++j)
        for (int i = 0; i < img.rows(); ++i) {
            double acc = 0;
            for (int t = -r; t <= r; ++t)
                acc += k[std::size_t(t + r)] * img(std::clamp(i + t, 0, img.rows() - 1), j);
            tmp(i, j) = float(acc);
        }
    for (int j = 0; j < img.cols(); ++j)
        for (int i = 0; i < img.rows(); ++i) {
            double acc = 0;
            for (int t = -r; t <= r; ++t)
                acc += k[std::size_t(t + r)] * tmp(i, std::clamp(j + t, 0, img.cols() - 1));
            img(i, j) = float(acc);
        }
}

ImageSlice zscore(const ImageSlice& img)
{
    double mean = 0;
    for (float v : img.values())
        mean += v;
    mean /= double(img.size());
    double var = 0;
    for (float v : img.values())
        var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / double(img.size()));
    ImageSlice out(img.rows(), img.cols());
    for (std::size_t k = 0; k < img.size(); ++k)
        out[k] = float(sd > 1e-12 ? (img[k] - mean) / sd : img[k] - mean);
    return out;
}

ImageSlice downsample(const ImageSlice& img)
{
    const int r = (img.rows() + 1) / 2, c = (img.cols() + 1) / 2;
    ImageSlice out(r, c);
    for (int j = 0; j < c; ++j)
        for (int i = 0; i < r; ++i) {
            double acc = 0;
            int n = 0;
            for (int dj = 0; dj < 2; ++dj)
                for (int di = 0; di < 2; ++di) {
                    const int si = 2 * i + di, sj = 2 * j + dj;
                    if (si < img.rows() && sj < img.cols()) {
                        acc += img(si, sj);
                        ++n;
                    }
                }
            out(i, j) = float(acc / n);
        }
    return out;
}

DeformationField2D upsample(const DeformationField2D& f, int rows, int cols)
{
    DeformationField2D out(rows, cols);
    for (int j = 0; j < cols; ++j)
        for (int i = 0; i < rows; ++i) {
            const double fi = (i + 0.5) / 2.0 - 0.5, fj = (j + 0.5) / 2.0 - 0.5;
            out.du(i, j) = 2.0f * sample_bilinear(f.du, fi, fj);
            out.dv(i, j) = 2.0f * sample_bilinear(f.dv, fi, fj);
        }
    return out;
}

void cap_field(DeformationField2D& f, double cap)
{
    for (std::size_t k = 0; k < f.du.size(); ++k) {
        const double m = std::hypot(double(f.du[k]), double(f.dv[k]));
        if (m > cap) {
            f.du[k] = float(f.du[k] * cap / m);
            f.dv[k] = float(f.dv[k] * cap / m);
        }
    }
}

// Symmetric-gradient demons on one pyramid level. Returns the field with the
// lowest warped MSE among `start` and every iterate.
DeformationField2D demons_level(const ImageSlice& moving, const ImageSlice& fixed, DeformationField2D start,
                                const RegistrationConfig& cfg)
{
    const int R = fixed.rows(), C = fixed.cols();
    DeformationField2D field = std::move(start);
    DeformationField2D best = field;
    double best_mse = mean_squared_error(warp_image(moving, field), fixed);
    double last_mse = best_mse;

    ImageSlice gfi(R, C), gfj(R, C);
    for (int j = 0; j < C; ++j)
        for (int i = 0; i < R; ++i) {
            gfi(i, j) = 0.5f * (fixed(std::min(i + 1, R - 1), j) - fixed(std::max(i - 1, 0), j));
            gfj(i, j) = 0.5f * (fixed(i, std::min(j + 1, C - 1)) - fixed(i, std::max(j - 1, 0)));
        }

    for (int it = 0; it < cfg.iterations; ++it) {
        const ImageSlice warped = warp_image(moving, field);
        DeformationField2D update(R, C);
        for (int j = 0; j < C; ++j)
            for (int i = 0; i < R; ++i) {
                const double r = double(warped(i, j)) - fixed(i, j);
                const double gwi = 0.5 * (warped(std::min(i + 1, R - 1), j) - warped(std::max(i - 1, 0), j));
                const double gwj = 0.5 * (warped(i, std::min(j + 1, C - 1)) - warped(i, std::max(j - 1, 0)));
                const double gi = 0.5 * (gfi(i, j) + gwi);
                const double gj = 0.5 * (gfj(i, j) + gwj);
                const double denom = gi * gi + gj * gj + r * r;
                if (denom > 1e-9) {
                    update.du(i, j) = float(r * gi / denom);
                    update.dv(i, j) = float(r * gj / denom);
                }
            }
        smooth(update.du, cfg.fluid_sigma);
        smooth(update.dv, cfg.fluid_sigma);
        for (std::size_t k = 0; k < field.du.size(); ++k) {
            field.du[k] += update.du[k];
            field.dv[k] += update.dv[k];
        }
        smooth(field.du, cfg.sigma);
        smooth(field.dv, cfg.sigma);
        cap_field(field, cfg.field_cap);
        if (!field.finite())
            throw RegistrationError("demons field became non-finite at iteration " + std::to_string(it) +
                                        " (last mse " + std::to_string(last_mse) + ")",
                                    it, last_mse);
        last_mse = mean_squared_error(warp_image(moving, field), fixed);
        if (last_mse < best_mse) {
            best_mse = last_mse;
            best = field;
        }
    }
    return best;
}

DeformationField2D register_demons(const ImageSlice& moving, const ImageSlice& fixed, const RegistrationConfig& cfg)
{
    std::vector<ImageSlice> mov{moving}, fix{fixed};
    for (int l = 1; l < cfg.levels; ++l) {
        if (mov.back().rows() < 8 || mov.back().cols() < 8)
            break;
        mov.push_back(downsample(mov.back()));
        fix.push_back(downsample(fix.back()));
    }
    RegistrationConfig level_cfg = cfg;
    DeformationField2D field(fix.back().rows(), fix.back().cols());
    for (int l = int(mov.size()) - 1; l >= 0; --l) {
        if (field.rows() != fix[std::size_t(l)].rows() || field.cols() != fix[std::size_t(l)].cols())
            field = upsample(field, fix[std::size_t(l)].rows(), fix[std::size_t(l)].cols());
        level_cfg.field_cap = cfg.field_cap / double(1 << l);
        field = demons_level(mov[std::size_t(l)], fix[std::size_t(l)], std::move(field), level_cfg);
    }
    // Coarse levels can overshoot; the identity is always an admissible answer.
    const DeformationField2D zero(fixed.rows(), fixed.cols());
    if (mean_squared_error(warp_image(moving, field), fixed) > mean_squared_error(moving, fixed))
        return zero;
    return field;
}

double shifted_mse(const ImageSlice& moving, const ImageSlice& fixed, int si, int sj)
{
    double acc = 0;
    for (int j = 0; j < fixed.cols(); ++j)
        for (int i = 0; i < fixed.rows(); ++i) {
            const float m = moving(std::clamp(i - si, 0, moving.rows() - 1), std::clamp(j - sj, 0, moving.cols() - 1));
            const double d = double(m) - fixed(i, j);
            acc += d * d;
        }
    return acc / double(fixed.size());
}

DeformationField2D register_translation(const ImageSlice& moving, const ImageSlice& fixed, const RegistrationConfig& cfg)
{
    const int cap = int(std::floor(cfg.field_cap));
    double best = std::numeric_limits<double>::infinity();
    int bi = 0, bj = 0;
    for (int sj = -cap; sj <= cap; ++sj)
        for (int si = -cap; si <= cap; ++si) {
            if (si * si + sj * sj > cap * cap)
                continue;
            const double e = shifted_mse(moving, fixed, si, sj);
            if (e < best) {
                best = e;
                bi = si;
                bj = sj;
            }
        }
    // parabolic sub-voxel refinement per axis
    auto vertex = [](double em, double e0, double ep) {
        const double den = em - 2 * e0 + ep;
        return den > 1e-12 ? std::clamp(0.5 * (em - ep) / den, -0.5, 0.5) : 0.0;
    };
    const double oi = vertex(shifted_mse(moving, fixed, bi - 1, bj), best, shifted_mse(moving, fixed, bi + 1, bj));
    const double oj = vertex(shifted_mse(moving, fixed, bi, bj - 1), best, shifted_mse(moving, fixed, bi, bj + 1));
    DeformationField2D f(fixed.rows(), fixed.cols());
    std::fill(f.du.values().begin(), f.du.values().end(), float(bi + oi));
    std::fill(f.dv.values().begin(), f.dv.values().end(), float(bj + oj));
    if (!f.finite())
        throw RegistrationError("translation search produced a non-finite shift", 0, best);
    return f;
}

std::string replace_all(std::string s, const std::string& from, const std::string& to)
{
    for (std::size_t p = s.find(from); p != std::string::npos; p = s.find(from, p + to.size()))
        s.replace(p, from.size(), to);
    return s;
}

DeformationField2D register_external(const ImageSlice& moving, const ImageSlice& fixed, const RegistrationConfig& cfg)
{
    static std::atomic<unsigned> counter{0};
    const auto dir = std::filesystem::temp_directory_path() /
                     ("desco_reg_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(dir);
    const auto mp = dir / "moving.raw", fp = dir / "fixed.raw", op = dir / "field.raw";
    save_slice(moving, mp);
    save_slice(fixed, fp);
    std::string cmd = replace_all(cfg.external_command, "{moving}", mp.string());
    cmd = replace_all(cmd, "{fixed}", fp.string());
    cmd = replace_all(cmd, "{out}", op.string());
    const int rc = std::system(cmd.c_str());
    if (rc != 0) {
        std::filesystem::remove_all(dir);
        throw RegistrationError("external registration command exited with status " + std::to_string(rc), 0,
                                std::numeric_limits<double>::quiet_NaN());
    }
    DeformationField2D f;
    try {
        f = load_field(op);
    } catch (...) {
        std::filesystem::remove_all(dir);
        throw;
    }
    std::filesystem::remove_all(dir);
    if (f.rows() != fixed.rows() || f.cols() != fixed.cols())
        throw RegistrationError("external registration returned a field of the wrong shape", 0,
                                std::numeric_limits<double>::quiet_NaN());
    if (!f.finite())
        throw RegistrationError("external registration returned a non-finite field", 0,
                                std::numeric_limits<double>::quiet_NaN());
    return f;
}

} // namespace

double mean_squared_error(const ImageSlice& a, const ImageSlice& b)
{
    double acc = 0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        const double d = double(a[k]) - b[k];
        acc += d * d;
    }
    return acc / double(a.size());
}

ImageSlice warp_image(const ImageSlice& image, const DeformationField2D& field)
{
    ImageSlice out(image.rows(), image.cols());
    for (int j = 0; j < image.cols(); ++j)
        for (int i = 0; i < image.rows(); ++i)
            out(i, j) = sample_bilinear(image, i - double(field.du(i, j)), j - double(field.dv(i, j)));
    return out;
}

LabelSlice warp_label(const LabelSlice& label, const DeformationField2D& field)
{
    if (label.rows() != field.rows() || label.cols() != field.cols())
        throw ShapeError("warp_label: label and field shapes differ");
    LabelSlice out(label.rows(), label.cols(), 0);
    for (int j = 0; j < label.cols(); ++j)
        for (int i = 0; i < label.rows(); ++i) {
            const int si = int(std::lround(i - double(field.du(i, j))));
            const int sj = int(std::lround(j - double(field.dv(i, j))));
            out(i, j) = label.contains(si, sj) ? label(si, sj) : 0;
        }
    return out;
}

DeformationField2D compose(const DeformationField2D& first, const DeformationField2D& second)
{
    DeformationField2D out(second.rows(), second.cols());
    for (int j = 0; j < second.cols(); ++j)
        for (int i = 0; i < second.rows(); ++i) {
            const double fi = i - double(second.du(i, j)), fj = j - double(second.dv(i, j));
            out.du(i, j) = second.du(i, j) + sample_bilinear(first.du, fi, fj);
            out.dv(i, j) = second.dv(i, j) + sample_bilinear(first.dv, fi, fj);
        }
    return out;
}

DeformationField2D register_slices(const ImageSlice& moving, const ImageSlice& fixed, const RegistrationConfig& cfg)
{
    cfg.validate();
    if (!moving.same_shape(fixed))
        throw ShapeError("register_slices: moving and fixed shapes differ");
    for (std::size_t k = 0; k < moving.size(); ++k)
        if (!std::isfinite(moving[k]) || !std::isfinite(fixed[k]))
            throw ShapeError("register_slices: non-finite intensities");

    switch (cfg.backend) {
    case RegistrationBackend::builtin_demons: return register_demons(zscore(moving), zscore(fixed), cfg);
    case RegistrationBackend::translation_only: return register_translation(zscore(moving), zscore(fixed), cfg);
    case RegistrationBackend::external_command: return register_external(moving, fixed, cfg);
    }
    throw ConfigError("unknown backend");
}

LabelSlice morphology_cleanup(const LabelSlice& label)
{
    const int R = label.rows(), C = label.cols();
    std::vector<int> comp(label.size(), -1);
    int best_comp = -1;
    std::size_t best_size = 0;
    int next = 0;
    for (int j = 0; j < C; ++j)
        for (int i = 0; i < R; ++i) {
            if (!label(i, j) || comp[label.index(i, j)] >= 0)
                continue;
            std::size_t size = 0;
            std::queue<std::pair<int, int>> q;
            q.push({i, j});
            comp[label.index(i, j)] = next;
            while (!q.empty()) {
                auto [ci, cj] = q.front();
                q.pop();
                ++size;
                for (int dj = -1; dj <= 1; ++dj)
                    for (int di = -1; di <= 1; ++di) {
                        const int ni = ci + di, nj = cj + dj;
                        if (label.contains(ni, nj) && label(ni, nj) && comp[label.index(ni, nj)] < 0) {
                            comp[label.index(ni, nj)] = next;
                            q.push({ni, nj});
                        }
                    }
            }
            // first-found wins ties, keeping the result scan-order deterministic
            if (size > best_size) {
                best_size = size;
                best_comp = next;
            }
            ++next;
        }

    LabelSlice largest(R, C, 0);
    for (std::size_t k = 0; k < label.size(); ++k)
        largest[k] = (best_comp >= 0 && comp[k] == best_comp) ? 1 : 0;

    // Opening with a 3x3 square. Neighbours outside the slice are ignored, so
    // objects touching the border are not eroded from that side.
    LabelSlice eroded(R, C, 0);
    for (int j = 0; j < C; ++j)
        for (int i = 0; i < R; ++i) {
            bool keep = largest(i, j) != 0;
            for (int dj = -1; dj <= 1 && keep; ++dj)
                for (int di = -1; di <= 1 && keep; ++di)
                    if (largest.contains(i + di, j + dj) && !largest(i + di, j + dj))
                        keep = false;
            eroded(i, j) = keep ? 1 : 0;
        }
    LabelSlice opened(R, C, 0);
    for (int j = 0; j < C; ++j)
        for (int i = 0; i < R; ++i) {
            bool hit = false;
            for (int dj = -1; dj <= 1 && !hit; ++dj)
                for (int di = -1; di <= 1 && !hit; ++di)
                    if (eroded.contains(i + di, j + dj) && eroded(i + di, j + dj))
                        hit = true;
            opened(i, j) = hit ? 1 : 0;
        }
    return opened;
}

PseudoLabelVolume propagate(const Volume3D& volume, const LabelSlice& label, Plane plane, int index,
                            const RegistrationConfig& cfg, const PlaneAxes& axes)
{
    cfg.validate();
    const int extent = plane_extent(volume.dims(), plane, axes);
    if (index < 0 || index >= extent)
        throw BoundsError("propagation source index " + std::to_string(index) + " out of range for plane " +
                          to_string(plane) + " (extent " + std::to_string(extent) + ")");
    const ImageSlice source_image = extract_slice(volume, plane, index, axes);
    if (!label.same_shape(LabelSlice(source_image.rows(), source_image.cols())))
        throw ShapeError("propagation label shape does not match the slice shape of plane " + std::string(to_string(plane)));

    PseudoLabelVolume out;
    out.data = LabelGrid(volume.dims());
    out.source_plane = plane;
    out.source_index = index;
    insert_slice(out.data, plane, index, label, axes);

    auto report = std::vector<SliceQuality>(std::size_t(extent));
    std::size_t area = 0;
    for (auto v : label.values())
        area += v;
    report[std::size_t(index)] = {index, 0, area};

    // Each direction chains adjacent-pair fields; the accumulated field from the
    // source keeps sub-voxel motion that per-hop nearest-neighbour resampling would drop.
    for (int step : {-1, +1}) {
        DeformationField2D accumulated(source_image.rows(), source_image.cols());
        ImageSlice previous = source_image;
        for (int k = index + step; k >= 0 && k < extent; k += step) {
            const ImageSlice current = extract_slice(volume, plane, k, axes);
            DeformationField2D hop;
            try {
                hop = register_slices(previous, current, cfg);
            } catch (const RegistrationError& e) {
                throw PropagationError("registration failed between slices " + std::to_string(k - step) + " and " +
                                           std::to_string(k) + " of plane " + to_string(plane) + ": " + e.what(),
                                       k);
            }
            accumulated = compose(accumulated, hop);
            const LabelSlice pseudo = morphology_cleanup(warp_label(label, accumulated));
            insert_slice(out.data, plane, k, pseudo, axes);
            std::size_t fg = 0;
            for (auto v : pseudo.values())
                fg += v;
            report[std::size_t(k)] = {k, std::abs(k - index), fg};
            previous = current;
        }
    }
    out.report = std::move(report);
    return out;
}

std::pair<PseudoLabelVolume, PseudoLabelVolume> propagate_orthogonal(const Volume3D& volume,
                                                                     const OrthogonalAnnotation& annotation,
                                                                     const RegistrationConfig& cfg)
{
    annotation.validate();
    if (!(annotation.dims == volume.dims()))
        throw ShapeError("annotation dims do not match volume " + to_string(volume.dims()));
    return {propagate(volume, annotation.label_a, Plane::A, annotation.m, cfg, annotation.axes),
            propagate(volume, annotation.label_b, Plane::B, annotation.n, cfg, annotation.axes)};
}

void save_field(const DeformationField2D& field, const std::filesystem::path& raw_path)
{
    std::vector<float> buf;
    buf.reserve(field.du.size() * 2);
    buf.insert(buf.end(), field.du.values().begin(), field.du.values().end());
    buf.insert(buf.end(), field.dv.values().begin(), field.dv.values().end());
    io::write_raw_f32(raw_path, buf);
    nlohmann::ordered_json j;
    j["shape"] = {field.rows(), field.cols()};
    j["dtype"] = "float32";
    j["order"] = {"du", "dv"};
    io::write_text(j.dump(2) + "\n", io::sidecar_path(raw_path));
}

DeformationField2D load_field(const std::filesystem::path& raw_path)
{
    const auto side = io::sidecar_path(raw_path);
    const auto j = io::read_json(side);
    if (!j.contains("shape") || !j["shape"].is_array() || j["shape"].size() != 2)
        throw FormatError(side.string() + ": field 'shape' must be [rows, cols]");
    const int rows = j["shape"][0].get<int>(), cols = j["shape"][1].get<int>();
    if (rows < 1 || cols < 1)
        throw FormatError(side.string() + ": field 'shape' must be positive");
    if (j.contains("order") && j["order"] != nlohmann::json({"du", "dv"}))
        throw FormatError(side.string() + ": field 'order' must be [\"du\", \"dv\"]");
    const std::size_t n = std::size_t(rows) * std::size_t(cols);
    const auto vals = io::read_raw_f32(raw_path, 2 * n);
    DeformationField2D f(rows, cols);
    std::copy(vals.begin(), vals.begin() + std::ptrdiff_t(n), f.du.values().begin());
    std::copy(vals.begin() + std::ptrdiff_t(n), vals.end(), f.dv.values().begin());
    return f;
}

void save_slice(const ImageSlice& slice, const std::filesystem::path& raw_path)
{
    io::write_raw_f32(raw_path, slice.values());
    io::write_raw_header({{slice.rows(), slice.cols(), 1}, io::DType::f32, Spacing{}, "slice"}, raw_path);
}

ImageSlice load_slice(const std::filesystem::path& raw_path)
{
    const auto h = io::read_raw_header(raw_path);
    if (h.shape[2] != 1)
        throw FormatError(raw_path.string() + ": expected a 2D slice (shape[2] == 1)");
    const auto vals = io::read_raw_values(raw_path, h);
    ImageSlice s(h.shape[0], h.shape[1]);
    for (std::size_t k = 0; k < vals.size(); ++k)
        s[k] = float(vals[k]);
    return s;
}

} // namespace desco
