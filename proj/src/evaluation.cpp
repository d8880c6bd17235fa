#include "desco/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include <Eigen/Dense>

namespace desco {

namespace {

void check_same(const LabelGrid& a, const LabelGrid& b, const char* what)
{
    if (!(a.dims() == b.dims()))
        throw ShapeError(std::string(what) + ": mask shapes differ (" + to_string(a.dims()) + " vs " +
                         to_string(b.dims()) + ")");
}

struct Counts {
    double inter = 0, p = 0, g = 0;
};

Counts count(const LabelGrid& pred, const LabelGrid& gt)
{
    Counts c;
    for (std::size_t k = 0; k < pred.size(); ++k) {
        const bool a = pred[k] != 0, b = gt[k] != 0;
        c.inter += a && b;
        c.p += a;
        c.g += b;
    }
    return c;
}

} // namespace

double dice(const LabelGrid& pred, const LabelGrid& gt)
{
    check_same(pred, gt, "dice");
    const Counts c = count(pred, gt);
    if (c.p + c.g == 0)
        return 1.0;
    return 2.0 * c.inter / (c.p + c.g);
}

double jaccard(const LabelGrid& pred, const LabelGrid& gt)
{
    check_same(pred, gt, "jaccard");
    const Counts c = count(pred, gt);
    const double uni = c.p + c.g - c.inter;
    if (uni == 0)
        return 1.0;
    return c.inter / uni;
}

LabelGrid boundary(const LabelGrid& mask)
{
    const Dims& d = mask.dims();
    LabelGrid out(d);
    static constexpr int nb[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
    for (int z = 0; z < d.d; ++z)
        for (int y = 0; y < d.w; ++y)
            for (int x = 0; x < d.h; ++x) {
                if (!mask(x, y, z))
                    continue;
                for (const auto& o : nb) {
                    const int a = x + o[0], b = y + o[1], c = z + o[2];
                    if (!mask.contains(a, b, c) || !mask(a, b, c)) {
                        out(x, y, z) = 1;
                        break;
                    }
                }
            }
    return out;
}

namespace {

// One pass of the lower-envelope-of-parabolas squared distance transform
// along a line of n samples spaced `h` apart.
void edt_line(const double* f, double* out, int n, double h, std::vector<int>& v, std::vector<double>& zs)
{
    constexpr double inf = std::numeric_limits<double>::infinity();
    v.assign(std::size_t(n), 0);
    zs.assign(std::size_t(n) + 1, 0.0);
    int k = -1;
    for (int q = 0; q < n; ++q) {
        if (f[q] == inf)
            continue;
        const double xq = q * h;
        while (k >= 0) {
            const double xv = v[std::size_t(k)] * h;
            const double s = ((f[q] + xq * xq) - (f[v[std::size_t(k)]] + xv * xv)) / (2.0 * (xq - xv));
            if (s <= zs[std::size_t(k)])
                --k;
            else {
                ++k;
                v[std::size_t(k)] = q;
                zs[std::size_t(k)] = s;
                zs[std::size_t(k) + 1] = inf;
                break;
            }
        }
        if (k < 0) {
            k = 0;
            v[0] = q;
            zs[0] = -inf;
            zs[1] = inf;
        }
    }
    if (k < 0) {
        std::fill(out, out + n, inf);
        return;
    }
    int j = 0;
    for (int q = 0; q < n; ++q) {
        const double xq = q * h;
        while (zs[std::size_t(j) + 1] < xq)
            ++j;
        const double xv = v[std::size_t(j)] * h;
        out[q] = (xq - xv) * (xq - xv) + f[v[std::size_t(j)]];
    }
}

} // namespace

Grid3<double> distance_transform(const LabelGrid& sites, const Spacing& spacing)
{
    const Dims& d = sites.dims();
    constexpr double inf = std::numeric_limits<double>::infinity();
    Grid3<double> g(d, inf);
    for (std::size_t k = 0; k < sites.size(); ++k)
        if (sites[k])
            g[k] = 0.0;

    std::vector<int> v;
    std::vector<double> zs, line_in, line_out;
    const int extents[3] = {d.h, d.w, d.d};
    for (int axis = 0; axis < 3; ++axis) {
        const int n = extents[axis];
        const double h = spacing.along(axis);
        line_in.resize(std::size_t(n));
        line_out.resize(std::size_t(n));
        const int a1 = axis == 0 ? 1 : 0, a2 = axis == 2 ? 1 : 2;
        for (int j = 0; j < extents[a2]; ++j)
            for (int i = 0; i < extents[a1]; ++i) {
                auto at = [&](int t) -> double& {
                    int c[3];
                    c[axis] = t;
                    c[a1] = i;
                    c[a2] = j;
                    return g(c[0], c[1], c[2]);
                };
                for (int t = 0; t < n; ++t)
                    line_in[std::size_t(t)] = at(t);
                edt_line(line_in.data(), line_out.data(), n, h, v, zs);
                for (int t = 0; t < n; ++t)
                    at(t) = line_out[std::size_t(t)];
            }
    }
    for (auto& x : g.values())
        x = std::sqrt(x);
    return g;
}

std::vector<double> SurfaceDistances::symmetric() const
{
    std::vector<double> all = pred_to_gt;
    all.insert(all.end(), gt_to_pred.begin(), gt_to_pred.end());
    return all;
}

SurfaceDistances surface_distances(const LabelGrid& pred, const LabelGrid& gt, const Spacing& spacing)
{
    check_same(pred, gt, "surface_distances");
    const Counts c = count(pred, gt);
    if (c.p == 0 || c.g == 0)
        throw MetricUndefinedError("surface distance undefined: " + std::string(c.p == 0 ? "prediction" : "ground truth") +
                                   " mask is empty");
    const LabelGrid bp = boundary(pred), bg = boundary(gt);
    const Grid3<double> to_gt = distance_transform(bg, spacing);
    const Grid3<double> to_pred = distance_transform(bp, spacing);
    SurfaceDistances s;
    for (std::size_t k = 0; k < bp.size(); ++k) {
        if (bp[k])
            s.pred_to_gt.push_back(to_gt[k]);
        if (bg[k])
            s.gt_to_pred.push_back(to_pred[k]);
    }
    return s;
}

double percentile(std::vector<double> values, double q)
{
    if (values.empty())
        throw MetricUndefinedError("percentile of an empty sample");
    std::sort(values.begin(), values.end());
    const double pos = q / 100.0 * double(values.size() - 1);
    const std::size_t lo = std::size_t(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - double(lo);
    return values[lo] + frac * (values[hi] - values[lo]);
}

double hd95(const LabelGrid& pred, const LabelGrid& gt, const Spacing& spacing)
{
    return percentile(surface_distances(pred, gt, spacing).symmetric(), 95.0);
}

double hausdorff(const LabelGrid& pred, const LabelGrid& gt, const Spacing& spacing)
{
    const auto all = surface_distances(pred, gt, spacing).symmetric();
    return *std::max_element(all.begin(), all.end());
}

double asd(const LabelGrid& pred, const LabelGrid& gt, const Spacing& spacing)
{
    const auto all = surface_distances(pred, gt, spacing).symmetric();
    double s = 0;
    for (double v : all)
        s += v;
    return s / double(all.size());
}

const char* to_string(HsicKernel k)
{
    return k == HsicKernel::linear ? "linear" : "rbf";
}

namespace {

Eigen::MatrixXd gram(const Eigen::MatrixXd& x, HsicKernel kernel)
{
    const Eigen::MatrixXd lin = x * x.transpose();
    if (kernel == HsicKernel::linear)
        return lin;
    const Eigen::Index n = x.rows();
    const Eigen::VectorXd sq = lin.diagonal();
    Eigen::MatrixXd d2(n, n);
    std::vector<double> dists;
    dists.reserve(std::size_t(n * (n - 1) / 2));
    for (Eigen::Index j = 0; j < n; ++j)
        for (Eigen::Index i = 0; i < n; ++i) {
            d2(i, j) = std::max(0.0, sq(i) + sq(j) - 2.0 * lin(i, j));
            if (i < j)
                dists.push_back(std::sqrt(d2(i, j)));
        }
    double sigma = dists.empty() ? 1.0 : percentile(dists, 50.0);
    if (!(sigma > 0))
        sigma = 1.0;
    return (-d2 / (2.0 * sigma * sigma)).array().exp().matrix();
}

} // namespace

double hsic(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, HsicKernel kernel)
{
    if (x.rows() != y.rows())
        throw ShapeError("hsic: sample counts differ (" + std::to_string(x.rows()) + " vs " + std::to_string(y.rows()) + ")");
    const Eigen::Index n = x.rows();
    if (n < 2)
        throw ShapeError("hsic needs at least two samples");
    const Eigen::MatrixXd K = gram(x, kernel);
    const Eigen::MatrixXd L = gram(y, kernel);
    // H K H: subtract row and column means, add back the grand mean
    const Eigen::VectorXd rm = K.rowwise().mean();
    const Eigen::VectorXd cm = K.colwise().mean().transpose();
    const double gm = K.mean();
    Eigen::MatrixXd Kc = K;
    Kc.colwise() -= rm;
    Kc.rowwise() -= cm.transpose();
    Kc.array() += gm;
    return (Kc.array() * L.array()).sum() / double((n - 1) * (n - 1));
}

Eigen::MatrixXd slice_features(const ImageSlice& slice)
{
    Eigen::MatrixXd m(slice.rows(), slice.cols());
    for (int j = 0; j < slice.cols(); ++j)
        for (int i = 0; i < slice.rows(); ++i)
            m(i, j) = slice(i, j);
    return m;
}

std::vector<SlicePairHsic> compare_slice_pairs(const std::vector<Volume3D>& volumes, int pairs, std::uint64_t seed,
                                               const PlaneAxes& axes)
{
    if (volumes.empty())
        throw ConfigError("compare_slice_pairs needs at least one volume");
    if (pairs < 1)
        throw ConfigError("compare_slice_pairs needs pairs >= 1");
    axes.validate();
    std::mt19937_64 rng(seed);
    auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
    std::vector<SlicePairHsic> out;
    for (int kind = 0; kind < 2; ++kind)
        for (int k = 0; k < pairs; ++k) {
            const Volume3D& v = volumes[std::size_t(pick(0, int(volumes.size()) - 1))];
            const int ea = plane_extent(v.dims(), Plane::A, axes), eb = plane_extent(v.dims(), Plane::B, axes);
            SlicePairHsic r;
            r.volume_id = v.id();
            r.orthogonal = kind == 1;
            r.index_1 = pick(0, ea - 1);
            if (r.orthogonal) {
                r.index_2 = pick(0, eb - 1);
            } else {
                do
                    r.index_2 = pick(0, ea - 1);
                while (r.index_2 == r.index_1);
            }
            const auto x = slice_features(extract_slice(v, Plane::A, r.index_1, axes));
            const auto y = slice_features(extract_slice(v, r.orthogonal ? Plane::B : Plane::A, r.index_2, axes));
            if (x.rows() != y.rows())
                throw ShapeError("slice pair row counts differ (" + std::to_string(x.rows()) + " vs " +
                                 std::to_string(y.rows()) + "); use a volume with equal in-plane extents");
            r.linear = hsic(x, y, HsicKernel::linear);
            r.rbf = hsic(x, y, HsicKernel::rbf);
            out.push_back(r);
        }
    return out;
}

VolumeMetrics compute_metrics(const std::string& id, const LabelGrid& pred, const LabelGrid& gt, const Spacing& spacing)
{
    VolumeMetrics m;
    m.id = id;
    m.dice = dice(pred, gt);
    m.jaccard = jaccard(pred, gt);
    try {
        const auto all = surface_distances(pred, gt, spacing).symmetric();
        m.hd95 = percentile(all, 95.0);
        double s = 0;
        for (double v : all)
            s += v;
        m.asd = s / double(all.size());
    } catch (const MetricUndefinedError&) {
        m.hd95 = m.asd = std::numeric_limits<double>::quiet_NaN();
        m.undefined_surface = true;
    }
    return m;
}

Aggregate aggregate(const std::vector<double>& values)
{
    Aggregate a;
    double s = 0;
    for (double v : values)
        if (std::isfinite(v)) {
            s += v;
            ++a.count;
        }
    if (a.count == 0) {
        a.mean = a.std = std::numeric_limits<double>::quiet_NaN();
        return a;
    }
    a.mean = s / a.count;
    double var = 0;
    for (double v : values)
        if (std::isfinite(v))
            var += (v - a.mean) * (v - a.mean);
    a.std = std::sqrt(var / a.count);
    return a;
}

} // namespace desco
