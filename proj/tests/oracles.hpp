#pragma once

// Independent reference implementations used by unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "desco/volume.hpp"

namespace desco::oracle {

/// Max relative error between an analytic gradient and central differences of
/// `f` with step h, over every coordinate of `x`.
inline double fd_max_rel_error(const std::function<double(const std::vector<double>&)>& f, std::vector<double> x,
                               const std::vector<double>& analytic, double h = 1e-5, double floor = 1e-6)
{
    double worst = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double x0 = x[i];
        x[i] = x0 + h;
        const double fp = f(x);
        x[i] = x0 - h;
        const double fm = f(x);
        x[i] = x0;
        const double num = (fp - fm) / (2 * h);
        const double denom = std::max({std::abs(num), std::abs(analytic[i]), floor});
        worst = std::max(worst, std::abs(num - analytic[i]) / denom);
    }
    return worst;
}

/// Weight of voxel (x, y, z) read straight off the definition, default plane axes
/// (plane A slices axis 2, plane B axis 0).
inline double weight(int x, int z, int m, int n, bool plane_a, int source, double alpha)
{
    if (z == m || x == n)
        return 1.0;
    const int coord = plane_a ? z : x;
    return std::pow(alpha, std::abs(coord - source));
}

inline double dice(const LabelGrid& p, const LabelGrid& g)
{
    double inter = 0, sp = 0, sg = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        inter += (p[i] && g[i]) ? 1 : 0;
        sp += p[i];
        sg += g[i];
    }
    return sp + sg == 0 ? 1.0 : 2 * inter / (sp + sg);
}

inline double jaccard(const LabelGrid& p, const LabelGrid& g)
{
    double inter = 0, uni = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        inter += (p[i] && g[i]) ? 1 : 0;
        uni += (p[i] || g[i]) ? 1 : 0;
    }
    return uni == 0 ? 1.0 : inter / uni;
}

/// Boundary voxel list: foreground with a background (or outside) 6-neighbour.
inline std::vector<Index3> boundary_points(const LabelGrid& m)
{
    const Dims& d = m.dims();
    std::vector<Index3> out;
    const int off[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
    for (int z = 0; z < d.d; ++z)
        for (int y = 0; y < d.w; ++y)
            for (int x = 0; x < d.h; ++x) {
                if (!m(x, y, z))
                    continue;
                bool edge = false;
                for (const auto& o : off) {
                    const int a = x + o[0], b = y + o[1], c = z + o[2];
                    if (!m.contains(a, b, c) || !m(a, b, c))
                        edge = true;
                }
                if (edge)
                    out.push_back({x, y, z});
            }
    return out;
}

/// All-pairs nearest boundary distances in both directions, concatenated.
inline std::vector<double> symmetric_surface_distances(const LabelGrid& p, const LabelGrid& g, const Spacing& s)
{
    const auto bp = boundary_points(p), bg = boundary_points(g);
    auto nearest = [&](const std::vector<Index3>& from, const std::vector<Index3>& to) {
        std::vector<double> out;
        for (const auto& a : from) {
            double best = std::numeric_limits<double>::infinity();
            for (const auto& b : to) {
                const double dx = (a.x - b.x) * s.sx, dy = (a.y - b.y) * s.sy, dz = (a.z - b.z) * s.sz;
                best = std::min(best, std::sqrt(dx * dx + dy * dy + dz * dz));
            }
            out.push_back(best);
        }
        return out;
    };
    auto all = nearest(bp, bg);
    const auto back = nearest(bg, bp);
    all.insert(all.end(), back.begin(), back.end());
    return all;
}

/// Linear-interpolation percentile on the sorted sample (rank q/100 * (n-1)).
inline double percentile(std::vector<double> v, double q)
{
    std::sort(v.begin(), v.end());
    const double rank = q / 100.0 * double(v.size() - 1);
    const auto lo = std::size_t(std::floor(rank));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (rank - double(lo)) * (v[hi] - v[lo]);
}

inline double hd95(const LabelGrid& p, const LabelGrid& g, const Spacing& s = {})
{
    return percentile(symmetric_surface_distances(p, g, s), 95.0);
}

inline double asd(const LabelGrid& p, const LabelGrid& g, const Spacing& s = {})
{
    const auto d = symmetric_surface_distances(p, g, s);
    double sum = 0;
    for (double v : d)
        sum += v;
    return sum / double(d.size());
}

/// Biased HSIC with explicit O(n^2) sums:
/// (1/(n-1)^2) sum_ij Kc_ij Lc_ij with double-centred Gram matrices.
inline double hsic_loop(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, bool rbf)
{
    const long n = x.rows();
    auto gram = [&](const Eigen::MatrixXd& f) {
        std::vector<double> k(std::size_t(n * n));
        std::vector<double> dists;
        for (long i = 0; i < n; ++i)
            for (long j = 0; j < n; ++j) {
                double dot = 0, sq = 0;
                for (long c = 0; c < f.cols(); ++c) {
                    dot += f(i, c) * f(j, c);
                    sq += (f(i, c) - f(j, c)) * (f(i, c) - f(j, c));
                }
                k[std::size_t(i * n + j)] = rbf ? sq : dot;
                if (rbf && i < j)
                    dists.push_back(std::sqrt(sq));
            }
        if (rbf) {
            std::sort(dists.begin(), dists.end());
            const std::size_t mcount = dists.size();
            double med = mcount % 2 ? dists[mcount / 2] : 0.5 * (dists[mcount / 2 - 1] + dists[mcount / 2]);
            if (med <= 0)
                med = 1.0;
            for (double& v : k)
                v = std::exp(-v / (2 * med * med));
        }
        // double centring
        std::vector<double> row(std::size_t(n), 0.0);
        double total = 0;
        for (long i = 0; i < n; ++i)
            for (long j = 0; j < n; ++j) {
                row[std::size_t(i)] += k[std::size_t(i * n + j)] / double(n);
                total += k[std::size_t(i * n + j)] / double(n * n);
            }
        for (long i = 0; i < n; ++i)
            for (long j = 0; j < n; ++j)
                k[std::size_t(i * n + j)] += total - row[std::size_t(i)] - row[std::size_t(j)];
        return k;
    };
    const auto kx = gram(x), ky = gram(y);
    double s = 0;
    for (std::size_t i = 0; i < kx.size(); ++i)
        s += kx[i] * ky[i];
    return s / double((n - 1) * (n - 1));
}

} // namespace desco::oracle
