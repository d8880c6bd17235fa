#include <doctest.h>

#include <cmath>
#include <limits>
#include <numeric>

#include "desco/evaluation.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace desco;

TEST_CASE("dice and jaccard counting cases")
{
    const Dims d{6, 6, 6};
    const LabelGrid cube = test::box_mask(d, {1, 1, 1}, {3, 3, 3});
    const LabelGrid shifted = test::box_mask(d, {2, 1, 1}, {4, 3, 3});
    CHECK(dice(cube, cube) == 1.0);
    CHECK(dice(cube, shifted) == 0.5);
    CHECK(jaccard(cube, shifted) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    CHECK(dice(cube, test::box_mask(d, {4, 4, 4}, {6, 6, 6})) == 0.0);
    CHECK(dice(LabelGrid(d), LabelGrid(d)) == 1.0);
    CHECK(jaccard(LabelGrid(d), LabelGrid(d)) == 1.0);
    CHECK_THROWS_AS(dice(cube, LabelGrid(Dims{6, 6, 5})), ShapeError);
}

TEST_CASE("metrics match brute force on random masks")
{
    std::mt19937_64 rng(11);
    for (int t = 0; t < 30; ++t) {
        const Dims d = test::random_dims(rng, 3, 8);
        const LabelGrid p = test::random_mask(rng, d, 0.35), g = test::random_mask(rng, d, 0.35);
        if (!std::any_of(p.values().begin(), p.values().end(), [](auto v) { return v; }) ||
            !std::any_of(g.values().begin(), g.values().end(), [](auto v) { return v; }))
            continue;
        const Spacing sp{1.0 + 0.25 * (t % 3), 1.0, 0.5 + 0.5 * (t % 2)};
        CHECK(std::abs(dice(p, g) - oracle::dice(p, g)) < 1e-9);
        CHECK(std::abs(jaccard(p, g) - oracle::jaccard(p, g)) < 1e-9);
        CHECK(std::abs(jaccard(p, g) - dice(p, g) / (2 - dice(p, g))) < 1e-12);
        CHECK(std::abs(hd95(p, g, sp) - oracle::hd95(p, g, sp)) < 1e-9);
        CHECK(std::abs(asd(p, g, sp) - oracle::asd(p, g, sp)) < 1e-9);
        CHECK(hd95(p, g, sp) <= hausdorff(p, g, sp) + 1e-12);
        CHECK(asd(p, g, sp) <= hausdorff(p, g, sp) + 1e-12);
    }
}

TEST_CASE("offset cubes")
{
    const Dims d{16, 8, 8};
    const LabelGrid a = test::box_mask(d, {2, 2, 2}, {5, 5, 5});
    const LabelGrid b = test::box_mask(d, {5, 2, 2}, {8, 5, 5});
    // 3-voxel cubes offset by 3 along x
    CHECK(hd95(a, a) == 0.0);
    CHECK(asd(a, a) == 0.0);
    CHECK(std::abs(hd95(a, b) - oracle::hd95(a, b)) < 1e-12);
    CHECK(std::abs(asd(a, b) - oracle::asd(a, b)) < 1e-12);
    CHECK(hausdorff(a, b) == doctest::Approx(3.0));
    // every boundary voxel of a 3-cube lies on the surface except the centre;
    // face x=4 is at distance 1 from b's face x=5, x=3 at 2, x=2 at 3
    // per direction: 9 voxels at 1, 8 at 2, 9 at 3
    CHECK(asd(a, b) == doctest::Approx((9 * 1.0 + 8 * 2.0 + 9 * 3.0) / 26.0).epsilon(1e-12));

    const LabelGrid unit_a = test::box_mask(d, {2, 2, 2}, {3, 3, 3});
    const LabelGrid unit_b = test::box_mask(d, {5, 2, 2}, {6, 3, 3});
    CHECK(hd95(unit_a, unit_b) == 3.0);
    CHECK(asd(unit_a, unit_b) == 3.0);
    CHECK(hd95(unit_a, unit_b, {2.0, 1.0, 1.0}) == 6.0);
}

TEST_CASE("empty masks make surface metrics undefined")
{
    const Dims d{5, 5, 5};
    const LabelGrid a = test::box_mask(d, {1, 1, 1}, {3, 3, 3});
    CHECK_THROWS_AS(hd95(a, LabelGrid(d)), MetricUndefinedError);
    CHECK_THROWS_AS(asd(LabelGrid(d), a), MetricUndefinedError);
    const VolumeMetrics m = compute_metrics("x", LabelGrid(d), a);
    CHECK(m.dice == 0.0);
    CHECK(std::isnan(m.hd95));
    CHECK(std::isnan(m.asd));
    CHECK(m.undefined_surface);
}

TEST_CASE("distance transform matches brute force")
{
    std::mt19937_64 rng(12);
    for (int t = 0; t < 10; ++t) {
        const Dims d = test::random_dims(rng, 2, 9);
        const LabelGrid sites = test::random_mask(rng, d, 0.1);
        const Spacing sp{1.0, 1.5, 0.75};
        const Grid3<double> dt = distance_transform(sites, sp);
        for (int z = 0; z < d.d; ++z)
            for (int y = 0; y < d.w; ++y)
                for (int x = 0; x < d.h; ++x) {
                    double best = std::numeric_limits<double>::infinity();
                    for (int c = 0; c < d.d; ++c)
                        for (int b = 0; b < d.w; ++b)
                            for (int a = 0; a < d.h; ++a)
                                if (sites(a, b, c))
                                    best = std::min(best, std::hypot((x - a) * sp.sx, (y - b) * sp.sy, (z - c) * sp.sz));
                    if (std::isinf(best))
                        CHECK(std::isinf(dt(x, y, z)));
                    else
                        CHECK(std::abs(dt(x, y, z) - best) < 1e-9);
                }
    }
}

TEST_CASE("boundary is the set of surface voxels")
{
    const Dims d{5, 5, 5};
    const LabelGrid full(d, 1);
    const LabelGrid b = boundary(full);
    CHECK(b(2, 2, 2) == 0);
    CHECK(b(0, 2, 2) == 1); // outside counts as background
    CHECK(b(1, 1, 1) == 0);
}

TEST_CASE("percentile uses linear interpolation")
{
    CHECK(percentile({1, 2, 3, 4}, 50) == 2.5);
    CHECK(percentile({4, 1, 3, 2}, 100) == 4);
    CHECK(percentile({4, 1, 3, 2}, 0) == 1);
    CHECK(percentile({0, 10}, 95) == doctest::Approx(9.5));
}

TEST_CASE("hsic matches the O(n^2) oracle")
{
    std::mt19937_64 rng(13);
    std::normal_distribution<double> n;
    for (int t = 0; t < 5; ++t) {
        Eigen::MatrixXd x(30, 4), y(30, 3);
        for (long i = 0; i < 30; ++i) {
            for (long c = 0; c < 4; ++c)
                x(i, c) = n(rng);
            for (long c = 0; c < 3; ++c)
                y(i, c) = n(rng) + (c == 0 ? x(i, 0) : 0.0);
        }
        CHECK(hsic(x, y, HsicKernel::linear) == doctest::Approx(oracle::hsic_loop(x, y, false)).epsilon(1e-10));
        CHECK(hsic(x, y, HsicKernel::rbf) == doctest::Approx(oracle::hsic_loop(x, y, true)).epsilon(1e-10));
        CHECK(hsic(x, y, HsicKernel::linear) == doctest::Approx(hsic(y, x, HsicKernel::linear)).epsilon(1e-12));
        CHECK(hsic(x, y, HsicKernel::rbf) == doctest::Approx(hsic(y, x, HsicKernel::rbf)).epsilon(1e-12));
        CHECK(hsic(x, x, HsicKernel::linear) >= 0.0);
    }

    // y = x with a linear kernel: HSIC is the squared Frobenius norm of the sample covariance scaled by n^2/(n-1)^2
    Eigen::MatrixXd x(20, 2);
    for (long i = 0; i < 20; ++i)
        for (long c = 0; c < 2; ++c)
            x(i, c) = n(rng);
    const Eigen::MatrixXd xc = x.rowwise() - x.colwise().mean();
    const Eigen::MatrixXd cov = xc.transpose() * xc;
    CHECK(hsic(x, x, HsicKernel::linear) == doctest::Approx(cov.squaredNorm() / (19.0 * 19.0)).epsilon(1e-10));
    CHECK_THROWS_AS(hsic(x, Eigen::MatrixXd(19, 2), HsicKernel::linear), ShapeError);
}

TEST_CASE("hsic of independent samples sits inside the permutation null")
{
    std::mt19937_64 rng(14);
    std::normal_distribution<double> n;
    Eigen::MatrixXd x(200, 1), y(200, 1);
    for (long i = 0; i < 200; ++i) {
        x(i, 0) = n(rng);
        y(i, 0) = n(rng);
    }
    for (HsicKernel k : {HsicKernel::linear, HsicKernel::rbf}) {
        const double stat = hsic(x, y, k);
        std::vector<double> null;
        std::vector<long> perm(200);
        std::iota(perm.begin(), perm.end(), 0L);
        for (int b = 0; b < 200; ++b) {
            std::shuffle(perm.begin(), perm.end(), rng);
            Eigen::MatrixXd yp(200, 1);
            for (long i = 0; i < 200; ++i)
                yp(i, 0) = y(perm[std::size_t(i)], 0);
            null.push_back(hsic(x, yp, k));
        }
        CHECK(stat < oracle::percentile(null, 95.0));

        // a dependent pair lands far outside it
        Eigen::MatrixXd dep = x.array().square().matrix();
        if (k == HsicKernel::rbf)
            CHECK(hsic(x, dep, k) > oracle::percentile(null, 99.0));
    }
}

TEST_CASE("slice pairs: parallel neighbours are more dependent than orthogonal slices")
{
    std::mt19937_64 rng(15);
    std::vector<Volume3D> vols;
    Grid3<float> g(Dims{16, 16, 16});
    // smooth field along z: every plane-A slice is close to its neighbours
    for (int z = 0; z < 16; ++z)
        for (int y = 0; y < 16; ++y)
            for (int x = 0; x < 16; ++x)
                g(x, y, z) = float(std::sin(0.4 * x + 0.05 * z) * std::cos(0.3 * y) + 0.05 * std::normal_distribution<double>()(rng));
    vols.emplace_back(g, Spacing{}, "v");
    const auto rows = compare_slice_pairs(vols, 10, 3);
    REQUIRE(rows.size() == 20);
    CHECK_FALSE(rows.front().orthogonal);
    CHECK(rows.back().orthogonal);
    const auto again = compare_slice_pairs(vols, 10, 3);
    for (std::size_t i = 0; i < rows.size(); ++i)
        CHECK(rows[i].linear == again[i].linear);
}

TEST_CASE("aggregate uses population std and skips non-finite values")
{
    const Aggregate a = aggregate({1.0, 3.0, std::nan(""), 5.0});
    CHECK(a.count == 3);
    CHECK(a.mean == 3.0);
    CHECK(a.std == doctest::Approx(std::sqrt(8.0 / 3.0)));
}
