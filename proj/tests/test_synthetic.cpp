#include <doctest.h>

#include "desco/synthetic.hpp"
#include "support.hpp"

using namespace desco;

TEST_CASE("phantom generation is deterministic")
{
    PhantomSpec s;
    s.dims = {32, 32, 32};
    s.n_distractors = 2;
    const Phantom a = generate_phantom(s), b = generate_phantom(s);
    CHECK(a.volume.grid() == b.volume.grid());
    CHECK(a.label.grid() == b.label.grid());
    s.seed = 8;
    CHECK_FALSE(generate_phantom(s).volume.grid() == a.volume.grid());
}

TEST_CASE("default phantom foreground fraction")
{
    const Phantom p = generate_phantom(PhantomSpec{});
    const double frac = double(p.label.foreground_count()) / double(p.label.grid().size());
    CHECK(frac >= 0.02);
    CHECK(frac <= 0.25);
}

TEST_CASE("zero drift and zero noise give identical plane-A slices inside the blob")
{
    PhantomSpec s;
    s.dims = {32, 32, 32};
    s.drift = 0;
    s.noise_sigma = 0;
    const Phantom p = generate_phantom(s);
    int lo = -1, hi = -1;
    for (int z = 0; z < 32; ++z) {
        const auto sl = extract_slice(p.label, Plane::A, z);
        bool any = false;
        for (auto v : sl.values())
            any |= v != 0;
        if (any) {
            if (lo < 0)
                lo = z;
            hi = z;
        }
    }
    REQUIRE(lo >= 0);
    // cross-sections of an unsheared ellipsoid are nested, centred at the same point
    const int mid = (lo + hi) / 2;
    const auto centre = extract_slice(p.label, Plane::A, mid);
    for (int z = lo; z <= hi; ++z) {
        const auto sl = extract_slice(p.label, Plane::A, z);
        for (std::size_t i = 0; i < sl.size(); ++i)
            CHECK(sl[i] <= centre[i]);
    }
}

TEST_CASE("per-slice centre drift is bounded")
{
    PhantomSpec s;
    s.drift = 0.5;
    for (std::uint64_t seed = 1; seed <= 4; ++seed) {
        s.seed = seed;
        const Phantom p = generate_phantom(s);
        for (Plane plane : {Plane::A, Plane::B}) {
            double prev_r = 0, prev_c = 0;
            bool have_prev = false;
            for (int k = 0; k < plane_extent(p.label.dims(), plane); ++k) {
                const auto sl = extract_slice(p.label, plane, k);
                double sr = 0, sc = 0, n = 0;
                for (int j = 0; j < sl.cols(); ++j)
                    for (int i = 0; i < sl.rows(); ++i)
                        if (sl(i, j)) {
                            sr += i;
                            sc += j;
                            ++n;
                        }
                // centroids of tiny caps are dominated by discretisation; only check sizeable sections
                if (n < 60) {
                    have_prev = false;
                    continue;
                }
                const double r = sr / n, c = sc / n;
                if (have_prev) {
                    CHECK(std::abs(r - prev_r) <= 1.0);
                    CHECK(std::abs(c - prev_c) <= 1.0);
                }
                prev_r = r;
                prev_c = c;
                have_prev = true;
            }
        }
    }
}

TEST_CASE("translation phantom shifts by the configured amount")
{
    TranslationPhantomSpec s;
    s.noise_sigma = 0;
    s.shift_x = 1.0;
    s.shift_y = 0.0;
    const Phantom p = generate_translation_phantom(s);
    const auto a = extract_slice(p.label, Plane::A, 20);
    const auto b = extract_slice(p.label, Plane::A, 21);
    for (int j = 0; j < a.cols(); ++j)
        for (int i = 0; i + 1 < a.rows(); ++i)
            CHECK(b(i + 1, j) == a(i, j));
}

TEST_CASE("annotation slice selection")
{
    const Dims d{48, 48, 48};
    const LabelVolume cube(test::box_mask(d, {20, 20, 20}, {28, 28, 28}), Spacing{});
    const auto [m, n] = select_annotation_slices(cube);
    CHECK(m == 23); // centroid 23.5 rounds down
    CHECK(n == 23);

    const LabelVolume slab(test::box_mask(d, {0, 0, 10}, {48, 48, 20}), Spacing{});
    CHECK(select_annotation_slices(slab).first == 14);

    // centroid falls in the gap between two boxes: nearest foreground slice wins, lower on ties
    LabelGrid two = test::box_mask(d, {0, 0, 10}, {4, 4, 12});
    const LabelGrid hi = test::box_mask(d, {0, 0, 30}, {4, 4, 32});
    for (std::size_t i = 0; i < two.size(); ++i)
        two[i] |= hi[i];
    CHECK(select_annotation_slices(LabelVolume(two, Spacing{})).first == 11);

    CHECK_THROWS_AS(select_annotation_slices(LabelVolume(LabelGrid(d), Spacing{})), NoTargetError);
}

TEST_CASE("make_orthogonal_annotation copies exactly the two slices")
{
    const Phantom p = generate_phantom(PhantomSpec{});
    const auto [m, n] = select_annotation_slices(p.label);
    const auto ann = make_orthogonal_annotation(p.label, m, n);
    CHECK(ann.label_a == extract_slice(p.label, Plane::A, m));
    CHECK(ann.label_b == extract_slice(p.label, Plane::B, n));
    CHECK(ann.intersection_consistent());
    std::size_t fa = 0, fb = 0;
    for (auto v : ann.label_a.values())
        fa += v;
    for (auto v : ann.label_b.values())
        fb += v;
    CHECK(fa > 0);
    CHECK(fb > 0);
    CHECK_THROWS_AS(make_orthogonal_annotation(p.label, 48, n), BoundsError);
}
