#include <doctest.h>

#include <cmath>

#include "desco/schedules.hpp"
#include "desco/segmodel.hpp"

using namespace desco;

TEST_CASE("alpha schedule")
{
    const ScheduleConfig cfg;
    CHECK(alpha_at(0, cfg) == 0.95);
    CHECK(alpha_at(999, cfg) == 0.95);
    CHECK(alpha_at(5000, cfg) == 0.0);
    CHECK(alpha_at(5999, cfg) == 0.0);
    CHECK(alpha_at(6000, cfg) == 0.0);
    CHECK(alpha_at(2500, cfg) == doctest::Approx(0.95 * 0.5 * (1 + std::cos(2 * M_PI / 5))).epsilon(1e-15));
    CHECK(alpha_at(2500, cfg) == doctest::Approx(0.6218).epsilon(1e-4));
    for (int it = 0; it + 1 < 6000; ++it) {
        CHECK(alpha_at(it + 1, cfg) <= alpha_at(it, cfg));
        if ((it + 1) % 1000 != 0)
            CHECK(alpha_at(it + 1, cfg) == alpha_at(it, cfg));
    }
}

TEST_CASE("lambda schedule")
{
    const ScheduleConfig cfg;
    CHECK(lambda_at(6000, cfg) == 0.8);
    CHECK(lambda_at(0, cfg) == doctest::Approx(0.8 * std::exp(-5.0)).epsilon(1e-15));
    CHECK(lambda_at(0, cfg) == doctest::Approx(0.00539).epsilon(1e-3));
    for (int it = 0; it < 6000; ++it) {
        CHECK(lambda_at(it + 1, cfg) >= lambda_at(it, cfg));
        CHECK(lambda_at(it, cfg) <= 0.8);
    }
    CHECK(gaussian_rampup(-1) == gaussian_rampup(0));
    CHECK(gaussian_rampup(2) == 1.0);
}

TEST_CASE("learning-rate schedule")
{
    const ScheduleConfig cfg;
    CHECK(lr_at(0, cfg) == 0.01);
    CHECK(lr_at(6000, cfg) == 0.0001);
    const double mid = lr_at(3000, cfg);
    CHECK(mid > 0.0001);
    CHECK(mid < 0.01);
    CHECK(mid == doctest::Approx(0.0001 + (0.01 - 0.0001) * std::pow(0.5, 0.9)).epsilon(1e-12));
    for (int it = 0; it < 6000; ++it)
        CHECK(lr_at(it + 1, cfg) <= lr_at(it, cfg));
}

TEST_CASE("schedule validation")
{
    ScheduleConfig cfg;
    cfg.alpha0 = 1.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = {};
    cfg.alpha_update_every = 6000; // one block cannot both start at alpha0 and end at 0
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.alpha_update_every = 4000;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = {};
    cfg.lambda_oc = 1.5;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = {};
    cfg.lr_min = 0.1;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = {};
    cfg.total_iters = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    CHECK_NOTHROW(ScheduleConfig{}.validate());
}

TEST_CASE("uncertainty threshold and mask")
{
    const ScheduleConfig cfg;
    CHECK(uncertainty_threshold(0, cfg) == doctest::Approx(std::log(2.0) * (0.75 + 0.25 * std::exp(-5.0))));
    CHECK(uncertainty_threshold(6000, cfg) == doctest::Approx(std::log(2.0)));
    Grid3<double> zeros(Dims{4, 4, 4}, 0.0), maximal(Dims{4, 4, 4}, std::log(2.0));
    const auto all_on = uncertainty_mask(zeros, 0, cfg);
    for (auto v : all_on.values())
        CHECK(v == 1);
    const auto all_off = uncertainty_mask(maximal, 0, cfg);
    for (auto v : all_off.values())
        CHECK(v == 0);

    Grid3<double> spread(Dims{8, 8, 8});
    for (std::size_t i = 0; i < spread.size(); ++i)
        spread[i] = std::log(2.0) * double(i) / double(spread.size());
    std::size_t prev = 0;
    for (int it = 0; it <= 6000; it += 250) {
        std::size_t count = 0;
        const auto mask = uncertainty_mask(spread, it, cfg);
        for (auto v : mask.values())
            count += v;
        CHECK(count >= prev);
        prev = count;
    }
}
