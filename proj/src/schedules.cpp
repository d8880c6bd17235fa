#include "desco/schedules.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "desco/errors.hpp"

namespace desco {

void ScheduleConfig::validate() const
{
    if (total_iters < 1)
        throw ConfigError("total_iters must be >= 1");
    if (!(alpha0 >= 0 && alpha0 < 1))
        throw ConfigError("alpha0 must lie in [0, 1)");
    if (!(lambda_oc >= 0 && lambda_oc <= 1))
        throw ConfigError("lambda_oc must lie in [0, 1]");
    if (!(lr_min > 0) || !(lr0 >= lr_min))
        throw ConfigError("learning rates must satisfy lr0 >= lr_min > 0");
    if (alpha_update_every < 1 || total_iters % alpha_update_every != 0)
        throw ConfigError("total_iters (" + std::to_string(total_iters) + ") must be divisible by alpha_update_every (" +
                          std::to_string(alpha_update_every) + ")");
    if (alpha_blocks() < 2)
        throw ConfigError("alpha schedule needs at least two blocks");
}

double alpha_at(int iter, const ScheduleConfig& cfg)
{
    const int K = cfg.alpha_blocks();
    const int k = std::clamp(iter / cfg.alpha_update_every, 0, K - 1);
    if (k == K - 1)
        return 0.0;
    return cfg.alpha0 * 0.5 * (1.0 + std::cos(std::numbers::pi * double(k) / double(K - 1)));
}

double gaussian_rampup(double t)
{
    const double s = 1.0 - std::clamp(t, 0.0, 1.0);
    return std::exp(-5.0 * s * s);
}

double lambda_at(int iter, const ScheduleConfig& cfg)
{
    return cfg.lambda_oc * gaussian_rampup(double(iter) / double(cfg.total_iters));
}

double lr_at(int iter, const ScheduleConfig& cfg)
{
    const double t = std::clamp(double(iter) / double(cfg.total_iters), 0.0, 1.0);
    const double f = std::pow(1.0 - t, 0.9);
    return cfg.lr0 * f + cfg.lr_min * (1.0 - f);
}

} // namespace desco
