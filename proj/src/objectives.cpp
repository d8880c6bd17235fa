#include "desco/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "desco/errors.hpp"

namespace desco {

namespace {

void check_sizes(std::size_t a, std::size_t b, std::size_t c, const char* what)
{
    if (a != b || a != c)
        throw ShapeError(std::string(what) + ": array sizes differ (" + std::to_string(a) + ", " + std::to_string(b) +
                         ", " + std::to_string(c) + ")");
}

double weight_sum(std::span<const double> w)
{
    double s = 0;
    for (double v : w)
        s += v;
    if (!(s > 0))
        throw DegenerateWeightError("weight sum is zero");
    return s;
}

double bernoulli_nll(double p, std::uint8_t y)
{
    const double q = clamp_prob(p);
    return y ? -std::log(q) : -std::log(1.0 - q);
}

double bernoulli_grad(double p, std::uint8_t y)
{
    const double q = clamp_prob(p);
    return y ? -1.0 / q : 1.0 / (1.0 - q);
}

} // namespace

double clamp_prob(double p)
{
    return std::clamp(p, kProbEpsilon, 1.0 - kProbEpsilon);
}

double weighted_cross_entropy(std::span<const double> p, std::span<const std::uint8_t> y, std::span<const double> w)
{
    check_sizes(p.size(), y.size(), w.size(), "weighted_cross_entropy");
    const double s = weight_sum(w);
    double acc = 0;
    for (std::size_t i = 0; i < p.size(); ++i)
        if (w[i] != 0)
            acc += w[i] * bernoulli_nll(p[i], y[i]);
    return acc / s;
}

LossValue weighted_dice(std::span<const double> p, std::span<const std::uint8_t> y, std::span<const double> w)
{
    check_sizes(p.size(), y.size(), w.size(), "weighted_dice");
    double num = 0, den = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        num += w[i] * p[i] * y[i];
        den += w[i] * (p[i] * p[i] + double(y[i]));
    }
    if (!(den > 0))
        return {0.0, true};
    return {1.0 - 2.0 * num / den, false};
}

double supervised_loss(std::span<const double> p, std::span<const std::uint8_t> y, std::span<const double> w)
{
    return 0.5 * weighted_cross_entropy(p, y, w) + 0.5 * weighted_dice(p, y, w).value;
}

LossValue cross_supervision_loss(std::span<const double> p, std::span<const std::uint8_t> y_hat,
                                 std::span<const std::uint8_t> mask)
{
    check_sizes(p.size(), y_hat.size(), mask.size(), "cross_supervision_loss");
    double acc = 0, count = 0;
    for (std::size_t i = 0; i < p.size(); ++i)
        if (mask[i]) {
            acc += bernoulli_nll(p[i], y_hat[i]);
            count += 1;
        }
    if (count == 0)
        return {0.0, true};
    return {acc / count, false};
}

double total_loss(double sup, double cross, double lambda)
{
    if (!(lambda >= 0 && lambda <= 1))
        throw ConfigError("lambda must lie in [0, 1], got " + std::to_string(lambda));
    return (1.0 - lambda) * sup + lambda * cross;
}

std::vector<double> loss_gradients(std::span<const double> p, std::span<const std::uint8_t> y,
                                   std::span<const double> w, LossKind which)
{
    check_sizes(p.size(), y.size(), w.size(), "loss_gradients");
    std::vector<double> g(p.size(), 0.0);
    const double ce_scale = which == LossKind::dice ? 0.0 : (which == LossKind::supervised ? 0.5 : 1.0);
    const double dice_scale = which == LossKind::cross_entropy ? 0.0 : (which == LossKind::supervised ? 0.5 : 1.0);

    if (ce_scale > 0) {
        const double s = weight_sum(w);
        for (std::size_t i = 0; i < p.size(); ++i)
            if (w[i] != 0)
                g[i] += ce_scale * w[i] * bernoulli_grad(p[i], y[i]) / s;
    }
    if (dice_scale > 0) {
        double A = 0, B = 0;
        for (std::size_t i = 0; i < p.size(); ++i) {
            A += w[i] * p[i] * y[i];
            B += w[i] * (p[i] * p[i] + double(y[i]));
        }
        if (B > 0)
            for (std::size_t i = 0; i < p.size(); ++i)
                g[i] += dice_scale * (-2.0 * w[i] * (y[i] * B - 2.0 * A * p[i]) / (B * B));
    }
    return g;
}

std::vector<double> cross_supervision_gradient(std::span<const double> p, std::span<const std::uint8_t> y_hat,
                                               std::span<const std::uint8_t> mask)
{
    check_sizes(p.size(), y_hat.size(), mask.size(), "cross_supervision_gradient");
    std::vector<double> g(p.size(), 0.0);
    double count = 0;
    for (auto m : mask)
        count += m ? 1 : 0;
    if (count == 0)
        return g;
    for (std::size_t i = 0; i < p.size(); ++i)
        if (mask[i])
            g[i] = bernoulli_grad(p[i], y_hat[i]) / count;
    return g;
}

} // namespace desco
