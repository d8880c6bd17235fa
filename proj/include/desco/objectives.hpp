#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace desco {

inline constexpr double kProbEpsilon = 1e-7;

double clamp_prob(double p);

/// Loss value plus a soft-condition flag (degenerate Dice denominator, empty mask).
struct LossValue {
    double value = 0.0;
    bool degenerate = false;
};

// All losses take flat, equally sized arrays over one patch. Shape mismatches
// throw ShapeError.

/// -(sum w [y log p + (1-y) log(1-p)]) / sum w. Throws DegenerateWeightError if sum w == 0.
double weighted_cross_entropy(std::span<const double> p, std::span<const std::uint8_t> y, std::span<const double> w);

/// 1 - 2 sum(w p y) / sum(w (p^2 + y^2)). A zero denominator yields 0 with the flag set.
LossValue weighted_dice(std::span<const double> p, std::span<const std::uint8_t> y, std::span<const double> w);

/// (CE + Dice) / 2.
double supervised_loss(std::span<const double> p, std::span<const std::uint8_t> y, std::span<const double> w);

/// Masked Bernoulli CE against hard targets; an all-zero mask yields 0 with the flag set.
LossValue cross_supervision_loss(std::span<const double> p, std::span<const std::uint8_t> y_hat,
                                 std::span<const std::uint8_t> mask);

/// (1 - lambda) sup + lambda cross. Throws ConfigError for lambda outside [0, 1].
double total_loss(double sup, double cross, double lambda);

enum class LossKind { cross_entropy, dice, supervised };

/// d loss / d p_i. CE gradients are taken at the clamped probability.
std::vector<double> loss_gradients(std::span<const double> p, std::span<const std::uint8_t> y,
                                   std::span<const double> w, LossKind which);

/// d cross_supervision_loss / d p_i (all zeros for an empty mask).
std::vector<double> cross_supervision_gradient(std::span<const double> p, std::span<const std::uint8_t> y_hat,
                                               std::span<const std::uint8_t> mask);

} // namespace desco
