#pragma once

namespace desco {

struct ScheduleConfig {
    int total_iters = 6000;
    double alpha0 = 0.95;
    int alpha_update_every = 1000;
    double lambda_oc = 0.8;
    double lr0 = 0.01;
    double lr_min = 0.0001;

    /// Throws ConfigError on violated invariants.
    void validate() const;
    int alpha_blocks() const { return total_iters / alpha_update_every; }
};

/// Half-cosine rampdown over blocks: block k of K gets alpha0 * (1 + cos(pi k / (K - 1))) / 2.
/// Iterations at or past total_iters read the last block.
double alpha_at(int iter, const ScheduleConfig& cfg);

/// exp(-5 (1 - t)^2) for t clamped to [0, 1].
double gaussian_rampup(double t);

/// lambda_oc * gaussian_rampup(iter / total_iters).
double lambda_at(int iter, const ScheduleConfig& cfg);

/// Poly decay with exponent 0.9, written so both endpoints are exact in floating point.
double lr_at(int iter, const ScheduleConfig& cfg);

} // namespace desco
