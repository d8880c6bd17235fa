#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <vector>

#include <json.hpp>

#include "desco/nn.hpp"
#include "desco/schedules.hpp"
#include "desco/volume.hpp"

namespace desco {

/// Per-voxel foreground probability over a patch.
using ProbVolume = Grid3<float>;
using UncertaintyMask = Grid3<std::uint8_t>;

struct ModelConfig {
    std::array<int, 3> channels{8, 16, 32};
    double dropout = 0.1;
    std::uint64_t seed = 1;
    /// Zero the 1x1 head so an untrained model outputs exactly 0.5.
    bool zero_head = false;

    void validate() const;
    nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json& j);
};

/// Three-level encoder-decoder: one 3x3x3 conv + ReLU per level with average
/// pooling between levels, trilinear upsampling with additive skips on the way
/// back, dropout and a 1x1 sigmoid head. Patches need every extent divisible by 8.
class SegModel {
public:
    static constexpr int kLevels = 3;
    static constexpr int kDivisor = 1 << kLevels;

    explicit SegModel(const ModelConfig& cfg);

    const ModelConfig& config() const { return cfg_; }
    std::vector<nn::Param*> params();
    std::vector<const nn::Param*> params() const;
    std::size_t parameter_count() const;
    void zero_grad();

    /// Activations of one forward pass. The trunk (everything before dropout)
    /// is deterministic, so extra head passes can reuse it.
    struct Trace {
        nn::Tensor input;
        std::vector<float> s_enc0, s_enc1, s_enc2, s_up1, s_dec1, s_up0, s_dec0, s_head;
        nn::Tensor e0, p0, e1, p1, e2, l1, s1, d1, l0, s0, d0;
        std::vector<float> keep; ///< dropout scale per element of d0 (empty when deterministic)
        nn::Tensor f;            ///< head input after dropout
        std::vector<float> logits;
        ProbVolume prob;
    };

    /// Throws ShapeError for patches whose extents are not multiples of kDivisor.
    void check_patch(const Dims& dims) const;

    Trace trunk(const Volume3D& patch) const;
    /// Runs the head on the trace's trunk features and stores the result in the trace.
    void head(Trace& t, bool stochastic);
    /// Extra head pass that leaves the trace untouched.
    ProbVolume head_sample(const Trace& t, bool stochastic);

    ProbVolume forward(const Volume3D& patch, bool stochastic);

    /// Accumulates parameter gradients for d loss / d prob of the trace's head pass.
    void backward(const Trace& t, std::span<const double> grad_prob);

    std::mt19937_64& dropout_rng() { return dropout_rng_; }

private:
    std::vector<float> draw_keep(std::size_t n);
    void run_head(const nn::Tensor& d0, const std::vector<float>& keep, nn::Tensor& f, std::vector<float>& logits,
                  ProbVolume& prob) const;

    ModelConfig cfg_;
    nn::Conv3d enc0_, enc1_, enc2_, up1_, dec1_, up0_, dec0_, head_;
    std::mt19937_64 dropout_rng_;
};

struct UncertaintyResult {
    Grid3<double> mean;
    Grid3<double> entropy;
};

/// Binary entropy of p clamped to [eps, 1 - eps].
double binary_entropy(double p);

/// T stochastic passes; mean probability and its entropy. Throws ConfigError for T < 2.
UncertaintyResult uncertainty(SegModel& model, const Volume3D& patch, int T);
/// Same, reusing the trunk of an existing trace.
UncertaintyResult uncertainty(SegModel& model, const SegModel::Trace& trace, int T);

/// ln 2 * (3/4 + 1/4 * gaussian_rampup(iter / total_iters)).
double uncertainty_threshold(int iter, const ScheduleConfig& cfg);
/// m_i = 1 iff entropy_i < uncertainty_threshold(iter).
UncertaintyMask uncertainty_mask(const Grid3<double>& entropy, int iter, const ScheduleConfig& cfg);

/// SGD with momentum, L2 weight decay folded into the gradient
/// (g += wd * w; v = mu v + g; w -= lr v).
class Sgd {
public:
    Sgd(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}
    void step(SegModel& model, double lr);

private:
    double momentum_, weight_decay_;
    std::vector<std::vector<float>> velocity_;
};

// Checkpoints: "<stem>.bin" with every parameter as little-endian float32 in
// params() order, plus "<stem>.json" {format, version, config, tensors}.
inline constexpr int kCheckpointVersion = 1;
void save_checkpoint(const SegModel& model, const std::filesystem::path& bin_path,
                     const nlohmann::json& extra = nlohmann::json::object());
SegModel load_checkpoint(const std::filesystem::path& bin_path);

} // namespace desco
