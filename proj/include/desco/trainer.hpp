#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "desco/labels.hpp"
#include "desco/registration.hpp"
#include "desco/schedules.hpp"
#include "desco/segmodel.hpp"
#include "desco/volume_io.hpp"

namespace desco {

/// desco: dense-to-sparse weights plus cross supervision.
/// sparse_only: annotated slices only (alpha fixed at 0), cross supervision as desco.
/// static_dense: alpha fixed at alpha0, no cross supervision.
enum class TrainMode { desco, sparse_only, static_dense };

const char* to_string(TrainMode m);
TrainMode parse_mode(const std::string& name);

struct TrainConfig {
    ScheduleConfig schedule;
    TrainMode mode = TrainMode::desco;
    Dims patch{24, 24, 24};
    double momentum = 0.9;
    double weight_decay = 1e-4;
    std::uint64_t seed = 1;   ///< data stream
    std::uint64_t seed_a = 11;
    std::uint64_t seed_b = 22;
    ModelConfig model;        ///< seed field is replaced by seed_a / seed_b
    int mc_samples = 8;
    int eval_every = 100;
    std::optional<Dims> eval_stride; ///< defaults to the patch size
    int labeled_limit = -1;   ///< l; all annotated training entries when < 0
    int unlabeled_limit = -1;
    double annotated_patch_prob = 0.9;
    bool normalize_intensity = true;
    bool ensemble = true;
    /// Which plane's pseudo label supervises each model.
    Plane plane_a = Plane::A;
    Plane plane_b = Plane::B;
    PlaneAxes axes;
    RegistrationConfig registration;
    /// Overrides for the schedule values; used by baselines and tests.
    std::optional<double> force_alpha;
    std::optional<double> force_lambda;

    void validate() const;
    nlohmann::json to_json() const;
    /// Missing fields keep their defaults; unknown fields are rejected.
    static TrainConfig from_json(const nlohmann::json& j);

    double alpha(int iter) const;
    double lambda(int iter) const;
    double lr(int iter) const { return lr_at(iter, schedule); }
    Dims stride() const { return eval_stride.value_or(patch); }
};

nlohmann::json to_json(const RegistrationConfig& cfg);
RegistrationConfig registration_from_json(const nlohmann::json& j);

struct HistoryRow {
    int iter = 0;
    double alpha = 0, lambda = 0, lr = 0;
    double loss_sup_a = 0, loss_sup_b = 0, loss_cross_a = 0, loss_cross_b = 0;
    double mask_frac = 0;
    std::optional<double> val_dice_a, val_dice_b, val_dice_ens;
};

std::string history_header();
std::string history_line(const HistoryRow& row);
void write_history(const std::vector<HistoryRow>& rows, const std::filesystem::path& path);
std::vector<HistoryRow> read_history(const std::filesystem::path& path);

/// Zero mean, unit variance over the whole volume.
Volume3D normalize_intensity(const Volume3D& v);

/// A labeled training volume after propagation and label mixing.
struct PreparedVolume {
    std::string id;
    Volume3D volume;
    OrthogonalAnnotation annotation;
    MixedLabel mixed_a;
    MixedLabel mixed_b;

    const MixedLabel& mixed(Plane p) const { return p == Plane::A ? mixed_a : mixed_b; }
    int source_index(Plane p) const { return p == Plane::A ? annotation.m : annotation.n; }
    /// Regenerated whenever alpha changes.
    WeightMap weights(Plane p, double alpha) const;
};

/// Propagates both annotated slices once and mixes the annotation back in.
/// `pseudo` supplies precomputed pseudo labels (plane A, plane B) instead.
PreparedVolume prepare_labeled_volume(const Volume3D& volume, const OrthogonalAnnotation& annotation,
                                      const TrainConfig& cfg,
                                      const std::optional<std::pair<LabelGrid, LabelGrid>>& pseudo = std::nullopt);

/// One iteration's inputs: a labeled patch with both models' targets and
/// weights, and an unlabeled patch.
struct StepBatch {
    Volume3D labeled;
    LabelGrid target_a, target_b;
    Grid3<double> weight_a, weight_b;
    Volume3D unlabeled;
    std::string labeled_id, unlabeled_id;
};

struct TrainState {
    int iter = 0;
    SegModel model_a;
    SegModel model_b;
    Sgd opt_a;
    Sgd opt_b;
    std::vector<HistoryRow> history;

    explicit TrainState(const TrainConfig& cfg);
};

/// One co-training step at state.iter: supervised loss on each model's plane,
/// masked one-hot cross supervision from the partner (targets from the
/// partner's parameters at the start of the step), SGD on both. Appends and
/// returns the history row (without validation fields) and advances iter.
/// Throws TrainingAbort on a non-finite loss.
HistoryRow train_step(TrainState& state, const StepBatch& batch, const TrainConfig& cfg);

/// Window start positions covering [0, extent) with the given stride; the last
/// window is flush with the end. Throws ShapeError if patch > extent.
std::vector<int> window_origins(int extent, int patch, int stride);

using Predictor = std::function<ProbVolume(const Volume3D& patch)>;

/// Average of overlapping window predictions; with several predictors their
/// probabilities are averaged per window first.
ProbVolume sliding_window_predict(const std::vector<Predictor>& predictors, const Volume3D& volume, const Dims& patch,
                                  const Dims& stride);
ProbVolume sliding_window_predict(const std::vector<SegModel*>& models, const Volume3D& volume, const Dims& patch,
                                  const Dims& stride);

LabelGrid threshold(const ProbVolume& prob, float level = 0.5f);

struct TrainResult {
    SegModel model_a;
    SegModel model_b;
    std::vector<HistoryRow> history;
};

struct TrainOutputs {
    std::filesystem::path dir;        ///< history.csv, checkpoints; empty for in-memory runs
    std::filesystem::path pseudo_dir; ///< optional precomputed pseudo labels
    std::function<void(const HistoryRow&)> on_row;
};

TrainResult train_desco(const io::Manifest& manifest, const TrainConfig& cfg, const TrainOutputs& out = {});

} // namespace desco
