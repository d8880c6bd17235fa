#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "desco/evaluation.hpp"
#include "desco/segmodel.hpp"
#include "desco/volume_io.hpp"

namespace desco {

struct EvalConfig {
    Dims patch{24, 24, 24};
    std::optional<Dims> stride; ///< defaults to half the patch
    bool normalize_intensity = true;
    /// Report surface distances in mm using each volume's spacing instead of voxels.
    bool use_spacing = false;

    Dims effective_stride() const;
};

struct RunReport {
    std::vector<VolumeMetrics> volumes;
    std::map<std::string, Aggregate> aggregate; ///< dice, jaccard, hd95, asd
    int undefined_surface = 0;
};

/// Sliding-window prediction with every model (averaged when several) over
/// each test entry of the manifest, then all four metrics and their mean/std.
RunReport evaluate_run(const std::vector<SegModel*>& models, const io::Manifest& manifest, const EvalConfig& cfg);

nlohmann::json report_to_json(const RunReport& r);
/// Per-volume rows followed by mean and std rows.
std::string report_to_csv(const RunReport& r);

} // namespace desco
