#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "desco/volume.hpp"

namespace desco {

/// 2|P&G| / (|P| + |G|); 1 when both masks are empty.
double dice(const LabelGrid& pred, const LabelGrid& gt);
/// |P&G| / |P|G|; 1 when both masks are empty.
double jaccard(const LabelGrid& pred, const LabelGrid& gt);

/// Foreground voxels with at least one background 6-neighbour (outside counts as background).
LabelGrid boundary(const LabelGrid& mask);

/// Distances from each boundary voxel of one mask to the nearest boundary voxel
/// of the other, in spacing units. Throws MetricUndefinedError if either mask is empty.
struct SurfaceDistances {
    std::vector<double> pred_to_gt;
    std::vector<double> gt_to_pred;

    /// Both directions concatenated.
    std::vector<double> symmetric() const;
};

SurfaceDistances surface_distances(const LabelGrid& pred, const LabelGrid& gt, const Spacing& spacing = {});

/// Linear-interpolated percentile (q in [0, 100]) of an unsorted sample.
double percentile(std::vector<double> values, double q);

/// 95th percentile of the symmetric surface-distance set.
double hd95(const LabelGrid& pred, const LabelGrid& gt, const Spacing& spacing = {});
/// Maximum of the symmetric surface-distance set.
double hausdorff(const LabelGrid& pred, const LabelGrid& gt, const Spacing& spacing = {});
/// Mean of the symmetric surface-distance set.
double asd(const LabelGrid& pred, const LabelGrid& gt, const Spacing& spacing = {});

/// Exact Euclidean distance transform: distance from every voxel to the
/// nearest nonzero voxel of `sites` (infinity if there is none).
Grid3<double> distance_transform(const LabelGrid& sites, const Spacing& spacing = {});

enum class HsicKernel { linear, rbf };
const char* to_string(HsicKernel k);

/// Biased empirical HSIC, trace(K H L H) / (n - 1)^2, with rows as samples.
/// The RBF bandwidth is the median pairwise distance of each feature set.
double hsic(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, HsicKernel kernel);

/// Slice as an n x p sample matrix, one sample per row of the slice.
Eigen::MatrixXd slice_features(const ImageSlice& slice);

struct SlicePairHsic {
    std::string volume_id;
    bool orthogonal = false;
    int index_1 = 0; ///< plane A slice
    int index_2 = 0; ///< plane A slice (parallel) or plane B slice (orthogonal)
    double linear = 0;
    double rbf = 0;
};

/// Random parallel (A, A) and orthogonal (A, B) slice pairs drawn from the
/// volumes, `pairs` of each kind, with HSIC under both kernels. Slices enter
/// as slice_features(), so the two planes' row counts must agree.
std::vector<SlicePairHsic> compare_slice_pairs(const std::vector<Volume3D>& volumes, int pairs, std::uint64_t seed,
                                               const PlaneAxes& axes = {});

struct VolumeMetrics {
    std::string id;
    double dice = 0;
    double jaccard = 0;
    double hd95 = 0; ///< NaN when undefined
    double asd = 0;  ///< NaN when undefined
    bool undefined_surface = false;
};

VolumeMetrics compute_metrics(const std::string& id, const LabelGrid& pred, const LabelGrid& gt,
                              const Spacing& spacing = {});

struct Aggregate {
    double mean = 0;
    double std = 0; ///< population standard deviation
    int count = 0;  ///< finite values included
};

Aggregate aggregate(const std::vector<double>& values);

} // namespace desco
