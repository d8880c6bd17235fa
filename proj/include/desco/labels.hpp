#pragma once

#include <cstdint>

#include "desco/registration.hpp"
#include "desco/volume.hpp"

namespace desco {

enum class Provenance : std::uint8_t { pseudo = 0, gt = 1 };

/// Pseudo label with the annotated voxels written back in.
struct MixedLabel {
    LabelGrid data;
    Grid3<std::uint8_t> provenance; ///< Provenance values
    Plane plane = Plane::A;

    std::size_t gt_count() const;
};

/// Voxels on either annotated slice take the annotation (GT), all others the
/// pseudo label (PSEUDO). Throws ShapeError on mismatched dims.
MixedLabel label_mix(const PseudoLabelVolume& pseudo, const OrthogonalAnnotation& annotation);

/// Per-voxel credibility: 1 on every voxel of either annotated slice, otherwise
/// alpha^d with d the slice distance to `source_index` along `plane`.
struct WeightMap {
    Grid3<double> data;
    double alpha = 0.0;
    Plane plane = Plane::A;
    int source_index = 0;

    double sum() const;
};

/// Throws ConfigError unless 0 <= alpha < 1, BoundsError on a bad source index.
WeightMap build_weight_map(const OrthogonalAnnotation& annotation, Plane plane, int source_index, double alpha,
                           const Dims& dims);

} // namespace desco
