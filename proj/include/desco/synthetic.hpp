#pragma once

#include <cstdint>
#include <string>
#include <utility>

#include "desco/volume.hpp"

namespace desco {

/// Parameters of a blob phantom. Foreground blobs are sheared ellipsoids whose
/// cross-section centre moves at most `drift` voxels per slice along either
/// annotation plane. Distractors are unlabeled ellipsoids at an intermediate
/// intensity, standing in for neighbouring organs of similar appearance.
struct PhantomSpec {
    Dims dims{48, 48, 48};
    int n_blobs = 1;
    double drift = 0.5;
    double noise_sigma = 0.05;
    std::uint64_t seed = 7;

    int n_distractors = 0;
    double background_intensity = 0.0;
    double foreground_intensity = 1.0;
    double distractor_intensity = 0.6;
    Spacing spacing{};

    void validate() const;
};

struct Phantom {
    Volume3D volume;
    LabelVolume label;
};

Phantom generate_phantom(const PhantomSpec& spec, const std::string& id = "phantom");

/// Elliptic cylinder along axis 2 whose cross-section is translated by exactly
/// (shift_x, shift_y) voxels per slice. Every plane-A slice holds the same
/// shape, so registration has a known translation answer.
struct TranslationPhantomSpec {
    Dims dims{48, 48, 48};
    double shift_x = 0.6;
    double shift_y = 0.3;
    double radius_x = 9.0;
    double radius_y = 7.0;
    double noise_sigma = 0.05;
    std::uint64_t seed = 1;
};

Phantom generate_translation_phantom(const TranslationPhantomSpec& spec, const std::string& id = "translation");

/// Centroid slice of the foreground along each plane's axis, rounding halves
/// toward the lower index. If the centroid slice misses the foreground the
/// nearest slice that hits it is used instead (lower index on ties).
/// Throws NoTargetError on an empty label.
std::pair<int, int> select_annotation_slices(const LabelVolume& label, const PlaneAxes& axes = {});

OrthogonalAnnotation make_orthogonal_annotation(const LabelVolume& label, int m, int n, const PlaneAxes& axes = {});

} // namespace desco
