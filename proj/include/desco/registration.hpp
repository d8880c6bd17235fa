#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "desco/volume.hpp"

namespace desco {

/// Per-pixel displacement in voxels. `du` runs along the slice's first axis
/// (rows), `dv` along the second. A field moves content: warping an image by
/// a uniform (+1, 0) field shifts it one row toward higher indices, i.e.
/// out(i, j) = in(i - du(i, j), j - dv(i, j)).
struct DeformationField2D {
    Image2D<float> du;
    Image2D<float> dv;

    DeformationField2D() = default;
    DeformationField2D(int rows, int cols) : du(rows, cols, 0.0f), dv(rows, cols, 0.0f) {}

    int rows() const { return du.rows(); }
    int cols() const { return du.cols(); }
    double max_magnitude() const;
    bool finite() const;
};

enum class RegistrationBackend { builtin_demons, translation_only, external_command };

const char* to_string(RegistrationBackend b);
RegistrationBackend parse_backend(const std::string& name);

struct RegistrationConfig {
    RegistrationBackend backend = RegistrationBackend::builtin_demons;
    int iterations = 50;       ///< per pyramid level
    double sigma = 1.0;        ///< Gaussian smoothing of the accumulated field
    double fluid_sigma = 0.5;  ///< Gaussian smoothing of each update
    int levels = 2;
    double field_cap = 10.0;   ///< max |displacement| in voxels
    /// Shell template for the external backend. {moving}, {fixed} and {out}
    /// are replaced by paths to simple-format files; the tool must write a
    /// field file (see save_field) at {out}.
    std::string external_command;

    void validate() const;
};

/// Registers `moving` onto `fixed`: warp_image(moving, field) approximates fixed.
/// The builtin backend never returns a field whose warped MSE exceeds the
/// unwarped MSE. Throws RegistrationError if the field goes non-finite.
DeformationField2D register_slices(const ImageSlice& moving, const ImageSlice& fixed, const RegistrationConfig& cfg);

/// Bilinear image warp; samples outside the slice clamp to the edge.
ImageSlice warp_image(const ImageSlice& image, const DeformationField2D& field);

/// Nearest-neighbour label warp; samples outside the slice read background.
LabelSlice warp_label(const LabelSlice& label, const DeformationField2D& field);

/// Field that applies `first` then `second`: warp(warp(x, first), second) == warp(x, result)
/// up to interpolation.
DeformationField2D compose(const DeformationField2D& first, const DeformationField2D& second);

double mean_squared_error(const ImageSlice& a, const ImageSlice& b);

/// Largest 8-connected component followed by a 3x3 binary opening.
LabelSlice morphology_cleanup(const LabelSlice& label);

struct SliceQuality {
    int slice = 0;
    int distance = 0;
    std::size_t fg_area = 0;
};

struct PseudoLabelVolume {
    LabelGrid data;
    Plane source_plane = Plane::A;
    int source_index = 0;
    std::vector<SliceQuality> report;
};

/// Spreads one annotated slice through the volume along `plane`, one adjacent
/// pair at a time in both directions from `index`.
PseudoLabelVolume propagate(const Volume3D& volume, const LabelSlice& label, Plane plane, int index,
                            const RegistrationConfig& cfg, const PlaneAxes& axes = {});

std::pair<PseudoLabelVolume, PseudoLabelVolume> propagate_orthogonal(const Volume3D& volume,
                                                                     const OrthogonalAnnotation& annotation,
                                                                     const RegistrationConfig& cfg);

// Field files: "<stem>.raw" holds du then dv as little-endian float32, each
// rows*cols values with rows fastest; "<stem>.json" is {shape, order:[du,dv]}.
void save_field(const DeformationField2D& field, const std::filesystem::path& raw_path);
DeformationField2D load_field(const std::filesystem::path& raw_path);

/// 2D slices in the simple volume format (shape [rows, cols, 1]).
void save_slice(const ImageSlice& slice, const std::filesystem::path& raw_path);
ImageSlice load_slice(const std::filesystem::path& raw_path);

} // namespace desco
