#pragma once

#include <filesystem>
#include <vector>

#include "desco/volume.hpp"

namespace desco::nifti {

/// Single 3D volume read from a NIfTI-1 file, scaled by scl_slope/scl_inter.
struct Image {
    Dims dims;
    Spacing spacing;
    std::vector<double> data;
};

/// Reads .nii or .nii.gz. Supports uint8, int16, int32, float32 and float64
/// payloads in either byte order. Only the first volume of a 4D file is read.
Image read(const std::filesystem::path& path);

enum class Payload { u8, f32 };

/// Writes a single-file NIfTI-1 (.nii, or gzip-compressed when the name ends in .gz).
void write(const std::filesystem::path& path, const Dims& dims, const Spacing& spacing,
           const std::vector<double>& data, Payload payload);

} // namespace desco::nifti
