#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "desco/errors.hpp"

namespace desco {

/// Grid extents. Axis 0 has extent h, axis 1 w, axis 2 d.
struct Dims {
    int h = 0;
    int w = 0;
    int d = 0;

    std::size_t count() const { return std::size_t(h) * std::size_t(w) * std::size_t(d); }
    int extent(int axis) const { return axis == 0 ? h : (axis == 1 ? w : d); }
    bool operator==(const Dims&) const = default;
};

std::string to_string(const Dims& dims);

struct Spacing {
    double sx = 1.0;
    double sy = 1.0;
    double sz = 1.0;
    double along(int axis) const { return axis == 0 ? sx : (axis == 1 ? sy : sz); }
};

struct Index3 {
    int x = 0;
    int y = 0;
    int z = 0;
    bool operator==(const Index3&) const = default;
};

/// Dense 3D array, axis 0 fastest in memory (NIfTI order).
template <class T>
class Grid3 {
public:
    Grid3() = default;
    explicit Grid3(Dims dims, T fill = T{}) : dims_(dims), data_(dims.count(), fill) {}
    Grid3(Dims dims, std::vector<T> data) : dims_(dims), data_(std::move(data))
    {
        if (data_.size() != dims_.count())
            throw ShapeError("grid data size " + std::to_string(data_.size()) +
                             " does not match " + to_string(dims_));
    }

    const Dims& dims() const { return dims_; }
    std::size_t size() const { return data_.size(); }

    std::size_t index(int x, int y, int z) const
    {
        return std::size_t(x) + std::size_t(dims_.h) * (std::size_t(y) + std::size_t(dims_.w) * std::size_t(z));
    }
    bool contains(int x, int y, int z) const
    {
        return x >= 0 && y >= 0 && z >= 0 && x < dims_.h && y < dims_.w && z < dims_.d;
    }

    T& operator()(int x, int y, int z) { return data_[index(x, y, z)]; }
    const T& operator()(int x, int y, int z) const { return data_[index(x, y, z)]; }
    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    std::span<T> values() { return data_; }
    std::span<const T> values() const { return data_; }
    const std::vector<T>& raw() const { return data_; }

    bool operator==(const Grid3&) const = default;

private:
    Dims dims_;
    std::vector<T> data_;
};

/// Dense 2D array, axis 0 (rows) fastest in memory.
template <class T>
class Image2D {
public:
    Image2D() = default;
    Image2D(int rows, int cols, T fill = T{})
        : rows_(rows), cols_(cols), data_(std::size_t(rows) * std::size_t(cols), fill) {}

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool same_shape(const Image2D& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
    bool contains(int i, int j) const { return i >= 0 && j >= 0 && i < rows_ && j < cols_; }

    std::size_t index(int i, int j) const { return std::size_t(i) + std::size_t(rows_) * std::size_t(j); }
    T& operator()(int i, int j) { return data_[index(i, j)]; }
    const T& operator()(int i, int j) const { return data_[index(i, j)]; }
    T& operator[](std::size_t k) { return data_[k]; }
    const T& operator[](std::size_t k) const { return data_[k]; }

    std::span<T> values() { return data_; }
    std::span<const T> values() const { return data_; }

    bool operator==(const Image2D&) const = default;

private:
    int rows_ = 0;
    int cols_ = 0;
    std::vector<T> data_;
};

using LabelGrid = Grid3<std::uint8_t>;
using LabelSlice = Image2D<std::uint8_t>;
using ImageSlice = Image2D<float>;

/// Scalar intensity volume. Immutable once constructed. Patches cut from a
/// volume are Volume3D too, so the constructor only rejects empty grids;
/// full dataset volumes go through require_full_volume().
class Volume3D {
public:
    Volume3D(Grid3<float> data, Spacing spacing, std::string id);

    const Grid3<float>& grid() const { return data_; }
    const Dims& dims() const { return data_.dims(); }
    const Spacing& spacing() const { return spacing_; }
    const std::string& id() const { return id_; }

private:
    Grid3<float> data_;
    Spacing spacing_;
    std::string id_;
};

/// Throws ShapeError unless every axis has extent >= 4.
void require_full_volume(const Volume3D& v);

/// Binary {0,1} label volume.
class LabelVolume {
public:
    LabelVolume(LabelGrid data, Spacing spacing);

    const LabelGrid& grid() const { return data_; }
    const Dims& dims() const { return data_.dims(); }
    const Spacing& spacing() const { return spacing_; }
    std::size_t foreground_count() const;

private:
    LabelGrid data_;
    Spacing spacing_;
};

/// The two annotation planes. A slices along axis 2, B along axis 0 by default.
enum class Plane { A, B };

const char* to_string(Plane p);
Plane other(Plane p);

/// Which grid axis each plane slices along. Configurable; defaults to (2, 0).
struct PlaneAxes {
    int a = 2;
    int b = 0;
    int axis(Plane p) const { return p == Plane::A ? a : b; }
    void validate() const;
};

int plane_extent(const Dims& dims, Plane plane, const PlaneAxes& axes = {});

/// In-plane coordinate mapping. For a slice along axis k the in-plane axes are
/// the remaining two in increasing order: (rows, cols).
std::array<int, 2> in_plane_axes(int axis);
Index3 voxel_of(int axis, int slice, int i, int j);

template <class T>
Image2D<T> extract_slice(const Grid3<T>& grid, Plane plane, int index, const PlaneAxes& axes = {});
template <class T>
void insert_slice(Grid3<T>& grid, Plane plane, int index, const Image2D<T>& slice, const PlaneAxes& axes = {});

Image2D<float> extract_slice(const Volume3D& v, Plane plane, int index, const PlaneAxes& axes = {});
LabelSlice extract_slice(const LabelVolume& v, Plane plane, int index, const PlaneAxes& axes = {});

template <class T>
Grid3<T> crop_grid(const Grid3<T>& grid, Index3 origin, Dims size);

/// Copies a sub-block. No implicit padding: out-of-bounds crops throw BoundsError.
Volume3D crop_patch(const Volume3D& v, Index3 origin, Dims size);
LabelVolume crop_patch(const LabelVolume& v, Index3 origin, Dims size);

/// One labeled slice per plane: slice m of plane A and slice n of plane B.
struct OrthogonalAnnotation {
    int m = 0;
    int n = 0;
    LabelSlice label_a;
    LabelSlice label_b;
    Dims dims;
    PlaneAxes axes;

    /// Throws BoundsError/ShapeError on malformed indices or slice shapes.
    void validate() const;
    /// True when label_a and label_b agree on their shared line of voxels.
    bool intersection_consistent() const;
    /// Number of distinct annotated voxels (union of both slices).
    std::size_t annotated_voxel_count() const;
    /// True if voxel lies on slice m of plane A or slice n of plane B.
    bool is_annotated(int x, int y, int z) const;
    /// Ground truth value of an annotated voxel.
    std::uint8_t value_at(int x, int y, int z) const;
};

} // namespace desco
