#include "desco/volume.hpp"

#include <cmath>

namespace desco {

std::string to_string(const Dims& dims)
{
    return std::to_string(dims.h) + "x" + std::to_string(dims.w) + "x" + std::to_string(dims.d);
}

Volume3D::Volume3D(Grid3<float> data, Spacing spacing, std::string id)
    : data_(std::move(data)), spacing_(spacing), id_(std::move(id))
{
    const Dims& d = data_.dims();
    if (d.h < 1 || d.w < 1 || d.d < 1)
        throw ShapeError("volume '" + id_ + "' is empty");
    if (!(spacing_.sx > 0 && spacing_.sy > 0 && spacing_.sz > 0))
        throw ShapeError("volume '" + id_ + "' has non-positive spacing");
    for (float v : data_.values())
        if (!std::isfinite(v))
            throw ShapeError("volume '" + id_ + "' contains non-finite intensities");
}

LabelVolume::LabelVolume(LabelGrid data, Spacing spacing) : data_(std::move(data)), spacing_(spacing)
{
    for (auto v : data_.values())
        if (v > 1)
            throw ShapeError("label volume contains value " + std::to_string(int(v)) + " outside {0,1}");
}

std::size_t LabelVolume::foreground_count() const
{
    std::size_t n = 0;
    for (auto v : data_.values())
        n += v;
    return n;
}

const char* to_string(Plane p) { return p == Plane::A ? "A" : "B"; }
Plane other(Plane p) { return p == Plane::A ? Plane::B : Plane::A; }

void PlaneAxes::validate() const
{
    if (a < 0 || a > 2 || b < 0 || b > 2 || a == b)
        throw ConfigError("plane axes must be two distinct values in {0,1,2}, got (" + std::to_string(a) + ", " +
                          std::to_string(b) + ")");
}

int plane_extent(const Dims& dims, Plane plane, const PlaneAxes& axes) { return dims.extent(axes.axis(plane)); }

std::array<int, 2> in_plane_axes(int axis)
{
    switch (axis) {
    case 0: return {1, 2};
    case 1: return {0, 2};
    default: return {0, 1};
    }
}

Index3 voxel_of(int axis, int slice, int i, int j)
{
    switch (axis) {
    case 0: return {slice, i, j};
    case 1: return {i, slice, j};
    default: return {i, j, slice};
    }
}

namespace {

void check_slice_index(const Dims& dims, Plane plane, int index, const PlaneAxes& axes)
{
    const int extent = plane_extent(dims, plane, axes);
    if (index < 0 || index >= extent)
        throw BoundsError("slice index " + std::to_string(index) + " out of range for plane " + to_string(plane) +
                          " (extent " + std::to_string(extent) + ")");
}

std::array<int, 2> slice_shape(const Dims& dims, int axis)
{
    const auto ip = in_plane_axes(axis);
    return {dims.extent(ip[0]), dims.extent(ip[1])};
}

int coord(const Index3& v, int axis) { return axis == 0 ? v.x : (axis == 1 ? v.y : v.z); }

} // namespace

template <class T>
Image2D<T> extract_slice(const Grid3<T>& grid, Plane plane, int index, const PlaneAxes& axes)
{
    axes.validate();
    check_slice_index(grid.dims(), plane, index, axes);
    const int axis = axes.axis(plane);
    const auto shape = slice_shape(grid.dims(), axis);
    Image2D<T> out(shape[0], shape[1]);
    for (int j = 0; j < shape[1]; ++j)
        for (int i = 0; i < shape[0]; ++i) {
            const Index3 v = voxel_of(axis, index, i, j);
            out(i, j) = grid(v.x, v.y, v.z);
        }
    return out;
}

template <class T>
void insert_slice(Grid3<T>& grid, Plane plane, int index, const Image2D<T>& slice, const PlaneAxes& axes)
{
    axes.validate();
    check_slice_index(grid.dims(), plane, index, axes);
    const int axis = axes.axis(plane);
    const auto shape = slice_shape(grid.dims(), axis);
    if (slice.rows() != shape[0] || slice.cols() != shape[1])
        throw ShapeError("slice shape " + std::to_string(slice.rows()) + "x" + std::to_string(slice.cols()) +
                         " does not fit plane " + to_string(plane) + " of " + to_string(grid.dims()));
    for (int j = 0; j < shape[1]; ++j)
        for (int i = 0; i < shape[0]; ++i) {
            const Index3 v = voxel_of(axis, index, i, j);
            grid(v.x, v.y, v.z) = slice(i, j);
        }
}

template Image2D<float> extract_slice(const Grid3<float>&, Plane, int, const PlaneAxes&);
template Image2D<double> extract_slice(const Grid3<double>&, Plane, int, const PlaneAxes&);
template Image2D<std::uint8_t> extract_slice(const Grid3<std::uint8_t>&, Plane, int, const PlaneAxes&);
template void insert_slice(Grid3<float>&, Plane, int, const Image2D<float>&, const PlaneAxes&);
template void insert_slice(Grid3<double>&, Plane, int, const Image2D<double>&, const PlaneAxes&);
template void insert_slice(Grid3<std::uint8_t>&, Plane, int, const Image2D<std::uint8_t>&, const PlaneAxes&);

Image2D<float> extract_slice(const Volume3D& v, Plane plane, int index, const PlaneAxes& axes)
{
    return extract_slice(v.grid(), plane, index, axes);
}

LabelSlice extract_slice(const LabelVolume& v, Plane plane, int index, const PlaneAxes& axes)
{
    return extract_slice(v.grid(), plane, index, axes);
}

template <class T>
Grid3<T> crop_grid(const Grid3<T>& grid, Index3 o, Dims size)
{
    const Dims& d = grid.dims();
    if (size.h <= 0 || size.w <= 0 || size.d <= 0 || o.x < 0 || o.y < 0 || o.z < 0 || o.x + size.h > d.h ||
        o.y + size.w > d.w || o.z + size.d > d.d)
        throw BoundsError("crop of " + to_string(size) + " at (" + std::to_string(o.x) + "," + std::to_string(o.y) +
                          "," + std::to_string(o.z) + ") exceeds volume " + to_string(d));
    Grid3<T> out(size);
    for (int z = 0; z < size.d; ++z)
        for (int y = 0; y < size.w; ++y)
            for (int x = 0; x < size.h; ++x)
                out(x, y, z) = grid(o.x + x, o.y + y, o.z + z);
    return out;
}

template Grid3<float> crop_grid(const Grid3<float>&, Index3, Dims);
template Grid3<double> crop_grid(const Grid3<double>&, Index3, Dims);
template Grid3<std::uint8_t> crop_grid(const Grid3<std::uint8_t>&, Index3, Dims);

void require_full_volume(const Volume3D& v)
{
    const Dims& d = v.dims();
    if (d.h < 4 || d.w < 4 || d.d < 4)
        throw ShapeError("volume '" + v.id() + "' has extent " + to_string(d) + "; each axis must be >= 4");
}

Volume3D crop_patch(const Volume3D& v, Index3 origin, Dims size)
{
    return Volume3D(crop_grid(v.grid(), origin, size), v.spacing(), v.id());
}

LabelVolume crop_patch(const LabelVolume& v, Index3 origin, Dims size)
{
    return LabelVolume(crop_grid(v.grid(), origin, size), v.spacing());
}

void OrthogonalAnnotation::validate() const
{
    axes.validate();
    const int ea = plane_extent(dims, Plane::A, axes);
    const int eb = plane_extent(dims, Plane::B, axes);
    if (m < 0 || m >= ea)
        throw BoundsError("annotation index m=" + std::to_string(m) + " out of range for plane A (extent " +
                          std::to_string(ea) + ")");
    if (n < 0 || n >= eb)
        throw BoundsError("annotation index n=" + std::to_string(n) + " out of range for plane B (extent " +
                          std::to_string(eb) + ")");
    const auto sa = slice_shape(dims, axes.a);
    const auto sb = slice_shape(dims, axes.b);
    if (label_a.rows() != sa[0] || label_a.cols() != sa[1] || label_b.rows() != sb[0] || label_b.cols() != sb[1])
        throw ShapeError("annotation slice shapes do not match volume " + to_string(dims));
}

bool OrthogonalAnnotation::is_annotated(int x, int y, int z) const
{
    const Index3 v{x, y, z};
    return coord(v, axes.a) == m || coord(v, axes.b) == n;
}

std::uint8_t OrthogonalAnnotation::value_at(int x, int y, int z) const
{
    const Index3 v{x, y, z};
    if (coord(v, axes.a) == m) {
        const auto ip = in_plane_axes(axes.a);
        return label_a(coord(v, ip[0]), coord(v, ip[1]));
    }
    if (coord(v, axes.b) == n) {
        const auto ip = in_plane_axes(axes.b);
        return label_b(coord(v, ip[0]), coord(v, ip[1]));
    }
    throw BoundsError("voxel is not on an annotated slice");
}

bool OrthogonalAnnotation::intersection_consistent() const
{
    const int shared = 3 - axes.a - axes.b;
    const auto ipa = in_plane_axes(axes.a);
    const auto ipb = in_plane_axes(axes.b);
    for (int t = 0; t < dims.extent(shared); ++t) {
        Index3 v{};
        int* c[3] = {&v.x, &v.y, &v.z};
        *c[axes.a] = m;
        *c[axes.b] = n;
        *c[shared] = t;
        if (label_a(coord(v, ipa[0]), coord(v, ipa[1])) != label_b(coord(v, ipb[0]), coord(v, ipb[1])))
            return false;
    }
    return true;
}

std::size_t OrthogonalAnnotation::annotated_voxel_count() const
{
    const int shared = 3 - axes.a - axes.b;
    return label_a.size() + label_b.size() - std::size_t(dims.extent(shared));
}

} // namespace desco
