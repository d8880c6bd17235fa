#include "desco/labels.hpp"

#include <cmath>
#include <numeric>

namespace desco {

std::size_t MixedLabel::gt_count() const
{
    std::size_t n = 0;
    for (auto v : provenance.values())
        n += v == std::uint8_t(Provenance::gt);
    return n;
}

MixedLabel label_mix(const PseudoLabelVolume& pseudo, const OrthogonalAnnotation& annotation)
{
    annotation.validate();
    const Dims& d = pseudo.data.dims();
    if (!(d == annotation.dims))
        throw ShapeError("label_mix: pseudo label " + to_string(d) + " vs annotation " + to_string(annotation.dims));
    MixedLabel out{pseudo.data, Grid3<std::uint8_t>(d, std::uint8_t(Provenance::pseudo)), pseudo.source_plane};
    for (int z = 0; z < d.d; ++z)
        for (int y = 0; y < d.w; ++y)
            for (int x = 0; x < d.h; ++x)
                if (annotation.is_annotated(x, y, z)) {
                    out.data(x, y, z) = annotation.value_at(x, y, z);
                    out.provenance(x, y, z) = std::uint8_t(Provenance::gt);
                }
    return out;
}

double WeightMap::sum() const
{
    return std::accumulate(data.values().begin(), data.values().end(), 0.0);
}

WeightMap build_weight_map(const OrthogonalAnnotation& annotation, Plane plane, int source_index, double alpha,
                           const Dims& dims)
{
    if (!(alpha >= 0.0 && alpha < 1.0))
        throw ConfigError("weight map alpha must lie in [0, 1), got " + std::to_string(alpha));
    if (!(dims == annotation.dims))
        throw ShapeError("weight map dims " + to_string(dims) + " vs annotation " + to_string(annotation.dims));
    const int axis = annotation.axes.axis(plane);
    const int extent = dims.extent(axis);
    if (source_index < 0 || source_index >= extent)
        throw BoundsError("weight map source index " + std::to_string(source_index) + " out of range for plane " +
                          to_string(plane) + " (extent " + std::to_string(extent) + ")");

    std::vector<double> per_slice(static_cast<std::size_t>(extent));
    for (int k = 0; k < extent; ++k)
        per_slice[std::size_t(k)] = std::pow(alpha, double(std::abs(k - source_index)));

    WeightMap w{Grid3<double>(dims), alpha, plane, source_index};
    for (int z = 0; z < dims.d; ++z)
        for (int y = 0; y < dims.w; ++y)
            for (int x = 0; x < dims.h; ++x) {
                const int c = axis == 0 ? x : (axis == 1 ? y : z);
                w.data(x, y, z) = annotation.is_annotated(x, y, z) ? 1.0 : per_slice[std::size_t(c)];
            }
    return w;
}

} // namespace desco
