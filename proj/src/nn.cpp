#include "desco/nn.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Core>

namespace desco::nn {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Strided = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using ConstStrided = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;
using ConstMat = Eigen::Map<const RowMat>;
using MutMat = Eigen::Map<RowMat>;

struct PadGeom {
    int hp, wp, dp;
    std::ptrdiff_t np, q0, len;

    explicit PadGeom(const Dims& d)
        : hp(d.h + 2), wp(d.w + 2), dp(d.d + 2), np(std::ptrdiff_t(hp) * wp * dp),
          q0(1 + std::ptrdiff_t(hp) * (1 + wp)),
          len(std::ptrdiff_t(d.h) + std::ptrdiff_t(hp) * (d.w - 1 + std::ptrdiff_t(wp) * (d.d - 1)))
    {}
    std::ptrdiff_t delta(int off) const
    {
        const int dx = off % 3 - 1, dy = (off / 3) % 3 - 1, dz = off / 9 - 1;
        return dx + std::ptrdiff_t(hp) * (dy + std::ptrdiff_t(wp) * dz);
    }
    // column (relative to q0) of interior voxel (x, y, z)
    std::ptrdiff_t col(int x, int y, int z) const { return x + std::ptrdiff_t(hp) * (y + std::ptrdiff_t(wp) * z); }
};

void pad_into(const Tensor& in, const PadGeom& g, std::vector<float>& out)
{
    out.assign(std::size_t(in.channels) * std::size_t(g.np), 0.0f);
    const Dims& d = in.dims;
    for (int c = 0; c < in.channels; ++c) {
        const float* src = in.channel(c);
        float* dst = out.data() + std::size_t(c) * std::size_t(g.np) + g.q0;
        for (int z = 0; z < d.d; ++z)
            for (int y = 0; y < d.w; ++y)
                std::copy_n(src + std::size_t(d.h) * (std::size_t(y) + std::size_t(d.w) * std::size_t(z)), d.h,
                            dst + g.col(0, y, z));
    }
}

} // namespace

Param::Param(std::string n, std::vector<int> s) : name(std::move(n)), shape(std::move(s))
{
    std::size_t count = 1;
    for (int v : shape)
        count *= std::size_t(v);
    value.assign(count, 0.0f);
    grad.assign(count, 0.0f);
}

Conv3d::Conv3d(std::string name, int cin, int cout, int kernel)
    : cin_(cin), cout_(cout), kernel_(kernel),
      w_(name + ".weight", {kernel == 3 ? 27 : 1, cout, cin}), b_(name + ".bias", {cout})
{
    if (kernel != 1 && kernel != 3)
        throw ConfigError("Conv3d kernel must be 1 or 3");
}

void Conv3d::init(std::mt19937_64& rng)
{
    const int fan_in = cin_ * (kernel_ == 3 ? 27 : 1);
    std::normal_distribution<float> dist(0.0f, std::sqrt(2.0f / float(fan_in)));
    for (auto& v : w_.value)
        v = dist(rng);
    std::fill(b_.value.begin(), b_.value.end(), 0.0f);
}

Tensor Conv3d::forward(const Tensor& in, std::vector<float>& saved) const
{
    if (in.channels != cin_)
        throw ShapeError(w_.name + ": expected " + std::to_string(cin_) + " input channels, got " +
                         std::to_string(in.channels));
    const std::ptrdiff_t n = std::ptrdiff_t(in.voxels());
    Tensor out(cout_, in.dims);

    if (kernel_ == 1) {
        saved.clear();
        // fixed summation order: Eigen's matrix-vector kernels round differently with buffer alignment
        for (int c = 0; c < cout_; ++c) {
            float* dst = out.channel(c);
            std::fill_n(dst, n, b_.value[std::size_t(c)]);
            for (int k = 0; k < cin_; ++k) {
                const float wk = w_.value[std::size_t(c) * std::size_t(cin_) + std::size_t(k)];
                const float* src = in.channel(k);
                for (std::ptrdiff_t i = 0; i < n; ++i)
                    dst[i] += wk * src[i];
            }
        }
        return out;
    }

    const PadGeom g(in.dims);
    pad_into(in, g, saved);
    RowMat acc = RowMat::Zero(cout_, g.len);
    for (int off = 0; off < 27; ++off) {
        const ConstStrided shifted(saved.data() + g.q0 + g.delta(off), cin_, g.len, Eigen::OuterStride<>(g.np));
        acc.noalias() += ConstMat(w_.value.data() + std::size_t(off) * cout_ * cin_, cout_, cin_) * shifted;
    }
    const Dims& d = in.dims;
    for (int c = 0; c < cout_; ++c) {
        float* dst = out.channel(c);
        const float* src = acc.data() + std::size_t(c) * std::size_t(g.len);
        const float bc = b_.value[std::size_t(c)];
        for (int z = 0; z < d.d; ++z)
            for (int y = 0; y < d.w; ++y) {
                const float* row = src + g.col(0, y, z);
                float* drow = dst + std::size_t(d.h) * (std::size_t(y) + std::size_t(d.w) * std::size_t(z));
                for (int x = 0; x < d.h; ++x)
                    drow[x] = row[x] + bc;
            }
    }
    return out;
}

Tensor Conv3d::backward(const Tensor& in, const std::vector<float>& saved, const Tensor& grad_out,
                        bool need_input_grad)
{
    const std::ptrdiff_t n = std::ptrdiff_t(in.voxels());
    for (int c = 0; c < cout_; ++c) {
        const float* src = grad_out.channel(c);
        double s = 0.0;
        for (std::ptrdiff_t i = 0; i < n; ++i)
            s += src[i];
        b_.grad[std::size_t(c)] += float(s);
    }

    if (kernel_ == 1) {
        for (int c = 0; c < cout_; ++c) {
            const float* go = grad_out.channel(c);
            for (int k = 0; k < cin_; ++k) {
                const float* src = in.channel(k);
                double s = 0.0;
                for (std::ptrdiff_t i = 0; i < n; ++i)
                    s += double(go[i]) * src[i];
                w_.grad[std::size_t(c) * std::size_t(cin_) + std::size_t(k)] += float(s);
            }
        }
        if (!need_input_grad)
            return {};
        Tensor gin(cin_, in.dims);
        for (int k = 0; k < cin_; ++k) {
            float* dst = gin.channel(k);
            for (int c = 0; c < cout_; ++c) {
                const float wk = w_.value[std::size_t(c) * std::size_t(cin_) + std::size_t(k)];
                const float* go = grad_out.channel(c);
                for (std::ptrdiff_t i = 0; i < n; ++i)
                    dst[i] += wk * go[i];
            }
        }
        return gin;
    }

    const PadGeom g(in.dims);
    const Dims& d = in.dims;
    RowMat dOp = RowMat::Zero(cout_, g.len);
    for (int c = 0; c < cout_; ++c) {
        const float* src = grad_out.channel(c);
        float* dst = dOp.data() + std::size_t(c) * std::size_t(g.len);
        for (int z = 0; z < d.d; ++z)
            for (int y = 0; y < d.w; ++y)
                std::copy_n(src + std::size_t(d.h) * (std::size_t(y) + std::size_t(d.w) * std::size_t(z)), d.h,
                            dst + g.col(0, y, z));
    }

    std::vector<float> dpad;
    if (need_input_grad)
        dpad.assign(std::size_t(cin_) * std::size_t(g.np), 0.0f);
    for (int off = 0; off < 27; ++off) {
        const std::ptrdiff_t shift = g.q0 + g.delta(off);
        const ConstStrided shifted(saved.data() + shift, cin_, g.len, Eigen::OuterStride<>(g.np));
        MutMat(w_.grad.data() + std::size_t(off) * cout_ * cin_, cout_, cin_).noalias() += dOp * shifted.transpose();
        if (need_input_grad) {
            Strided target(dpad.data() + shift, cin_, g.len, Eigen::OuterStride<>(g.np));
            target.noalias() += ConstMat(w_.value.data() + std::size_t(off) * cout_ * cin_, cout_, cin_).transpose() * dOp;
        }
    }
    if (!need_input_grad)
        return {};
    Tensor gin(cin_, d);
    for (int c = 0; c < cin_; ++c) {
        const float* src = dpad.data() + std::size_t(c) * std::size_t(g.np) + g.q0;
        float* dst = gin.channel(c);
        for (int z = 0; z < d.d; ++z)
            for (int y = 0; y < d.w; ++y)
                std::copy_n(src + g.col(0, y, z), d.h,
                            dst + std::size_t(d.h) * (std::size_t(y) + std::size_t(d.w) * std::size_t(z)));
    }
    return gin;
}

void relu_inplace(Tensor& t)
{
    for (auto& v : t.data)
        v = std::max(v, 0.0f);
}

void relu_backward(const Tensor& out, Tensor& grad)
{
    for (std::size_t k = 0; k < grad.data.size(); ++k)
        if (out.data[k] <= 0.0f)
            grad.data[k] = 0.0f;
}

namespace {

Dims half(const Dims& d)
{
    if (d.h % 2 || d.w % 2 || d.d % 2)
        throw ShapeError("avg_pool2 needs even extents, got " + to_string(d));
    return {d.h / 2, d.w / 2, d.d / 2};
}

} // namespace

Tensor avg_pool2(const Tensor& in)
{
    const Dims o = half(in.dims);
    const Dims& d = in.dims;
    Tensor out(in.channels, o);
    for (int c = 0; c < in.channels; ++c) {
        const float* src = in.channel(c);
        float* dst = out.channel(c);
        for (int z = 0; z < d.d; ++z)
            for (int y = 0; y < d.w; ++y) {
                const float* row = src + std::size_t(d.h) * (std::size_t(y) + std::size_t(d.w) * std::size_t(z));
                float* orow = dst + std::size_t(o.h) * (std::size_t(y / 2) + std::size_t(o.w) * std::size_t(z / 2));
                for (int x = 0; x < d.h; ++x)
                    orow[x / 2] += 0.125f * row[x];
            }
    }
    return out;
}

Tensor avg_pool2_backward(const Tensor& grad_out, const Dims& in_dims)
{
    const Dims& o = grad_out.dims;
    Tensor gin(grad_out.channels, in_dims);
    for (int c = 0; c < grad_out.channels; ++c) {
        const float* src = grad_out.channel(c);
        float* dst = gin.channel(c);
        for (int z = 0; z < in_dims.d; ++z)
            for (int y = 0; y < in_dims.w; ++y) {
                const float* orow = src + std::size_t(o.h) * (std::size_t(y / 2) + std::size_t(o.w) * std::size_t(z / 2));
                float* row = dst + std::size_t(in_dims.h) * (std::size_t(y) + std::size_t(in_dims.w) * std::size_t(z));
                for (int x = 0; x < in_dims.h; ++x)
                    row[x] = 0.125f * orow[x / 2];
            }
    }
    return gin;
}

namespace {

// Linear x2 upsampling along one axis. `inner` is the element distance between
// neighbours along the axis, `n` its input extent and `outer` the number of
// independent blocks of n * inner elements.
void upsample_axis(const float* src, float* dst, int n, std::size_t inner, std::size_t outer)
{
    for (std::size_t o = 0; o < outer; ++o) {
        const float* s = src + o * std::size_t(n) * inner;
        float* t = dst + o * std::size_t(2 * n) * inner;
        for (int i = 0; i < n; ++i) {
            const float* c = s + std::size_t(i) * inner;
            const float* lo = s + std::size_t(std::max(i - 1, 0)) * inner;
            const float* hi = s + std::size_t(std::min(i + 1, n - 1)) * inner;
            float* even = t + std::size_t(2 * i) * inner;
            float* odd = even + inner;
            for (std::size_t k = 0; k < inner; ++k) {
                even[k] = 0.75f * c[k] + 0.25f * lo[k];
                odd[k] = 0.75f * c[k] + 0.25f * hi[k];
            }
        }
    }
}

void upsample_axis_backward(const float* gsrc, float* gdst, int n, std::size_t inner, std::size_t outer)
{
    for (std::size_t o = 0; o < outer; ++o) {
        const float* s = gsrc + o * std::size_t(2 * n) * inner;
        float* t = gdst + o * std::size_t(n) * inner;
        std::fill(t, t + std::size_t(n) * inner, 0.0f);
        for (int i = 0; i < n; ++i) {
            float* c = t + std::size_t(i) * inner;
            float* lo = t + std::size_t(std::max(i - 1, 0)) * inner;
            float* hi = t + std::size_t(std::min(i + 1, n - 1)) * inner;
            const float* even = s + std::size_t(2 * i) * inner;
            const float* odd = even + inner;
            for (std::size_t k = 0; k < inner; ++k) {
                c[k] += 0.75f * (even[k] + odd[k]);
                lo[k] += 0.25f * even[k];
                hi[k] += 0.25f * odd[k];
            }
        }
    }
}

} // namespace

Tensor upsample2(const Tensor& in)
{
    const Dims& d = in.dims;
    const std::size_t C = std::size_t(in.channels);
    std::vector<float> a(C * 2 * d.count()), b(C * 4 * d.count());
    Tensor out(in.channels, {2 * d.h, 2 * d.w, 2 * d.d});
    // axis 0: inner 1, outer = C*w*d
    upsample_axis(in.data.data(), a.data(), d.h, 1, C * std::size_t(d.w) * d.d);
    // axis 1: inner 2h, outer C*d
    upsample_axis(a.data(), b.data(), d.w, std::size_t(2 * d.h), C * std::size_t(d.d));
    // axis 2: inner 4hw, outer C
    upsample_axis(b.data(), out.data.data(), d.d, std::size_t(4) * d.h * d.w, C);
    return out;
}

Tensor upsample2_backward(const Tensor& grad_out, const Dims& in_dims)
{
    const Dims& d = in_dims;
    const std::size_t C = std::size_t(grad_out.channels);
    std::vector<float> b(C * 4 * d.count()), a(C * 2 * d.count());
    Tensor gin(grad_out.channels, d);
    upsample_axis_backward(grad_out.data.data(), b.data(), d.d, std::size_t(4) * d.h * d.w, C);
    upsample_axis_backward(b.data(), a.data(), d.w, std::size_t(2 * d.h), C * std::size_t(d.d));
    upsample_axis_backward(a.data(), gin.data.data(), d.h, 1, C * std::size_t(d.w) * d.d);
    return gin;
}

void add_inplace(Tensor& a, const Tensor& b)
{
    if (a.data.size() != b.data.size())
        throw ShapeError("add_inplace: tensor sizes differ");
    for (std::size_t k = 0; k < a.data.size(); ++k)
        a.data[k] += b.data[k];
}

} // namespace desco::nn
