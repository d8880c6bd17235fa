#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "desco/volume.hpp"

namespace desco::nn {

/// Channel-major activation: data[c * dims.count() + voxel], voxels axis 0 fastest.
struct Tensor {
    int channels = 0;
    Dims dims;
    std::vector<float> data;

    Tensor() = default;
    Tensor(int c, Dims d, float fill = 0.0f) : channels(c), dims(d), data(std::size_t(c) * d.count(), fill) {}

    std::size_t voxels() const { return dims.count(); }
    float* channel(int c) { return data.data() + std::size_t(c) * voxels(); }
    const float* channel(int c) const { return data.data() + std::size_t(c) * voxels(); }
};

/// Trainable tensor with its gradient accumulator.
struct Param {
    std::string name;
    std::vector<int> shape;
    std::vector<float> value;
    std::vector<float> grad;

    Param(std::string n, std::vector<int> s);
    std::size_t size() const { return value.size(); }
};

/// 3D convolution with kernel 3 (same padding) or 1. Weight layout is
/// [offset][cout][cin] with offset = dx + 3 (dy + 3 dz) for kernel 3.
class Conv3d {
public:
    Conv3d(std::string name, int cin, int cout, int kernel);

    int cin() const { return cin_; }
    int cout() const { return cout_; }
    int kernel() const { return kernel_; }
    Param& weight() { return w_; }
    Param& bias() { return b_; }
    const Param& weight() const { return w_; }
    const Param& bias() const { return b_; }

    /// He-normal weights, zero bias.
    void init(std::mt19937_64& rng);

    /// `saved` receives what backward needs (the padded input for kernel 3).
    Tensor forward(const Tensor& in, std::vector<float>& saved) const;
    /// Accumulates parameter gradients; returns d/d input when `need_input_grad`.
    Tensor backward(const Tensor& in, const std::vector<float>& saved, const Tensor& grad_out, bool need_input_grad);

private:
    int cin_, cout_, kernel_;
    Param w_, b_;
};

void relu_inplace(Tensor& t);
/// Zeroes grad where the forward output was <= 0.
void relu_backward(const Tensor& out, Tensor& grad);

/// 2x2x2 average pooling; every extent must be even.
Tensor avg_pool2(const Tensor& in);
Tensor avg_pool2_backward(const Tensor& grad_out, const Dims& in_dims);

/// Trilinear x2 upsampling with half-pixel centres and edge clamping.
Tensor upsample2(const Tensor& in);
Tensor upsample2_backward(const Tensor& grad_out, const Dims& in_dims);

void add_inplace(Tensor& a, const Tensor& b);

} // namespace desco::nn
