#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <utility>
#include <vector>

namespace nodect::nn {

enum class Padding { zero, periodic };

/// Multi-channel feature map, channel-major then x-fastest. 2D maps keep
/// size[2] == 1.
struct Tensor {
  int dims = 2;
  std::size_t channels = 0;
  std::array<std::size_t, 3> size{1, 1, 1};
  std::vector<double> data;

  Tensor() = default;
  Tensor(int dims, std::size_t channels, std::array<std::size_t, 3> size, double fill = 0.0);

  std::size_t spatial() const { return size[0] * size[1] * size[2]; }
  std::span<double> channel(std::size_t c) { return {data.data() + c * spatial(), spatial()}; }
  std::span<const double> channel(std::size_t c) const { return {data.data() + c * spatial(), spatial()}; }
  bool same_shape(const Tensor& o) const { return dims == o.dims && channels == o.channels && size == o.size; }
};

/// Convolution weights, laid out [out][in][kz][ky][kx] (kz == 1 in 2D).
struct ConvShape {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kernel = 3;
  int dims = 2;

  std::size_t taps() const { return dims == 3 ? kernel * kernel * kernel : kernel * kernel; }
  std::size_t weight_count() const { return out_channels * in_channels * taps(); }
  std::size_t param_count() const { return weight_count() + out_channels; }
};

/// "Same" cross-correlation with the given padding; odd kernels only.
Tensor conv_forward(const Tensor& in, const ConvShape& shape, std::span<const double> weights,
                    std::span<const double> bias, Padding padding);

/// Accumulates dL/dW and dL/db into grad_weights / grad_bias and returns dL/din.
Tensor conv_vjp(const Tensor& in, const ConvShape& shape, std::span<const double> weights, const Tensor& grad_out,
                std::span<double> grad_weights, std::span<double> grad_bias, Padding padding);

Tensor relu_forward(const Tensor& in);
/// Derivative is taken as 0 where the input is exactly 0.
Tensor relu_vjp(const Tensor& in, const Tensor& grad_out);

/// 2x average pooling over each of the map's `dims` spatial axes (even lengths).
Tensor avgpool_forward(const Tensor& in);
Tensor avgpool_vjp(const Tensor& in, const Tensor& grad_out);

/// Nearest-neighbour 2x upsampling over the same axes avgpool reduces.
Tensor upsample_forward(const Tensor& in);
Tensor upsample_vjp(const Tensor& grad_out);

Tensor concat_forward(const Tensor& a, const Tensor& b);
/// Splits the gradient back into the parts matching a and b.
std::pair<Tensor, Tensor> concat_vjp(const Tensor& a, const Tensor& grad_out);

inline constexpr double kInstanceNormVarianceFloor = 1e-5;

/// Per-channel normalization y = scale_c (x - mean_c) / sqrt(max(var_c, floor)) + shift_c.
Tensor instance_norm_forward(const Tensor& in, std::span<const double> scale, std::span<const double> shift);
Tensor instance_norm_vjp(const Tensor& in, std::span<const double> scale, const Tensor& grad_out,
                         std::span<double> grad_scale, std::span<double> grad_shift);

}  // namespace nodect::nn
