#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "nodect/layers.hpp"
#include "nodect/volume.hpp"

namespace nodect {

/// Encoder-decoder regularizer layout.
///
/// Level l works at 1/2^l resolution with base_channels * 2^l feature maps.
/// Each encoder level runs `convs_per_level` conv(+norm)+ReLU blocks, preceded
/// by 2x average pooling for l > 0. Each decoder level upsamples the coarser
/// features, concatenates the matching encoder output, and runs the same
/// number of blocks. A final projection conv (kernel `final_kernel`, no
/// activation) maps back to one channel. With convs_per_level == 0 the network
/// degenerates to that single projection applied to the input.
///
/// The convolutions see the input multiplied by the fixed `value_scale` and
/// their output is divided by it again, N(x) = g(s x) / s, so that hidden
/// activations are of unit order for attenuation values of a few 0.01 mm^-1.
struct NetArch {
  std::uint32_t n_levels = 2;
  std::uint32_t base_channels = 4;
  std::uint32_t kernel_size = 3;
  std::uint32_t dims = 2;
  std::uint32_t convs_per_level = 2;
  std::uint32_t final_kernel = 1;
  bool instance_norm = false;
  nn::Padding padding = nn::Padding::zero;
  double value_scale = 1.0 / 0.06;

  void validate() const;
  bool operator==(const NetArch&) const = default;
};

/// One convolution (plus optional instance norm) inside the flat parameter vector.
struct ConvSlot {
  nn::ConvShape shape;
  std::size_t weight_offset = 0;
  std::size_t bias_offset = 0;
  bool norm = false;
  std::size_t norm_scale_offset = 0;
  std::size_t norm_shift_offset = 0;
  bool relu = true;
};

/// Ordered slot list for an architecture: encoder levels, decoder levels
/// (coarse to fine), final projection.
std::vector<ConvSlot> layer_slots(const NetArch& arch);
std::size_t param_count(const NetArch& arch);

/// All trainable network state as one flat vector in slot order.
struct NetParams {
  NetArch arch;
  std::vector<double> values;

  std::span<const double> flatten() const { return values; }
  static NetParams unflatten(const NetArch& arch, std::vector<double> flat);
};

/// He-normal hidden layers, zero biases, unit/zero norm affine, and an all-zero
/// final projection so the network output starts identically zero.
NetParams init_params(const NetArch& arch, std::uint64_t seed);

Volume net_forward(const NetParams& params, const Volume& x);

struct NetVjp {
  std::vector<double> grad_params;
  Volume grad_x;
};

/// Transposed Jacobian products of net_forward w.r.t. parameters and input.
/// Recomputes the forward activations internally.
NetVjp net_vjp(const NetParams& params, const Volume& x, const Volume& cotangent);

/// Forward evaluation that also returns the VJP for the same input, sharing
/// one forward pass.
std::pair<Volume, NetVjp> net_forward_vjp(const NetParams& params, const Volume& x, const Volume& cotangent);

/// Binary layout: "NPRM", u32 version, u32 arch fields (n_levels,
/// base_channels, kernel_size, dims, convs_per_level, final_kernel,
/// instance_norm, padding), f64 value_scale, u32 parameter count, then f64
/// values; all little-endian.
void save_params(const std::string& path, const NetParams& params);
NetParams load_params(const std::string& path);

}  // namespace nodect
