#include "nodect/net.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "binary_io.hpp"
#include "nodect/errors.hpp"

namespace nodect {

using nn::Tensor;

namespace {

constexpr char kMagic[4] = {'N', 'P', 'R', 'M'};
constexpr std::uint32_t kVersion = 2;

std::size_t level_channels(const NetArch& arch, std::uint32_t level) {
  return static_cast<std::size_t>(arch.base_channels) << level;
}

Tensor to_tensor(const Volume& v, int dims, double scale) {
  Tensor t(dims, 1, v.grid().shape);
  std::transform(v.values().begin(), v.values().end(), t.data.begin(), [scale](double a) { return a * scale; });
  return t;
}

Volume to_volume(const Tensor& t, const VolumeGrid& grid, double scale) {
  Volume v(grid, t.data);
  for (double& a : v.values()) a *= scale;
  return v;
}

void check_input(const NetArch& arch, const Volume& x) {
  if (x.grid().dims != static_cast<int>(arch.dims)) throw InvalidArgument("network input dimensionality mismatch");
  const std::size_t factor = std::size_t{1} << (arch.n_levels - 1);
  for (std::uint32_t a = 0; a < arch.dims; ++a) {
    if (x.grid().shape[a] % factor != 0) {
      throw InvalidArgument("network input side " + std::to_string(x.grid().shape[a]) + " is not a multiple of " +
                            std::to_string(factor));
    }
  }
}

// Activations retained for the backward pass of one conv block.
struct BlockCache {
  Tensor input;
  Tensor conv_out;
  Tensor norm_out;
};

struct ForwardTrace {
  std::vector<BlockCache> blocks;           // one per slot, in slot order
  std::vector<std::array<std::size_t, 3>> pool_inputs;  // input sizes of each pool, encoder order
  std::vector<std::size_t> skip_channels;   // channel count of each encoder level output
};

std::span<const double> slice(const std::vector<double>& v, std::size_t offset, std::size_t n) {
  return {v.data() + offset, n};
}

std::span<double> slice(std::vector<double>& v, std::size_t offset, std::size_t n) { return {v.data() + offset, n}; }

Tensor run_block(const NetParams& p, const ConvSlot& s, Tensor h, BlockCache* cache) {
  Tensor y = nn::conv_forward(h, s.shape, slice(p.values, s.weight_offset, s.shape.weight_count()),
                              slice(p.values, s.bias_offset, s.shape.out_channels), p.arch.padding);
  if (cache) cache->input = std::move(h);
  if (s.norm) {
    Tensor n = nn::instance_norm_forward(y, slice(p.values, s.norm_scale_offset, s.shape.out_channels),
                                         slice(p.values, s.norm_shift_offset, s.shape.out_channels));
    if (cache) cache->conv_out = std::move(y);
    y = std::move(n);
  }
  if (!s.relu) return y;
  Tensor r = nn::relu_forward(y);
  if (cache) (s.norm ? cache->norm_out : cache->conv_out) = std::move(y);
  return r;
}

// Propagates `g` (gradient w.r.t. the block output) back to the block input,
// accumulating parameter gradients.
Tensor back_block(const NetParams& p, const ConvSlot& s, BlockCache& cache, Tensor g, std::vector<double>& grad) {
  if (s.relu) g = nn::relu_vjp(s.norm ? cache.norm_out : cache.conv_out, g);
  if (s.norm) {
    g = nn::instance_norm_vjp(cache.conv_out, slice(p.values, s.norm_scale_offset, s.shape.out_channels), g,
                              slice(grad, s.norm_scale_offset, s.shape.out_channels),
                              slice(grad, s.norm_shift_offset, s.shape.out_channels));
  }
  return nn::conv_vjp(cache.input, s.shape, slice(p.values, s.weight_offset, s.shape.weight_count()), g,
                      slice(grad, s.weight_offset, s.shape.weight_count()),
                      slice(grad, s.bias_offset, s.shape.out_channels), p.arch.padding);
}

Tensor forward_impl(const NetParams& p, const Volume& x, ForwardTrace* trace) {
  const NetArch& arch = p.arch;
  check_input(arch, x);
  if (p.values.size() != param_count(arch)) throw InvalidArgument("parameter vector length does not match arch");
  const auto slots = layer_slots(arch);
  if (trace) trace->blocks.assign(slots.size(), {});

  Tensor h = to_tensor(x, static_cast<int>(arch.dims), arch.value_scale);
  std::size_t k = 0;
  std::vector<Tensor> skips;
  if (arch.convs_per_level > 0) {
    for (std::uint32_t l = 0; l < arch.n_levels; ++l) {
      if (l > 0) {
        if (trace) trace->pool_inputs.push_back(h.size);
        h = nn::avgpool_forward(h);
      }
      for (std::uint32_t b = 0; b < arch.convs_per_level; ++b, ++k) {
        h = run_block(p, slots[k], std::move(h), trace ? &trace->blocks[k] : nullptr);
      }
      if (l + 1 < arch.n_levels) {
        if (trace) trace->skip_channels.push_back(h.channels);
        skips.push_back(h);
      }
    }
    for (std::uint32_t l = arch.n_levels - 1; l-- > 0;) {
      h = nn::concat_forward(nn::upsample_forward(h), skips[l]);
      for (std::uint32_t b = 0; b < arch.convs_per_level; ++b, ++k) {
        h = run_block(p, slots[k], std::move(h), trace ? &trace->blocks[k] : nullptr);
      }
    }
  }
  return run_block(p, slots[k], std::move(h), trace ? &trace->blocks[k] : nullptr);
}

Tensor add(Tensor a, const Tensor& b) {
  for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] += b.data[i];
  return a;
}

NetVjp backward_impl(const NetParams& p, ForwardTrace& trace, const Volume& x, const Volume& cotangent) {
  const NetArch& arch = p.arch;
  const auto slots = layer_slots(arch);
  NetVjp out{std::vector<double>(p.values.size(), 0.0), Volume()};

  std::size_t k = slots.size() - 1;
  // N(x) = g(s x) / s: the cotangent enters scaled by 1/s and the input
  // gradient leaves scaled by s.
  Tensor g = back_block(p, slots[k], trace.blocks[k],
                        to_tensor(cotangent, static_cast<int>(arch.dims), 1.0 / arch.value_scale), out.grad_params);
  if (arch.convs_per_level > 0) {
    // Gradients arriving at each encoder level's output through its skip connection.
    std::vector<Tensor> skip_grads(arch.n_levels > 1 ? arch.n_levels - 1 : 0);
    for (std::uint32_t l = 0; l + 1 < arch.n_levels; ++l) {
      for (std::uint32_t b = 0; b < arch.convs_per_level; ++b) {
        --k;
        g = back_block(p, slots[k], trace.blocks[k], std::move(g), out.grad_params);
      }
      // g is now the gradient of concat(upsample(coarser), skip_level).
      const std::size_t up_channels = g.channels - trace.skip_channels[l];
      Tensor up_shape(g.dims, up_channels, g.size);
      auto [g_up, g_skip] = nn::concat_vjp(up_shape, g);
      skip_grads[l] = std::move(g_skip);
      g = nn::upsample_vjp(g_up);
    }
    for (std::uint32_t l = arch.n_levels; l-- > 0;) {
      if (l + 1 < arch.n_levels) g = add(std::move(g), skip_grads[l]);
      for (std::uint32_t b = 0; b < arch.convs_per_level; ++b) {
        --k;
        g = back_block(p, slots[k], trace.blocks[k], std::move(g), out.grad_params);
      }
      if (l > 0) {
        Tensor pool_in(g.dims, g.channels, trace.pool_inputs[l - 1]);
        g = nn::avgpool_vjp(pool_in, g);
      }
    }
  }
  out.grad_x = to_volume(g, x.grid(), arch.value_scale);
  return out;
}

}  // namespace

void NetArch::validate() const {
  if (dims != 2 && dims != 3) throw InvalidArgument("network dims must be 2 or 3");
  if (n_levels < 1) throw InvalidArgument("n_levels must be >= 1");
  if (kernel_size % 2 == 0 || final_kernel % 2 == 0) throw InvalidArgument("kernel sizes must be odd");
  if (convs_per_level > 0 && base_channels < 1) throw InvalidArgument("base_channels must be >= 1");
  if (convs_per_level == 0 && n_levels != 1) throw InvalidArgument("a network without hidden convs has one level");
  if (!(value_scale > 0.0) || !std::isfinite(value_scale)) throw InvalidArgument("value_scale must be > 0");
}

std::vector<ConvSlot> layer_slots(const NetArch& arch) {
  arch.validate();
  std::vector<ConvSlot> slots;
  std::size_t offset = 0;
  auto add_slot = [&](std::size_t in, std::size_t out, std::uint32_t kernel, bool hidden) {
    ConvSlot s;
    s.shape = nn::ConvShape{in, out, kernel, static_cast<int>(arch.dims)};
    s.weight_offset = offset;
    offset += s.shape.weight_count();
    s.bias_offset = offset;
    offset += out;
    s.relu = hidden;
    s.norm = hidden && arch.instance_norm;
    if (s.norm) {
      s.norm_scale_offset = offset;
      offset += out;
      s.norm_shift_offset = offset;
      offset += out;
    }
    slots.push_back(s);
  };

  std::size_t channels = 1;
  if (arch.convs_per_level > 0) {
    for (std::uint32_t l = 0; l < arch.n_levels; ++l) {
      for (std::uint32_t b = 0; b < arch.convs_per_level; ++b) {
        add_slot(channels, level_channels(arch, l), arch.kernel_size, true);
        channels = level_channels(arch, l);
      }
    }
    for (std::uint32_t l = arch.n_levels - 1; l-- > 0;) {
      channels += level_channels(arch, l);
      for (std::uint32_t b = 0; b < arch.convs_per_level; ++b) {
        add_slot(channels, level_channels(arch, l), arch.kernel_size, true);
        channels = level_channels(arch, l);
      }
    }
  }
  add_slot(channels, 1, arch.final_kernel, false);
  return slots;
}

std::size_t param_count(const NetArch& arch) {
  const auto slots = layer_slots(arch);
  const auto& last = slots.back();
  return last.bias_offset + last.shape.out_channels;
}

NetParams NetParams::unflatten(const NetArch& arch, std::vector<double> flat) {
  if (flat.size() != param_count(arch)) throw InvalidArgument("flat parameter vector has the wrong length");
  return NetParams{arch, std::move(flat)};
}

NetParams init_params(const NetArch& arch, std::uint64_t seed) {
  const auto slots = layer_slots(arch);
  NetParams p{arch, std::vector<double>(param_count(arch), 0.0)};
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i + 1 < slots.size(); ++i) {
    const auto& s = slots[i];
    const double fan_in = static_cast<double>(s.shape.in_channels * s.shape.taps());
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
    for (std::size_t w = 0; w < s.shape.weight_count(); ++w) p.values[s.weight_offset + w] = dist(rng);
    if (s.norm) {
      for (std::size_t c = 0; c < s.shape.out_channels; ++c) p.values[s.norm_scale_offset + c] = 1.0;
    }
  }
  return p;
}

Volume net_forward(const NetParams& params, const Volume& x) {
  return to_volume(forward_impl(params, x, nullptr), x.grid(), 1.0 / params.arch.value_scale);
}

NetVjp net_vjp(const NetParams& params, const Volume& x, const Volume& cotangent) {
  return net_forward_vjp(params, x, cotangent).second;
}

std::pair<Volume, NetVjp> net_forward_vjp(const NetParams& params, const Volume& x, const Volume& cotangent) {
  if (!x.same_shape(cotangent)) throw InvalidArgument("cotangent shape does not match the network output");
  ForwardTrace trace;
  Volume y = to_volume(forward_impl(params, x, &trace), x.grid(), 1.0 / params.arch.value_scale);
  NetVjp vjp = backward_impl(params, trace, x, cotangent);
  return {std::move(y), std::move(vjp)};
}

void save_params(const std::string& path, const NetParams& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidArgument("cannot write parameter file '" + path + "'");
  const NetArch& a = params.arch;
  out.write(kMagic, 4);
  detail::put_u32(out, kVersion);
  for (std::uint32_t v : {a.n_levels, a.base_channels, a.kernel_size, a.dims, a.convs_per_level, a.final_kernel,
                          static_cast<std::uint32_t>(a.instance_norm), static_cast<std::uint32_t>(a.padding)}) {
    detail::put_u32(out, v);
  }
  detail::put_f64(out, a.value_scale);
  detail::put_u32(out, static_cast<std::uint32_t>(params.values.size()));
  for (double v : params.values) detail::put_f64(out, v);
  if (!out) throw InvalidArgument("failed writing parameter file '" + path + "'");
}

NetParams load_params(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument("cannot open parameter file '" + path + "'");
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw InvalidArgument("'" + path + "' is not a parameter file");
  }
  if (detail::get_u32(in) != kVersion) throw InvalidArgument("unsupported parameter file version");
  NetArch a;
  a.n_levels = detail::get_u32(in);
  a.base_channels = detail::get_u32(in);
  a.kernel_size = detail::get_u32(in);
  a.dims = detail::get_u32(in);
  a.convs_per_level = detail::get_u32(in);
  a.final_kernel = detail::get_u32(in);
  a.instance_norm = detail::get_u32(in) != 0;
  a.padding = static_cast<nn::Padding>(detail::get_u32(in));
  a.value_scale = detail::get_f64(in);
  a.validate();
  const std::uint32_t count = detail::get_u32(in);
  if (count != param_count(a)) throw InvalidArgument("parameter count in '" + path + "' does not match its arch");
  std::vector<double> values(count);
  for (double& v : values) v = detail::get_f64(in);
  return NetParams{a, std::move(values)};
}

}  // namespace nodect
