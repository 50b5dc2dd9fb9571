#include "nodect/layers.hpp"

#include <algorithm>
#include <cmath>

#include "nodect/errors.hpp"
#include "nodect/parallel.hpp"

namespace nodect::nn {

namespace {

struct Offsets {
  long dx, dy, dz;
};

// Enumerates kernel taps in weight-layout order (kz, ky, kx).
template <class F>
void for_each_tap(const ConvShape& shape, F&& f) {
  const long r = static_cast<long>(shape.kernel / 2);
  const long zr = shape.dims == 3 ? r : 0;
  std::size_t t = 0;
  for (long dz = -zr; dz <= zr; ++dz) {
    for (long dy = -r; dy <= r; ++dy) {
      for (long dx = -r; dx <= r; ++dx) f(t++, Offsets{dx, dy, dz});
    }
  }
}

long wrap(long i, long n) {
  const long m = i % n;
  return m < 0 ? m + n : m;
}

// Calls run(out_index, in_index, length) over contiguous x-runs pairing output
// voxel p with input voxel p + offset.
template <class F>
void for_each_run(const std::array<std::size_t, 3>& size, Offsets off, Padding padding, F&& run) {
  const long nx = static_cast<long>(size[0]);
  const long ny = static_cast<long>(size[1]);
  const long nz = static_cast<long>(size[2]);
  for (long z = 0; z < nz; ++z) {
    long zz = z + off.dz;
    if (padding == Padding::zero) {
      if (zz < 0 || zz >= nz) continue;
    } else {
      zz = wrap(zz, nz);
    }
    for (long y = 0; y < ny; ++y) {
      long yy = y + off.dy;
      if (padding == Padding::zero) {
        if (yy < 0 || yy >= ny) continue;
      } else {
        yy = wrap(yy, ny);
      }
      const std::size_t out_row = static_cast<std::size_t>((z * ny + y) * nx);
      const std::size_t in_row = static_cast<std::size_t>((zz * ny + yy) * nx);
      if (padding == Padding::zero) {
        const long x0 = std::max(0L, -off.dx);
        const long x1 = std::min(nx, nx - off.dx);
        if (x1 > x0) {
          run(out_row + static_cast<std::size_t>(x0), in_row + static_cast<std::size_t>(x0 + off.dx),
              static_cast<std::size_t>(x1 - x0));
        }
      } else {
        for (long x = 0; x < nx; ++x) {
          run(out_row + static_cast<std::size_t>(x), in_row + static_cast<std::size_t>(wrap(x + off.dx, nx)), 1);
        }
      }
    }
  }
}

void check_conv(const Tensor& in, const ConvShape& shape, std::size_t n_weights, std::size_t n_bias) {
  if (shape.kernel % 2 == 0) throw InvalidArgument("convolution kernel size must be odd");
  if (in.channels != shape.in_channels) throw InvalidArgument("convolution input channel mismatch");
  if (in.dims != shape.dims) throw InvalidArgument("convolution dimensionality mismatch");
  if (n_weights != shape.weight_count() || n_bias != shape.out_channels) {
    throw InvalidArgument("convolution parameter count mismatch");
  }
}

std::array<std::size_t, 3> pooled_size(const Tensor& t) {
  auto s = t.size;
  for (int a = 0; a < t.dims; ++a) {
    if (s[a] % 2 != 0) throw InvalidArgument("pooling requires even spatial sizes");
    s[a] /= 2;
  }
  return s;
}

}  // namespace

Tensor::Tensor(int dims_, std::size_t channels_, std::array<std::size_t, 3> size_, double fill)
    : dims(dims_), channels(channels_), size(size_), data(channels_ * size_[0] * size_[1] * size_[2], fill) {}

Tensor conv_forward(const Tensor& in, const ConvShape& shape, std::span<const double> weights,
                    std::span<const double> bias, Padding padding) {
  check_conv(in, shape, weights.size(), bias.size());
  Tensor out(in.dims, shape.out_channels, in.size);
  const std::size_t taps = shape.taps();
  parallel_for(shape.out_channels, [&](std::size_t o) {
    auto dst = out.channel(o);
    std::fill(dst.begin(), dst.end(), bias[o]);
    for (std::size_t i = 0; i < shape.in_channels; ++i) {
      const auto src = in.channel(i);
      const double* w = weights.data() + (o * shape.in_channels + i) * taps;
      for_each_tap(shape, [&](std::size_t t, Offsets off) {
        const double wt = w[t];
        if (wt == 0.0) return;
        for_each_run(in.size, off, padding, [&](std::size_t po, std::size_t pi, std::size_t len) {
          for (std::size_t k = 0; k < len; ++k) dst[po + k] += wt * src[pi + k];
        });
      });
    }
  });
  return out;
}

Tensor conv_vjp(const Tensor& in, const ConvShape& shape, std::span<const double> weights, const Tensor& grad_out,
                std::span<double> grad_weights, std::span<double> grad_bias, Padding padding) {
  check_conv(in, shape, weights.size(), shape.out_channels);
  if (grad_weights.size() != shape.weight_count() || grad_bias.size() != shape.out_channels) {
    throw InvalidArgument("convolution gradient buffer mismatch");
  }
  if (grad_out.channels != shape.out_channels || grad_out.size != in.size) {
    throw InvalidArgument("convolution cotangent shape mismatch");
  }
  const std::size_t taps = shape.taps();

  // Parameter gradients: one output channel per task.
  parallel_for(shape.out_channels, [&](std::size_t o) {
    const auto g = grad_out.channel(o);
    double gb = 0.0;
    for (double v : g) gb += v;
    grad_bias[o] += gb;
    for (std::size_t i = 0; i < shape.in_channels; ++i) {
      const auto src = in.channel(i);
      double* gw = grad_weights.data() + (o * shape.in_channels + i) * taps;
      for_each_tap(shape, [&](std::size_t t, Offsets off) {
        // Four interleaved partial sums let the reduction vectorize; the
        // summation order is still fixed, so results stay deterministic.
        double acc[4] = {0.0, 0.0, 0.0, 0.0};
        for_each_run(in.size, off, padding, [&](std::size_t po, std::size_t pi, std::size_t len) {
          const double* a = g.data() + po;
          const double* b = src.data() + pi;
          std::size_t k = 0;
          for (; k + 4 <= len; k += 4) {
            acc[0] += a[k] * b[k];
            acc[1] += a[k + 1] * b[k + 1];
            acc[2] += a[k + 2] * b[k + 2];
            acc[3] += a[k + 3] * b[k + 3];
          }
          for (; k < len; ++k) acc[0] += a[k] * b[k];
        });
        gw[t] += (acc[0] + acc[1]) + (acc[2] + acc[3]);
      });
    }
  });

  // Input gradient: one input channel per task.
  Tensor grad_in(in.dims, in.channels, in.size);
  parallel_for(shape.in_channels, [&](std::size_t i) {
    auto dst = grad_in.channel(i);
    for (std::size_t o = 0; o < shape.out_channels; ++o) {
      const auto g = grad_out.channel(o);
      const double* w = weights.data() + (o * shape.in_channels + i) * taps;
      for_each_tap(shape, [&](std::size_t t, Offsets off) {
        const double wt = w[t];
        if (wt == 0.0) return;
        for_each_run(in.size, off, padding, [&](std::size_t po, std::size_t pi, std::size_t len) {
          for (std::size_t k = 0; k < len; ++k) dst[pi + k] += wt * g[po + k];
        });
      });
    }
  });
  return grad_in;
}

Tensor relu_forward(const Tensor& in) {
  Tensor out = in;
  for (double& v : out.data) v = v > 0.0 ? v : 0.0;
  return out;
}

Tensor relu_vjp(const Tensor& in, const Tensor& grad_out) {
  if (!in.same_shape(grad_out)) throw InvalidArgument("relu cotangent shape mismatch");
  Tensor g = grad_out;
  for (std::size_t i = 0; i < g.data.size(); ++i) {
    if (!(in.data[i] > 0.0)) g.data[i] = 0.0;
  }
  return g;
}

Tensor avgpool_forward(const Tensor& in) {
  const auto s = pooled_size(in);
  Tensor out(in.dims, in.channels, s);
  const double w = 1.0 / static_cast<double>(1u << in.dims);
  const std::size_t fz = in.dims == 3 ? 2 : 1;
  for (std::size_t c = 0; c < in.channels; ++c) {
    const auto src = in.channel(c);
    auto dst = out.channel(c);
    for (std::size_t z = 0; z < s[2]; ++z) {
      for (std::size_t y = 0; y < s[1]; ++y) {
        for (std::size_t x = 0; x < s[0]; ++x) {
          double acc = 0.0;
          for (std::size_t dz = 0; dz < fz; ++dz) {
            for (std::size_t dy = 0; dy < 2; ++dy) {
              for (std::size_t dx = 0; dx < 2; ++dx) {
                acc += src[((z * fz + dz) * in.size[1] + (2 * y + dy)) * in.size[0] + 2 * x + dx];
              }
            }
          }
          dst[(z * s[1] + y) * s[0] + x] = w * acc;
        }
      }
    }
  }
  return out;
}

Tensor avgpool_vjp(const Tensor& in, const Tensor& grad_out) {
  const auto s = pooled_size(in);
  if (grad_out.size != s || grad_out.channels != in.channels) throw InvalidArgument("pool cotangent shape mismatch");
  Tensor up = upsample_forward(grad_out);
  const double w = 1.0 / static_cast<double>(1u << in.dims);
  for (double& v : up.data) v *= w;
  return up;
}

Tensor upsample_forward(const Tensor& in) {
  auto s = in.size;
  for (int a = 0; a < in.dims; ++a) s[a] *= 2;
  Tensor out(in.dims, in.channels, s);
  const std::size_t fz = in.dims == 3 ? 2 : 1;
  for (std::size_t c = 0; c < in.channels; ++c) {
    const auto src = in.channel(c);
    auto dst = out.channel(c);
    for (std::size_t z = 0; z < s[2]; ++z) {
      for (std::size_t y = 0; y < s[1]; ++y) {
        for (std::size_t x = 0; x < s[0]; ++x) {
          dst[(z * s[1] + y) * s[0] + x] = src[((z / fz) * in.size[1] + y / 2) * in.size[0] + x / 2];
        }
      }
    }
  }
  return out;
}

Tensor upsample_vjp(const Tensor& grad_out) {
  const auto s = pooled_size(grad_out);
  Tensor out(grad_out.dims, grad_out.channels, s);
  const std::size_t fz = grad_out.dims == 3 ? 2 : 1;
  for (std::size_t c = 0; c < grad_out.channels; ++c) {
    const auto src = grad_out.channel(c);
    auto dst = out.channel(c);
    for (std::size_t z = 0; z < grad_out.size[2]; ++z) {
      for (std::size_t y = 0; y < grad_out.size[1]; ++y) {
        for (std::size_t x = 0; x < grad_out.size[0]; ++x) {
          dst[((z / fz) * s[1] + y / 2) * s[0] + x / 2] += src[(z * grad_out.size[1] + y) * grad_out.size[0] + x];
        }
      }
    }
  }
  return out;
}

Tensor concat_forward(const Tensor& a, const Tensor& b) {
  if (a.dims != b.dims || a.size != b.size) throw InvalidArgument("concat requires equal spatial shapes");
  Tensor out(a.dims, a.channels + b.channels, a.size);
  std::copy(a.data.begin(), a.data.end(), out.data.begin());
  std::copy(b.data.begin(), b.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(a.data.size()));
  return out;
}

std::pair<Tensor, Tensor> concat_vjp(const Tensor& a, const Tensor& grad_out) {
  if (grad_out.channels < a.channels || grad_out.size != a.size) throw InvalidArgument("concat cotangent mismatch");
  Tensor ga(a.dims, a.channels, a.size);
  Tensor gb(a.dims, grad_out.channels - a.channels, a.size);
  const auto split = grad_out.data.begin() + static_cast<std::ptrdiff_t>(ga.data.size());
  std::copy(grad_out.data.begin(), split, ga.data.begin());
  std::copy(split, grad_out.data.end(), gb.data.begin());
  return {std::move(ga), std::move(gb)};
}

namespace {

struct Moments {
  double mean;
  double sd;
  bool floored;
};

Moments channel_moments(std::span<const double> x) {
  const double n = static_cast<double>(x.size());
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= n;
  const bool floored = var < kInstanceNormVarianceFloor;
  return {mean, std::sqrt(floored ? kInstanceNormVarianceFloor : var), floored};
}

}  // namespace

Tensor instance_norm_forward(const Tensor& in, std::span<const double> scale, std::span<const double> shift) {
  if (scale.size() != in.channels || shift.size() != in.channels) throw InvalidArgument("instance norm parameter mismatch");
  Tensor out(in.dims, in.channels, in.size);
  for (std::size_t c = 0; c < in.channels; ++c) {
    const auto x = in.channel(c);
    const auto m = channel_moments(x);
    auto y = out.channel(c);
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = scale[c] * (x[i] - m.mean) / m.sd + shift[c];
  }
  return out;
}

Tensor instance_norm_vjp(const Tensor& in, std::span<const double> scale, const Tensor& grad_out,
                         std::span<double> grad_scale, std::span<double> grad_shift) {
  if (!in.same_shape(grad_out)) throw InvalidArgument("instance norm cotangent shape mismatch");
  Tensor grad_in(in.dims, in.channels, in.size);
  for (std::size_t c = 0; c < in.channels; ++c) {
    const auto x = in.channel(c);
    const auto g = grad_out.channel(c);
    const auto m = channel_moments(x);
    const double n = static_cast<double>(x.size());
    double sum_g = 0.0, sum_gy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double yhat = (x[i] - m.mean) / m.sd;
      sum_g += g[i];
      sum_gy += g[i] * yhat;
    }
    grad_shift[c] += sum_g;
    grad_scale[c] += sum_gy;
    auto gi = grad_in.channel(c);
    const double k = scale[c] / m.sd;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double yhat = (x[i] - m.mean) / m.sd;
      gi[i] = k * (g[i] - sum_g / n - (m.floored ? 0.0 : yhat * sum_gy / n));
    }
  }
  return grad_in;
}

}  // namespace nodect::nn
