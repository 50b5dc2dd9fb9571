#include "nodect/analytic.hpp"

#include <fftw3.h>

#include <cmath>
#include <mutex>
#include <numbers>
#include <string>

#include "nodect/errors.hpp"
#include "nodect/parallel.hpp"
#include "nodect/projector.hpp"

namespace nodect {

namespace {

// The FFTW planner is not thread-safe; execution on separate arrays is.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

double ram_lak_tap(long k, double pixel_size) {
  if (k == 0) return 1.0 / (4.0 * pixel_size * pixel_size);
  if (k % 2 == 0) return 0.0;
  const double kk = static_cast<double>(k);
  return -1.0 / (std::numbers::pi * std::numbers::pi * kk * kk * pixel_size * pixel_size);
}

struct FftBuffers {
  explicit FftBuffers(std::size_t n)
      : real(fftw_alloc_real(n)), spectrum(fftw_alloc_complex(n / 2 + 1)) {}
  ~FftBuffers() {
    fftw_free(real);
    fftw_free(spectrum);
  }
  FftBuffers(const FftBuffers&) = delete;
  FftBuffers& operator=(const FftBuffers&) = delete;

  double* real;
  fftw_complex* spectrum;
};

// Linear interpolation with out-of-range taps dropped.
double sample_linear(const double* row, std::size_t n, double f) {
  if (f <= -1.0 || f >= static_cast<double>(n)) return 0.0;
  const long j0 = static_cast<long>(std::floor(f));
  const double w = f - static_cast<double>(j0);
  double v = 0.0;
  if (j0 >= 0) v += (1.0 - w) * row[j0];
  if (j0 + 1 < static_cast<long>(n)) v += w * row[j0 + 1];
  return v;
}

}  // namespace

FilterWindow parse_window(std::string_view name) {
  if (name == "ram-lak" || name == "ramlak" || name == "ram_lak") return FilterWindow::ram_lak;
  if (name == "hann") return FilterWindow::hann;
  throw InvalidArgument("unknown filter window '" + std::string(name) + "' (expected ram-lak or hann)");
}

std::string_view window_name(FilterWindow w) { return w == FilterWindow::hann ? "hann" : "ram-lak"; }

struct RampFilter::Impl {
  std::size_t n = 0;
  std::size_t padded = 0;
  std::vector<double> response;  // real kernel spectrum, padded / 2 + 1 bins
  fftw_plan forward = nullptr;
  fftw_plan inverse = nullptr;

  ~Impl() {
    std::lock_guard lock(planner_mutex());
    if (forward) fftw_destroy_plan(forward);
    if (inverse) fftw_destroy_plan(inverse);
  }
};

RampFilter::RampFilter(std::size_t length, double pixel_size, FilterWindow window) : impl_(std::make_unique<Impl>()) {
  if (length == 0) throw InvalidArgument("ramp filter length must be >= 1");
  if (!(pixel_size > 0.0)) throw InvalidArgument("pixel_size must be > 0");
  impl_->n = length;
  impl_->padded = std::max<std::size_t>(2, next_pow2(2 * length));
  const std::size_t L = impl_->padded;
  const std::size_t bins = L / 2 + 1;

  FftBuffers buf(L);
  {
    std::lock_guard lock(planner_mutex());
    impl_->forward = fftw_plan_dft_r2c_1d(static_cast<int>(L), buf.real, buf.spectrum, FFTW_ESTIMATE);
    impl_->inverse = fftw_plan_dft_c2r_1d(static_cast<int>(L), buf.spectrum, buf.real, FFTW_ESTIMATE);
  }

  // Circularly indexed kernel: tap k at position k mod L.
  for (std::size_t m = 0; m < L; ++m) {
    const long k = m <= L / 2 ? static_cast<long>(m) : static_cast<long>(m) - static_cast<long>(L);
    buf.real[m] = ram_lak_tap(k, pixel_size);
  }
  fftw_execute_dft_r2c(impl_->forward, buf.real, buf.spectrum);
  impl_->response.resize(bins);
  for (std::size_t m = 0; m < bins; ++m) {
    double h = buf.spectrum[m][0];
    if (window == FilterWindow::hann) {
      h *= 0.5 * (1.0 + std::cos(2.0 * std::numbers::pi * static_cast<double>(m) / static_cast<double>(L)));
    }
    impl_->response[m] = h;
  }
}

RampFilter::~RampFilter() = default;
RampFilter::RampFilter(RampFilter&&) noexcept = default;
RampFilter& RampFilter::operator=(RampFilter&&) noexcept = default;

std::size_t RampFilter::length() const { return impl_->n; }
std::size_t RampFilter::padded_length() const { return impl_->padded; }

void RampFilter::apply(std::span<const double> row, std::span<double> out) const {
  const std::size_t n = impl_->n;
  const std::size_t L = impl_->padded;
  if (row.size() != n || out.size() != n) throw InvalidArgument("ramp filter row length mismatch");
  FftBuffers buf(L);
  for (std::size_t i = 0; i < L; ++i) buf.real[i] = i < n ? row[i] : 0.0;
  fftw_execute_dft_r2c(impl_->forward, buf.real, buf.spectrum);
  for (std::size_t m = 0; m < L / 2 + 1; ++m) {
    buf.spectrum[m][0] *= impl_->response[m];
    buf.spectrum[m][1] *= impl_->response[m];
  }
  fftw_execute_dft_c2r(impl_->inverse, buf.spectrum, buf.real);
  const double scale = 1.0 / static_cast<double>(L);
  for (std::size_t i = 0; i < n; ++i) out[i] = buf.real[i] * scale;
}

std::vector<double> ramp_filter(std::span<const double> row, double pixel_size, FilterWindow window) {
  std::vector<double> out(row.size());
  if (row.empty()) return out;
  RampFilter(row.size(), pixel_size, window).apply(row, out);
  return out;
}

Volume fbp_fan(const Sinogram& p, const VolumeGrid& grid, FilterWindow window) {
  const auto* fan = std::get_if<FanGeometry>(&p.geometry());
  if (!fan) throw InvalidArgument("fbp_fan requires a fan-beam sinogram");
  if (grid.dims != 2) throw InvalidArgument("fbp_fan requires a 2D grid");

  const double D = fan->source_distance;
  const double mag = (D + fan->detector_distance) / D;
  const double pitch = fan->detector_pixel_size / mag;  // detector rescaled to the isocenter
  const std::size_t n = fan->n_detectors;
  const std::size_t angles = fan->n_angles;

  std::vector<double> weights(n);
  for (std::size_t j = 0; j < n; ++j) {
    const double s = fan->detector_offset(j) / mag;
    weights[j] = D / std::sqrt(D * D + s * s);
  }

  const RampFilter filter(n, pitch, window);
  std::vector<double> filtered(angles * n);
  parallel_for(angles, [&](std::size_t a) {
    std::span<double> row(filtered.data() + a * n, n);
    for (std::size_t j = 0; j < n; ++j) row[j] = p[p.index(a, 0, j)] * weights[j];
    filter.apply(row, row);
    for (double& v : row) v *= pitch;
  });

  std::vector<double> cosb(angles), sinb(angles);
  for (std::size_t a = 0; a < angles; ++a) {
    cosb[a] = std::cos(fan->angle(a));
    sinb[a] = std::sin(fan->angle(a));
  }
  const double center = 0.5 * static_cast<double>(n - 1);
  const double scale = 0.5 * fan->angular_increment();

  Volume out(grid);
  parallel_for(grid.shape[1], [&](std::size_t iy) {
    const double y = grid.center(1, iy);
    for (std::size_t ix = 0; ix < grid.shape[0]; ++ix) {
      const double x = grid.center(0, ix);
      double acc = 0.0;
      for (std::size_t a = 0; a < angles; ++a) {
        const double U = (D - (x * cosb[a] + y * sinb[a])) / D;
        if (U <= 0.0) continue;
        const double s = (-x * sinb[a] + y * cosb[a]) / U;
        acc += sample_linear(filtered.data() + a * n, n, s / pitch + center) / (U * U);
      }
      out.at(ix, iy) = acc * scale;
    }
  });
  return out;
}

Volume fdk_cone(const Sinogram& p, const VolumeGrid& grid, FilterWindow window) {
  const auto* cone = std::get_if<ConeGeometry>(&p.geometry());
  if (!cone) throw InvalidArgument("fdk_cone requires a cone-beam sinogram");
  if (grid.dims != 3) throw InvalidArgument("fdk_cone requires a 3D grid");

  const double D = cone->source_distance;
  const double mag = (D + cone->detector_distance) / D;
  const double pitch = cone->detector_pixel_size / mag;
  const std::size_t rows = cone->detector_rows;
  const std::size_t cols = cone->detector_cols;
  const std::size_t angles = cone->n_angles;
  const std::size_t view = rows * cols;

  std::vector<double> weights(view);
  for (std::size_t r = 0; r < rows; ++r) {
    const double v = cone->row_offset(r) / mag;
    for (std::size_t c = 0; c < cols; ++c) {
      const double s = cone->col_offset(c) / mag;
      weights[r * cols + c] = D / std::sqrt(D * D + s * s + v * v);
    }
  }

  const RampFilter filter(cols, pitch, window);
  std::vector<double> filtered(angles * view);
  parallel_for(angles * rows, [&](std::size_t ar) {
    const std::size_t a = ar / rows;
    const std::size_t r = ar % rows;
    std::span<double> row(filtered.data() + a * view + r * cols, cols);
    for (std::size_t c = 0; c < cols; ++c) row[c] = p[p.index(a, r, c)] * weights[r * cols + c];
    filter.apply(row, row);
    for (double& v : row) v *= pitch;
  });

  std::vector<double> cosb(angles), sinb(angles);
  for (std::size_t a = 0; a < angles; ++a) {
    cosb[a] = std::cos(cone->angle(a));
    sinb[a] = std::sin(cone->angle(a));
  }
  const double col_center = 0.5 * static_cast<double>(cols - 1);
  const double row_center = 0.5 * static_cast<double>(rows - 1);
  const double scale = 0.5 * cone->angular_increment();

  Volume out(grid);
  parallel_for(grid.shape[2] * grid.shape[1], [&](std::size_t zy) {
    const std::size_t iz = zy / grid.shape[1];
    const std::size_t iy = zy % grid.shape[1];
    const double z = grid.center(2, iz) - cone->trajectory_height;
    const double y = grid.center(1, iy);
    for (std::size_t ix = 0; ix < grid.shape[0]; ++ix) {
      const double x = grid.center(0, ix);
      double acc = 0.0;
      for (std::size_t a = 0; a < angles; ++a) {
        const double U = (D - (x * cosb[a] + y * sinb[a])) / D;
        if (U <= 0.0) continue;
        const double fc = (-x * sinb[a] + y * cosb[a]) / U / pitch + col_center;
        const double fr = z / U / pitch + row_center;
        if (fr <= -1.0 || fr >= static_cast<double>(rows)) continue;
        const long r0 = static_cast<long>(std::floor(fr));
        const double wr = fr - static_cast<double>(r0);
        const double* base = filtered.data() + a * view;
        double v = 0.0;
        if (r0 >= 0) v += (1.0 - wr) * sample_linear(base + r0 * cols, cols, fc);
        if (r0 + 1 < static_cast<long>(rows)) v += wr * sample_linear(base + (r0 + 1) * cols, cols, fc);
        acc += v / (U * U);
      }
      out.at(ix, iy, iz) = acc * scale;
    }
  });
  return out;
}

Volume analytic_reconstruct(const Sinogram& p, const VolumeGrid& grid, FilterWindow window) {
  check_compatible(p.geometry(), grid);
  return is_fan(p.geometry()) ? fbp_fan(p, grid, window) : fdk_cone(p, grid, window);
}

}  // namespace nodect
