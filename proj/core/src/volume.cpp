#include "nodect/volume.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>

#include "nodect/errors.hpp"

namespace nodect {

namespace {

std::atomic<std::size_t> g_live{0};
std::atomic<std::size_t> g_peak{0};

void acquire() {
  const std::size_t now = ++g_live;
  std::size_t prev = g_peak.load();
  while (now > prev && !g_peak.compare_exchange_weak(prev, now)) {
  }
}

bool finite_all(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace

std::size_t BufferProbe::live() { return g_live.load(); }
std::size_t BufferProbe::peak() { return g_peak.load(); }
void BufferProbe::reset_peak() { g_peak.store(g_live.load()); }

BufferProbe::Token::Token() { acquire(); }
BufferProbe::Token::Token(const Token&) { acquire(); }
BufferProbe::Token::Token(Token&&) noexcept { acquire(); }
BufferProbe::Token::~Token() { --g_live; }

Volume::Volume(const VolumeGrid& grid, std::vector<double> values) : grid_(grid), values_(std::move(values)) {
  if (values_.size() != grid_.size()) {
    throw InvalidArgument("volume value count " + std::to_string(values_.size()) + " does not match grid size " +
                          std::to_string(grid_.size()));
  }
}

bool Volume::all_finite() const { return finite_all(values_); }

Sinogram::Sinogram(const Geometry& geom, std::vector<double> values) : geom_(geom), values_(std::move(values)) {
  if (values_.size() != n_rays(geom_)) {
    throw InvalidArgument("sinogram value count " + std::to_string(values_.size()) +
                          " does not match geometry ray count " + std::to_string(n_rays(geom_)));
  }
}

bool Sinogram::all_finite() const { return finite_all(values_); }

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

double max_abs(std::span<const double> a) {
  double m = 0.0;
  for (double v : a) m = std::max(m, std::abs(v));
  return m;
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

}  // namespace nodect
