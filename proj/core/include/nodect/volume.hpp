#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "nodect/geometry.hpp"

namespace nodect {

/// Counts live Volume buffers. The ODE engine's memory contract (constant
/// working set regardless of step count) is asserted through this probe.
class BufferProbe {
 public:
  static std::size_t live();
  static std::size_t peak();
  /// Resets the peak to the current live count.
  static void reset_peak();

  class Token {
   public:
    Token();
    Token(const Token&);
    Token(Token&&) noexcept;
    Token& operator=(const Token&) = default;
    Token& operator=(Token&&) noexcept = default;
    ~Token();
  };
};

/// Scalar attenuation field (mm^-1) on a VolumeGrid. Values are stored
/// x-fastest: index = ix + nx * (iy + ny * iz).
class Volume {
 public:
  Volume() = default;
  explicit Volume(const VolumeGrid& grid, double fill = 0.0) : grid_(grid), values_(grid.size(), fill) {}
  Volume(const VolumeGrid& grid, std::vector<double> values);

  const VolumeGrid& grid() const { return grid_; }
  std::size_t size() const { return values_.size(); }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::vector<double>& storage() { return values_; }
  const std::vector<double>& storage() const { return values_; }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }
  double& at(std::size_t ix, std::size_t iy, std::size_t iz = 0) { return values_[grid_.index(ix, iy, iz)]; }
  double at(std::size_t ix, std::size_t iy, std::size_t iz = 0) const { return values_[grid_.index(ix, iy, iz)]; }

  bool all_finite() const;
  bool same_shape(const Volume& other) const { return grid_.shape == other.grid_.shape && grid_.dims == other.grid_.dims; }

 private:
  VolumeGrid grid_{};
  std::vector<double> values_;
  BufferProbe::Token token_;
};

/// Projection data laid out as [angle][row][col]; fan geometries have one row.
class Sinogram {
 public:
  Sinogram() = default;
  explicit Sinogram(const Geometry& geom, double fill = 0.0) : geom_(geom), values_(n_rays(geom), fill) {}
  Sinogram(const Geometry& geom, std::vector<double> values);

  const Geometry& geometry() const { return geom_; }
  std::size_t size() const { return values_.size(); }
  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::vector<double>& storage() { return values_; }
  const std::vector<double>& storage() const { return values_; }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }
  std::size_t index(std::size_t angle, std::size_t row, std::size_t col) const {
    return (angle * detector_rows(geom_) + row) * detector_cols(geom_) + col;
  }

  bool all_finite() const;

 private:
  Geometry geom_{};
  std::vector<double> values_;
};

// Small vector helpers over contiguous doubles.
double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> a);
double max_abs(std::span<const double> a);
/// y += alpha * x
void axpy(double alpha, std::span<const double> x, std::span<double> y);

}  // namespace nodect
