#pragma once

#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "nodect/geometry.hpp"
#include "nodect/volume.hpp"

namespace nodect {

enum class FilterWindow { ram_lak, hann };

FilterWindow parse_window(std::string_view name);
std::string_view window_name(FilterWindow w);

/// Ramp filter for detector rows of a fixed length.
///
/// The kernel is the discrete Ram-Lak filter in its spatial form,
/// h(0) = 1/(4 t^2), h(odd k) = -1/(pi^2 k^2 t^2), h(even k) = 0, applied as a
/// linear convolution through a zero-padded FFT of at least twice the row
/// length. The Hann window multiplies the kernel spectrum by
/// 0.5 (1 + cos(2 pi f)), f in cycles per sample.
class RampFilter {
 public:
  RampFilter(std::size_t length, double pixel_size, FilterWindow window);
  ~RampFilter();
  RampFilter(const RampFilter&) = delete;
  RampFilter& operator=(const RampFilter&) = delete;
  RampFilter(RampFilter&&) noexcept;
  RampFilter& operator=(RampFilter&&) noexcept;

  std::size_t length() const;
  std::size_t padded_length() const;

  /// out[n] = sum_k h(k) row[n - k]; `out` may alias `row`.
  void apply(std::span<const double> row, std::span<double> out) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

std::vector<double> ramp_filter(std::span<const double> row, double pixel_size, FilterWindow window);

/// Fan-beam filtered backprojection for a flat detector over a full turn:
/// cosine pre-weighting, ramp filtering on the detector rescaled to the
/// isocenter, and backprojection weighted by 1/U^2.
Volume fbp_fan(const Sinogram& p, const VolumeGrid& grid, FilterWindow window = FilterWindow::ram_lak);

/// Feldkamp-Davis-Kress reconstruction for a circular cone-beam scan.
Volume fdk_cone(const Sinogram& p, const VolumeGrid& grid, FilterWindow window = FilterWindow::ram_lak);

/// Dispatches to fbp_fan or fdk_cone from the sinogram's geometry.
Volume analytic_reconstruct(const Sinogram& p, const VolumeGrid& grid, FilterWindow window);

}  // namespace nodect
