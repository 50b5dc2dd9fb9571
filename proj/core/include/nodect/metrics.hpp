#pragma once

#include <string>

#include "nodect/volume.hpp"

namespace nodect {

/// Metrics are evaluated over the voxels where `mask` is nonzero; a null
/// mask selects every voxel. An empty mask raises InvalidArgument.
double rmse(const Volume& a, const Volume& b, const Volume* mask = nullptr);

/// 20 log10(data_range / rmse); +infinity when rmse is zero.
double psnr(const Volume& a, const Volume& b, const Volume* mask, double data_range);

/// Mean local SSIM with an 11-tap Gaussian window (sigma 1.5) per axis,
/// C1 = (0.01 L)^2, C2 = (0.03 L)^2. The window is truncated at the volume
/// border and renormalized. 3D volumes use a 3D window.
double ssim(const Volume& a, const Volume& b, const Volume* mask, double data_range);

struct MetricsReport {
  std::string method;
  double rmse = 0.0;
  double psnr = 0.0;
  double ssim = 0.0;
  double runtime_seconds = 0.0;
};

/// All three metrics of `recon` against `reference`; data range = max of the reference.
MetricsReport evaluate_metrics(const std::string& method, const Volume& recon, const Volume& reference,
                               const Volume* mask);

/// {"method", "rmse", "psnr", "ssim", "runtime_seconds"}. An infinite PSNR is
/// written as the string "inf".
std::string metrics_to_json(const MetricsReport& report);
MetricsReport metrics_from_json(const std::string& text);

}  // namespace nodect
