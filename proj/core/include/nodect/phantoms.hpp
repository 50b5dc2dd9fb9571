#pragma once

#include <cstdint>
#include <string_view>

#include "nodect/geometry.hpp"
#include "nodect/volume.hpp"

namespace nodect {

enum class PhantomKind { disk_set, shepp_logan_2d, nested_shells_3d, walnut_like_3d };

PhantomKind parse_phantom_kind(std::string_view name);
std::string_view phantom_kind_name(PhantomKind kind);

/// Phantom request. Shapes are drawn in normalized coordinates where the
/// grid's half extent maps to 1; values are sampled at voxel centers.
struct PhantomSpec {
  PhantomKind kind = PhantomKind::disk_set;
  VolumeGrid grid = VolumeGrid::make_2d(64, 64, 1.0);
  std::uint64_t seed = 0;
  double value_min = 0.0;
  double value_max = 0.06;  // mm^-1
};

/// Deterministic in the seed; every value lies in [value_min, value_max].
/// shepp_logan_2d uses the modified (Toft) ellipse table with unit intensity
/// mapped onto [value_min, value_max]; it ignores the seed and requires a 2D grid.
Volume make_phantom(const PhantomSpec& spec);

/// Sum of modified Shepp-Logan intensities covering normalized point (u, v).
double shepp_logan_value(double u, double v);

enum class NoiseKind { none, gaussian, poisson };

NoiseKind parse_noise_kind(std::string_view name);
std::string_view noise_kind_name(NoiseKind kind);

struct NoiseModel {
  NoiseKind kind = NoiseKind::none;
  double sigma = 0.0;          // gaussian: std of additive noise on line integrals
  double incident_photons = 1e5;  // poisson: I0

  void validate() const;
};

/// p = A x + noise. Poisson noise draws counts ~ Poisson(I0 exp(-Ax)),
/// clamps them to >= 1 and returns -ln(counts / I0).
Sinogram simulate_measurement(const Volume& x, const Geometry& geom, const NoiseModel& noise, std::uint64_t seed);

}  // namespace nodect
