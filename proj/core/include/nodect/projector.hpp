#pragma once

#include <array>
#include <cmath>
#include <cstddef>

#include "nodect/geometry.hpp"
#include "nodect/volume.hpp"

namespace nodect {

// Matched forward/back projection with Joseph's interpolation kernel.
//
// For every ray the axis with the largest direction component drives the
// traversal. At each voxel plane along that axis the ray position is linearly
// (2D) or bilinearly (3D) interpolated across the remaining axes, and each tap
// is weighted by the in-plane step length voxel_size / |d_drive|. Taps that
// fall outside the grid are dropped. back_project visits exactly the same taps,
// so it is the algebraic transpose of forward_project.
//
// Fan geometries pair with 2D grids and cone geometries with 3D grids.

/// Visits every (voxel index, weight) tap of one ray.
template <class Tap>
void trace_ray(const VolumeGrid& grid, const Ray& ray, Tap&& tap);

Sinogram forward_project(const Volume& x, const Geometry& geom);
/// Writes A x into `out`, which must already be shaped for `geom`.
void forward_project_into(const Volume& x, Sinogram& out);

Volume back_project(const Sinogram& p, const VolumeGrid& grid);
/// Writes A^T p into `out` (overwriting), which carries the target grid.
void back_project_into(const Sinogram& p, Volume& out);

/// Power-iteration estimate of the largest singular value of A, started from
/// the normalized all-ones volume.
double op_norm_estimate(const Geometry& geom, const VolumeGrid& grid, std::size_t n_power_iters);

/// Throws InvalidArgument unless fan <-> 2D or cone <-> 3D.
void check_compatible(const Geometry& geom, const VolumeGrid& grid);

// ---------------------------------------------------------------------------

namespace detail {

inline long floor_index(double f) { return static_cast<long>(std::floor(f)); }

}  // namespace detail

template <class Tap>
void trace_ray(const VolumeGrid& grid, const Ray& ray, Tap&& tap) {
  const double vs = grid.voxel_size;
  const auto& o = ray.origin;
  const auto& d = ray.direction;

  if (grid.dims == 2) {
    const int drive = std::abs(d[0]) >= std::abs(d[1]) ? 0 : 1;
    const int other = 1 - drive;
    const long n_drive = static_cast<long>(grid.shape[drive]);
    const long n_other = static_cast<long>(grid.shape[other]);
    const double step = vs / std::abs(d[drive]);
    const double other_offset = 0.5 * static_cast<double>(n_other - 1);
    for (long i = 0; i < n_drive; ++i) {
      const double t = (grid.center(drive, static_cast<std::size_t>(i)) - o[drive]) / d[drive];
      if (t < 0.0) continue;
      const double f = (o[other] + t * d[other] - grid.origin[other]) / vs + other_offset;
      if (f <= -1.0 || f >= static_cast<double>(n_other)) continue;
      const long j0 = detail::floor_index(f);
      const double w1 = f - static_cast<double>(j0);
      for (long j = j0; j <= j0 + 1; ++j) {
        if (j < 0 || j >= n_other) continue;
        const double w = (j == j0) ? 1.0 - w1 : w1;
        std::array<std::size_t, 2> idx{};
        idx[drive] = static_cast<std::size_t>(i);
        idx[other] = static_cast<std::size_t>(j);
        tap(grid.index(idx[0], idx[1]), step * w);
      }
    }
    return;
  }

  int drive = 0;
  if (std::abs(d[1]) > std::abs(d[drive])) drive = 1;
  if (std::abs(d[2]) > std::abs(d[drive])) drive = 2;
  const int a = drive == 0 ? 1 : 0;
  const int b = drive == 2 ? 1 : 2;
  const long n_drive = static_cast<long>(grid.shape[drive]);
  const long na = static_cast<long>(grid.shape[a]);
  const long nb = static_cast<long>(grid.shape[b]);
  const double step = vs / std::abs(d[drive]);
  const double a_offset = 0.5 * static_cast<double>(na - 1);
  const double b_offset = 0.5 * static_cast<double>(nb - 1);
  for (long i = 0; i < n_drive; ++i) {
    const double t = (grid.center(drive, static_cast<std::size_t>(i)) - o[drive]) / d[drive];
    if (t < 0.0) continue;
    const double fa = (o[a] + t * d[a] - grid.origin[a]) / vs + a_offset;
    const double fb = (o[b] + t * d[b] - grid.origin[b]) / vs + b_offset;
    if (fa <= -1.0 || fa >= static_cast<double>(na) || fb <= -1.0 || fb >= static_cast<double>(nb)) continue;
    const long ja = detail::floor_index(fa);
    const long jb = detail::floor_index(fb);
    const double wa = fa - static_cast<double>(ja);
    const double wb = fb - static_cast<double>(jb);
    for (long kb = jb; kb <= jb + 1; ++kb) {
      if (kb < 0 || kb >= nb) continue;
      const double wgt_b = (kb == jb) ? 1.0 - wb : wb;
      for (long ka = ja; ka <= ja + 1; ++ka) {
        if (ka < 0 || ka >= na) continue;
        const double wgt_a = (ka == ja) ? 1.0 - wa : wa;
        std::array<std::size_t, 3> idx{};
        idx[drive] = static_cast<std::size_t>(i);
        idx[a] = static_cast<std::size_t>(ka);
        idx[b] = static_cast<std::size_t>(kb);
        tap(grid.index(idx[0], idx[1], idx[2]), step * wgt_a * wgt_b);
      }
    }
  }
}

}  // namespace nodect
