#include "nodect/projector.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "nodect/errors.hpp"
#include "nodect/parallel.hpp"

namespace nodect {

void check_compatible(const Geometry& geom, const VolumeGrid& grid) {
  if (is_fan(geom) && grid.dims != 2) throw InvalidArgument("fan geometry requires a 2D volume grid");
  if (!is_fan(geom) && grid.dims != 3) throw InvalidArgument("cone geometry requires a 3D volume grid");
}

void forward_project_into(const Volume& x, Sinogram& out) {
  const Geometry& geom = out.geometry();
  const VolumeGrid& grid = x.grid();
  check_compatible(geom, grid);
  const std::size_t rows = detector_rows(geom);
  const std::size_t cols = detector_cols(geom);
  const auto xv = x.values();
  auto pv = out.values();
  parallel_for(n_angles(geom), [&](std::size_t a) {
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        double sum = 0.0;
        trace_ray(grid, ray_for(geom, a, r, c), [&](std::size_t idx, double w) { sum += w * xv[idx]; });
        pv[out.index(a, r, c)] = sum;
      }
    }
  });
}

Sinogram forward_project(const Volume& x, const Geometry& geom) {
  Sinogram out(geom);
  forward_project_into(x, out);
  return out;
}

void back_project_into(const Sinogram& p, Volume& out) {
  const Geometry& geom = p.geometry();
  const VolumeGrid& grid = out.grid();
  check_compatible(geom, grid);
  const std::size_t rows = detector_rows(geom);
  const std::size_t cols = detector_cols(geom);
  const std::size_t angles = n_angles(geom);
  const auto pv = p.values();

  auto accumulate = [&](std::size_t begin, std::size_t end, std::span<double> target) {
    for (std::size_t a = begin; a < end; ++a) {
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
          const double value = pv[p.index(a, r, c)];
          if (value == 0.0) continue;
          trace_ray(grid, ray_for(geom, a, r, c), [&](std::size_t idx, double w) { target[idx] += w * value; });
        }
      }
    }
  };

  auto ov = out.values();
  std::fill(ov.begin(), ov.end(), 0.0);
  const std::size_t chunks = chunk_count(angles);
  if (chunks == 1) {
    accumulate(0, angles, ov);
    return;
  }
  // Per-chunk partial volumes, reduced in chunk order.
  std::vector<std::vector<double>> partial(chunks, std::vector<double>(grid.size(), 0.0));
  parallel_chunks(angles, [&](std::size_t chunk, std::size_t b, std::size_t e) { accumulate(b, e, partial[chunk]); });
  for (const auto& part : partial) axpy(1.0, part, ov);
}

Volume back_project(const Sinogram& p, const VolumeGrid& grid) {
  Volume out(grid);
  back_project_into(p, out);
  return out;
}

double op_norm_estimate(const Geometry& geom, const VolumeGrid& grid, std::size_t n_power_iters) {
  if (n_power_iters < 1) throw InvalidArgument("n_power_iters must be >= 1");
  check_compatible(geom, grid);
  Volume v(grid, 1.0 / std::sqrt(static_cast<double>(grid.size())));
  Sinogram av(geom);
  double estimate = 0.0;
  for (std::size_t k = 0; k < n_power_iters; ++k) {
    forward_project_into(v, av);
    back_project_into(av, v);
    const double n = norm2(v.values());
    if (n == 0.0) return 0.0;
    for (double& x : v.values()) x /= n;
    forward_project_into(v, av);
    estimate = norm2(av.values());
  }
  return estimate;
}

}  // namespace nodect
