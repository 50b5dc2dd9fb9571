#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "nodect/geometry.hpp"
#include "nodect/volume.hpp"

namespace nodect {

struct IterConfig {
  std::size_t n_iters = 150;
  double step_size = 0.0;  // lambda; <= 0 selects 1 / op_norm_estimate^2 (TV only)
  double tv_weight = 0.0;  // mu
  double tv_eps = 0.0;     // <= 0 selects 1e-6 * dynamic range of the data-driven scale
  bool nonneg = true;      // SIRT only

  void validate() const;
};

struct IterRecord {
  std::size_t iteration = 0;
  double data_term = 0.0;  // 0.5 ||Ax - p||^2
  double tv_term = 0.0;    // R(x), unweighted
  double residual_norm = 0.0;
  std::optional<double> rmse;
};

struct IterativeResult {
  Volume volume;
  std::vector<IterRecord> history;
  double step_size = 0.0;
  double tv_eps = 0.0;
};

/// Optional extras shared by the iterative drivers.
struct IterOptions {
  const Volume* initial = nullptr;    // defaults to zeros
  const Volume* reference = nullptr;  // enables per-iteration RMSE
  bool record = true;
};

/// SIRT: x <- clip0(x + C A^T R (p - A x)), R and C the inverse row and column
/// sums of A (zero sums replaced by 1). Records are taken after each update.
IterativeResult sirt(const Sinogram& p, const VolumeGrid& grid, const IterConfig& cfg, const IterOptions& opt = {});

/// Smoothed isotropic total variation R(x) = sum sqrt(|grad x|^2 + eps^2) with
/// forward differences and a zero difference across the far boundary.
double tv_value(const Volume& x, double eps);
Volume tv_gradient(const Volume& x, double eps);

/// Lipschitz bound of tv_gradient: 4 * dims / eps.
double tv_lipschitz(int dims, double eps);

/// Gradient descent on 0.5 ||Ax - p||^2 + mu R(x):
/// x <- x - lambda (A^T (A x - p) + mu grad R(x)).
/// Warns when lambda >= 2 / (||A||^2 + mu L_TV).
IterativeResult tv_reconstruct(const Sinogram& p, const VolumeGrid& grid, const IterConfig& cfg,
                               const IterOptions& opt = {});

/// Plain Landweber iteration x <- x - lambda A^T (A x - p).
IterativeResult landweber(const Sinogram& p, const VolumeGrid& grid, std::size_t n_iters, double step_size,
                          const IterOptions& opt = {});

/// CSV with header iteration,data_term,tv_term,residual_norm,rmse_vs_reference.
void write_iteration_log(const std::string& path, const std::vector<IterRecord>& history);

}  // namespace nodect
