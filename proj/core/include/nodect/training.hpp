#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "nodect/analytic.hpp"
#include "nodect/geometry.hpp"
#include "nodect/net.hpp"
#include "nodect/ode.hpp"
#include "nodect/volume.hpp"

namespace nodect {

/// 1 inside the cylinder around the rotation axis (2D: disk) seen by every
/// view, 0 outside. The radius is the smaller of the scan's FOV radius and
/// the distance from the grid center to the outermost voxel centers along
/// the smaller lateral axis; voxels whose center distance is strictly below
/// the radius are inside.
Volume fov_mask(const VolumeGrid& grid, const Geometry& geom);

/// Mean |pred - target| over the mask; empty mask raises InvalidArgument.
double l1_fov_loss(const Volume& pred, const Volume& target, const Volume& mask);

/// Gradient of l1_fov_loss w.r.t. pred, taking sign(0) = 0.
Volume l1_fov_loss_gradient(const Volume& pred, const Volume& target, const Volume& mask);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t t = 0;

  static AdamState zeros(std::size_t n) { return {std::vector<double>(n, 0.0), std::vector<double>(n, 0.0), 0}; }
};

/// One bias-corrected Adam step in place. Entries before `split` use lr_head,
/// the rest use lr_tail (network weights and the gamma slot respectively).
void adam_step(std::vector<double>& params, const std::vector<double>& grads, AdamState& state,
               const AdamConfig& cfg, std::size_t split, double lr_head, double lr_tail);

/// Scales `grads` so its global L2 norm is at most max_norm; returns the
/// norm before clipping.
double clip_global_norm(std::vector<double>& grads, double max_norm);

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 1;
  double lr_net = 1e-4;
  double lr_gamma = 1e-2;
  AdamConfig adam{};
  double gamma_init = 0.01;
  double clip_norm = 1.0;
  std::uint64_t seed = 0;
  FilterWindow window = FilterWindow::ram_lak;
  /// Empty disables checkpoint files.
  std::string checkpoint_dir;
  /// Fraction of an epoch's samples allowed to diverge before training aborts.
  double max_diverged_fraction = 0.2;

  void validate() const;
};

struct Sample {
  Sinogram sinogram;
  Volume target;
};

struct Checkpoint {
  NetParams params;
  double gamma = 0.0;
  std::size_t epoch = 0;
  double val_loss = 0.0;
  AdamState adam;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double mean_train_loss = 0.0;
  double mean_val_loss = 0.0;
  double gamma = 0.0;
  std::uint64_t adam_step = 0;
  std::size_t clipped = 0;   // updates whose gradient norm was clipped
  std::size_t retried = 0;   // solves retried at half step after diverging
  std::size_t skipped = 0;   // samples skipped after the retry diverged too
};

struct TrainResult {
  Checkpoint best;
  Checkpoint last;
  /// Validation loss of the starting parameters, before any update.
  double initial_val_loss = 0.0;
  std::vector<EpochRecord> history;
  /// Number of optimizer updates performed by this call.
  std::size_t updates = 0;
};

/// Loss and gradients of one sample through the full forward solve and the
/// adjoint pass. `x0` is the analytic initializer of the sample.
struct SampleGradient {
  double loss = 0.0;
  std::vector<double> grad_params;
  double grad_gamma = 0.0;
};
SampleGradient loss_and_gradient(const Sample& s, const Volume& x0, const NetParams& params, double gamma,
                                 const OdeConfig& ode, const Volume& mask);

/// Loss of the node reconstruction without gradients.
double sample_loss(const Sample& s, const Volume& x0, const NetParams& params, double gamma, const OdeConfig& ode,
                   const Volume& mask);

/// Trains (theta, gamma) with batch size 1, Adam and global-norm clipping.
/// Validation runs before the first update and after each epoch; the
/// checkpoint of the trained epoch with the lowest validation loss is kept.
/// When `resume` is given, parameters, gamma, Adam state and the epoch
/// counter continue from it and `cfg.epochs` more epochs run.
/// With a checkpoint_dir, writes best.nprm/last.nprm (+ .json sidecars,
/// last.adam) and history.csv after every epoch.
TrainResult train(const std::vector<Sample>& train_set, const std::vector<Sample>& val_set, const NetArch& arch,
                  const OdeConfig& ode, const TrainConfig& cfg, const Checkpoint* resume = nullptr);

/// CSV header: epoch,mean_train_loss,mean_val_loss,gamma,adam_step,clipped,retried,skipped
void write_history(const std::string& path, const std::vector<EpochRecord>& history);
std::vector<EpochRecord> read_history(const std::string& path);

/// Checkpoint = parameter file plus sidecar `path + ".json"` with gamma,
/// epoch, val_loss and adam_step; `extra` (JSON object text) is merged in.
/// Adam moments are written to `path + ".adam"`.
void save_checkpoint(const std::string& path, const Checkpoint& c, const std::string& extra = {});
Checkpoint load_checkpoint(const std::string& path);

}  // namespace nodect
