#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace nodect::cli {

struct SimulateArgs {
  std::string config;
  std::string out;
};

struct ReconstructArgs {
  std::string method;
  std::string sinogram;
  std::string out;
  std::string reference;
  std::vector<std::size_t> grid_shape;
  double voxel_size = 0.0;
  std::optional<std::string> window;
  std::size_t iters = 0;  // 0 selects the method default
  double step_size = 0.0;
  double tv_weight = 0.0;
  double tv_eps = 0.0;
  bool no_nonneg = false;
  std::string checkpoint;
  bool untrained = false;
  std::optional<double> gamma;
  std::string arch;
  std::uint64_t seed = 0;
  std::optional<double> t_end;
  std::optional<double> h;
  bool no_fov_mask = false;
  bool slices = false;
  bool log = false;
};

struct TrainArgs {
  std::string config;
  std::string out;
  std::string resume;
};

struct EvalArgs {
  std::string recon;
  std::string reference;
  std::string out;
  std::string sinogram;
  std::string label = "eval";
  bool no_fov_mask = false;
};

/// Each command returns normally on success and throws on failure; the
/// caller maps exception types to exit codes.
void cmd_simulate(const SimulateArgs& a);
void cmd_reconstruct(const ReconstructArgs& a);
void cmd_train(const TrainArgs& a);
void cmd_eval(const EvalArgs& a);

}  // namespace nodect::cli
