#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "commands.hpp"
#include "config.hpp"
#include "nodect/errors.hpp"
#include "nodect/log.hpp"
#include "nodect/parallel.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitDivergence = 4;

}  // namespace

int main(int argc, char** argv) {
  using namespace nodect::cli;
  CLI::App app{"nodect: learned and classical CT reconstruction"};
  app.require_subcommand(1);
  app.fallthrough();
  std::size_t threads = 0;
  bool verbose = false;
  app.add_option("--threads", threads, "Worker thread cap (1 = bitwise reproducible)");
  app.add_flag("-v,--verbose", verbose, "Log progress to stderr");

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Generate a phantom and its simulated sinogram");
  simulate->add_option("--config", sim.config, "JSON config with phantom, geometry and noise")->required();
  simulate->add_option("--out", sim.out, "Output directory")->required();

  ReconstructArgs rec;
  auto* reconstruct = app.add_subcommand("reconstruct", "Reconstruct a volume from a sinogram");
  reconstruct->add_option("--method", rec.method, "fbp, fdk, sirt, tv or node")
      ->required()
      ->check(CLI::IsMember({"fbp", "fdk", "sirt", "tv", "node"}));
  reconstruct->add_option("--sinogram", rec.sinogram, "Input sinogram (.cts)")->required();
  reconstruct->add_option("--out", rec.out, "Output directory")->required();
  reconstruct->add_option("--reference", rec.reference, "Reference volume; enables the metrics report");
  reconstruct->add_option("--grid-shape", rec.grid_shape, "Output grid shape (default: from the sinogram sidecar)")
      ->delimiter(',');
  reconstruct->add_option("--voxel-size", rec.voxel_size, "Output voxel size in mm");
  reconstruct->add_option("--window", rec.window, "Ramp filter window: ram-lak or hann (default hann)");
  reconstruct->add_option("--iters", rec.iters, "Iterations for sirt/tv (defaults 200/150)");
  reconstruct->add_option("--step-size", rec.step_size, "TV step size lambda (default 1/||A||^2)");
  reconstruct->add_option("--tv-weight", rec.tv_weight, "TV weight mu");
  reconstruct->add_option("--tv-eps", rec.tv_eps, "TV smoothing eps");
  reconstruct->add_flag("--no-nonneg", rec.no_nonneg, "Disable the SIRT non-negativity clip");
  reconstruct->add_option("--checkpoint", rec.checkpoint, "Trained parameters (.nprm) for method node");
  reconstruct->add_flag("--untrained", rec.untrained, "Run method node with freshly initialized parameters");
  reconstruct->add_option("--gamma", rec.gamma, "Data consistency weight (overrides the checkpoint)");
  reconstruct->add_option("--arch", rec.arch, "Network architecture JSON for --untrained");
  reconstruct->add_option("--seed", rec.seed, "Initialization seed for --untrained");
  reconstruct->add_option("--t-end", rec.t_end, "ODE end time");
  reconstruct->add_option("--ode-step", rec.h, "ODE step size h");
  reconstruct->add_flag("--no-fov-mask", rec.no_fov_mask, "Evaluate metrics over the whole grid");
  reconstruct->add_flag("--slices", rec.slices, "Export center slices as PGM");
  reconstruct->add_flag("--log", rec.log, "Write the per-iteration or per-step log as CSV");

  TrainArgs tr;
  auto* train = app.add_subcommand("train", "Train the node model");
  train->add_option("--config", tr.config, "JSON config with samples, arch, ode and train sections")->required();
  train->add_option("--out", tr.out, "Output directory for checkpoints and history")->required();
  train->add_option("--resume", tr.resume, "Checkpoint (.nprm) to continue from, Adam state included");

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "Compare a reconstruction against a reference");
  eval->add_option("--recon", ev.recon, "Reconstruction volume (.ctv)")->required();
  eval->add_option("--reference", ev.reference, "Reference volume (.ctv)")->required();
  eval->add_option("--out", ev.out, "Output directory")->required();
  eval->add_option("--sinogram", ev.sinogram, "Sinogram whose geometry defines the FOV mask");
  eval->add_option("--label", ev.label, "Method name written into the report");
  eval->add_flag("--no-fov-mask", ev.no_fov_mask, "Evaluate over the whole grid");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  if (threads > 0) nodect::set_num_threads(threads);
  nodect::set_verbose(verbose);

  try {
    if (*simulate) cmd_simulate(sim);
    if (*reconstruct) cmd_reconstruct(rec);
    if (*train) cmd_train(tr);
    if (*eval) cmd_eval(ev);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const nodect::DataError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const nodect::DivergenceError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitDivergence;
  } catch (const nodect::TrainingError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitDivergence;
  } catch (const nodect::InvalidArgument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
