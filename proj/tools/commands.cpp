#include "commands.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "config.hpp"
#include "nodect/analytic.hpp"
#include "nodect/classical.hpp"
#include "nodect/errors.hpp"
#include "nodect/io.hpp"
#include "nodect/log.hpp"
#include "nodect/metrics.hpp"
#include "nodect/parallel.hpp"
#include "nodect/projector.hpp"

#ifndef NODECT_VERSION
#define NODECT_VERSION "unknown"
#endif

namespace nodect::cli {

namespace fs = std::filesystem;

namespace {

ordered_json manifest_base(const std::string& command) {
  ordered_json m;
  m["command"] = command;
  m["version"] = NODECT_VERSION;
  m["threads"] = num_threads();
  return m;
}

fs::path make_out_dir(const std::string& out) {
  fs::path dir(out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ConfigError("cannot create output directory '" + out + "': " + ec.message());
  return dir;
}

void require_file(const fs::path& p, const std::string& what) {
  if (!fs::is_regular_file(p)) throw ConfigError(what + " '" + p.string() + "' does not exist");
}

json read_sidecar(const fs::path& data_file) {
  const fs::path side = data_file.string() + ".json";
  if (!fs::is_regular_file(side)) return json::object();
  std::ifstream in(side);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError("sidecar '" + side.string() + "' is not valid JSON: " + e.what());
  }
}

Volume load_volume(const fs::path& p, const std::string& what) {
  require_file(p, what);
  return read_volume(p.string());
}

Sinogram load_sinogram(const fs::path& p, const std::string& what) {
  require_file(p, what);
  return read_sinogram(p.string());
}

// Metrics are computed on volumes as stored (f32), so reports from
// `reconstruct` and `eval` agree for the same pair of files.
Volume as_stored(const Volume& v) {
  Volume out = v;
  for (double& x : out.values()) x = static_cast<double>(static_cast<float>(x));
  return out;
}

double angular_increment_deg(const Geometry& g) {
  return std::visit([](const auto& x) { return x.angular_increment(); }, g) * 180.0 / std::numbers::pi;
}

void check_grid_geometry(const VolumeGrid& grid, const Geometry& geom) {
  try {
    check_compatible(geom, grid);
  } catch (const InvalidArgument& e) {
    throw DataError(e.what());
  }
}

}  // namespace

// ---------------------------------------------------------------------------

void cmd_simulate(const SimulateArgs& a) {
  const json cfg = read_json_file(a.config);
  if (!cfg.contains("phantom")) throw ConfigError("phantom section is required");
  if (!cfg.contains("geometry")) throw ConfigError("geometry section is required");
  const PhantomSpec spec = parse_phantom(cfg["phantom"]);
  const Geometry geom = parse_geometry(cfg["geometry"]);
  const json noise_cfg = cfg.value("noise", json::object());
  const NoiseModel noise = parse_noise(noise_cfg);
  const std::uint64_t noise_seed = get_field<std::uint64_t>(noise_cfg, "noise", "seed", 0);
  try {
    check_compatible(geom, spec.grid);
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("phantom/geometry: ") + e.what());
  }

  const fs::path dir = make_out_dir(a.out);
  const Volume x = make_phantom(spec);
  const Sinogram p = simulate_measurement(x, geom, noise, noise_seed);

  const std::string geom_json = geometry_to_json(geom);
  const std::string grid_json = grid_to_json(spec.grid);
  ordered_json vol_extra;
  vol_extra["geometry"] = json::parse(geom_json);
  vol_extra["phantom"] = {{"kind", std::string(phantom_kind_name(spec.kind))}, {"seed", spec.seed}};
  write_volume((dir / "phantom.ctv").string(), x, vol_extra.dump());
  ordered_json sino_extra;
  sino_extra["grid"] = json::parse(grid_json);
  write_sinogram((dir / "sinogram.cts").string(), p, sino_extra.dump());

  ordered_json m = manifest_base("simulate");
  m["config"] = fs::absolute(a.config).lexically_normal().string();
  m["phantom"] = {{"kind", std::string(phantom_kind_name(spec.kind))},
                  {"grid", json::parse(grid_json)},
                  {"seed", spec.seed},
                  {"value_range", {spec.value_min, spec.value_max}}};
  ordered_json g = json::parse(geom_json);
  g["angular_increment_deg"] = angular_increment_deg(geom);
  g["fov_radius"] = fov_radius(geom);
  m["geometry"] = g;
  m["noise"] = {{"kind", std::string(noise_kind_name(noise.kind))},
                {"sigma", noise.sigma},
                {"incident_photons", noise.incident_photons},
                {"seed", noise_seed}};
  m["outputs"] = {{"phantom", "phantom.ctv"}, {"sinogram", "sinogram.cts"}};
  write_json_file(dir / "manifest.json", m);
  std::cout << "wrote " << (dir / "phantom.ctv").string() << " and " << (dir / "sinogram.cts").string() << '\n';
}

// ---------------------------------------------------------------------------

namespace {

VolumeGrid resolve_grid(const ReconstructArgs& a, const json& sino_side, const Volume* reference) {
  if (!a.grid_shape.empty()) {
    if (!(a.voxel_size > 0.0)) throw ConfigError("--voxel-size must be given and > 0 with --grid-shape");
    json j{{"shape", a.grid_shape}, {"voxel_size", a.voxel_size}};
    return parse_grid(j, "--grid-shape");
  }
  if (sino_side.contains("grid")) {
    VolumeGrid g = parse_grid(sino_side["grid"], "sinogram sidecar grid");
    if (a.voxel_size > 0.0) g.voxel_size = a.voxel_size;
    return g;
  }
  if (reference != nullptr) return reference->grid();
  throw ConfigError("no output grid: pass --grid-shape and --voxel-size, or a --reference volume");
}

struct NodeSetup {
  NetParams params;
  double gamma = 0.01;
  OdeConfig ode;
  std::optional<FilterWindow> window;
  ordered_json info;
};

NodeSetup node_setup(const ReconstructArgs& a, const VolumeGrid& grid) {
  if (a.checkpoint.empty() && !a.untrained) {
    throw ConfigError("method node requires --checkpoint or --untrained");
  }
  if (!a.checkpoint.empty() && a.untrained) throw ConfigError("--checkpoint and --untrained are exclusive");
  NodeSetup s;
  if (!a.checkpoint.empty()) {
    require_file(a.checkpoint, "checkpoint");
    const Checkpoint c = load_checkpoint(a.checkpoint);
    s.params = c.params;
    s.gamma = c.gamma;
    const json side = read_sidecar(a.checkpoint);
    if (side.contains("ode")) s.ode = parse_ode(side["ode"]);
    if (side.contains("train") && side["train"].contains("window")) {
      s.window = parse_window(side["train"]["window"].get<std::string>());
    }
    s.info["checkpoint"] = fs::absolute(a.checkpoint).lexically_normal().string();
    s.info["checkpoint_epoch"] = c.epoch;
  } else {
    NetArch arch;
    arch.dims = static_cast<std::uint32_t>(grid.dims);
    if (!a.arch.empty()) arch = parse_arch(read_json_file(a.arch));
    s.params = init_params(arch, a.seed);
    s.info["untrained"] = true;
    s.info["init_seed"] = a.seed;
  }
  if (s.params.arch.dims != static_cast<std::uint32_t>(grid.dims)) {
    throw DataError("network dims do not match the reconstruction grid");
  }
  if (a.gamma) s.gamma = *a.gamma;
  if (a.t_end) s.ode.t_end = *a.t_end;
  if (a.h) s.ode.step_size = *a.h;
  try {
    s.ode.steps();
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("ode: ") + e.what());
  }
  s.info["gamma"] = s.gamma;
  s.info["arch"] = arch_to_json(s.params.arch);
  s.info["ode"] = ode_to_json(s.ode);
  return s;
}

}  // namespace

void cmd_reconstruct(const ReconstructArgs& a) {
  const Sinogram p = load_sinogram(a.sinogram, "sinogram");
  const json sino_side = read_sidecar(a.sinogram);
  std::optional<Volume> reference;
  if (!a.reference.empty()) reference = load_volume(a.reference, "reference volume");
  const VolumeGrid grid = resolve_grid(a, sino_side, reference ? &*reference : nullptr);
  const Geometry& geom = p.geometry();
  check_grid_geometry(grid, geom);
  if (a.method == "fbp" && !is_fan(geom)) throw DataError("method fbp needs a fan-beam sinogram; use fdk");
  if (a.method == "fdk" && is_fan(geom)) throw DataError("method fdk needs a cone-beam sinogram; use fbp");
  if (reference && !(reference->grid().shape == grid.shape && reference->grid().dims == grid.dims)) {
    throw DataError("reference volume shape does not match the reconstruction grid");
  }
  FilterWindow window = FilterWindow::hann;
  if (a.window) {
    try {
      window = parse_window(*a.window);
    } catch (const InvalidArgument& e) {
      throw ConfigError(std::string("--window: ") + e.what());
    }
  }

  const fs::path dir = make_out_dir(a.out);
  ordered_json m = manifest_base("reconstruct");
  m["method"] = a.method;
  m["sinogram"] = fs::absolute(a.sinogram).lexically_normal().string();
  m["grid"] = json::parse(grid_to_json(grid));

  const auto t0 = std::chrono::steady_clock::now();
  Volume x;
  if (a.method == "fbp" || a.method == "fdk") {
    x = analytic_reconstruct(p, grid, window);
    m["window"] = std::string(window_name(window));
  } else if (a.method == "sirt" || a.method == "tv") {
    IterConfig cfg;
    cfg.n_iters = a.iters > 0 ? a.iters : (a.method == "sirt" ? 200 : 150);
    cfg.step_size = a.step_size;
    cfg.tv_weight = a.tv_weight;
    cfg.tv_eps = a.tv_eps;
    cfg.nonneg = !a.no_nonneg;
    try {
      cfg.validate();
    } catch (const InvalidArgument& e) {
      throw ConfigError(e.what());
    }
    IterOptions opt;
    opt.reference = reference ? &*reference : nullptr;
    IterativeResult r = a.method == "sirt" ? sirt(p, grid, cfg, opt) : tv_reconstruct(p, grid, cfg, opt);
    x = std::move(r.volume);
    m["iters"] = cfg.n_iters;
    if (a.method == "sirt") {
      m["nonneg"] = cfg.nonneg;
    } else {
      m["step_size"] = r.step_size;
      m["tv_weight"] = cfg.tv_weight;
      m["tv_eps"] = r.tv_eps;
    }
    if (a.log) write_iteration_log((dir / (a.method + "_iterations.csv")).string(), r.history);
  } else {
    NodeSetup s = node_setup(a, grid);
    if (!a.window && s.window) window = *s.window;
    NodeReconstruction r = reconstruct_node(p, grid, s.params, s.gamma, s.ode, window, a.log);
    x = std::move(r.solve.x_end);
    m["window"] = std::string(window_name(window));
    m["node"] = s.info;
    m["evaluations"] = r.solve.evaluations;
    if (a.log) write_trajectory_log((dir / "node_trajectory.csv").string(), r.solve.log);
  }
  const double runtime = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  const fs::path vol_path = dir / (a.method + ".ctv");
  ordered_json extra;
  extra["geometry"] = json::parse(geometry_to_json(geom));
  extra["method"] = a.method;
  write_volume(vol_path.string(), x, extra.dump());
  m["outputs"] = {{"volume", vol_path.filename().string()}};

  if (reference) {
    const Volume stored = as_stored(x);
    const Volume mask = a.no_fov_mask ? Volume() : fov_mask(grid, geom);
    MetricsReport rep = evaluate_metrics(a.method, stored, *reference, a.no_fov_mask ? nullptr : &mask);
    rep.runtime_seconds = runtime;
    const fs::path metrics_path = dir / (a.method + "_metrics.json");
    std::ofstream(metrics_path) << metrics_to_json(rep);
    m["reference"] = fs::absolute(a.reference).lexically_normal().string();
    m["fov_mask"] = !a.no_fov_mask;
    m["outputs"]["metrics"] = metrics_path.filename().string();
    std::cout << a.method << ": rmse " << rep.rmse << " psnr " << rep.psnr << " ssim " << rep.ssim << '\n';
  }
  if (a.slices) {
    std::vector<std::string> names;
    for (int axis = grid.dims == 2 ? 2 : 0; axis < 3; ++axis) {
      const std::string name = a.method + "_slice_axis" + std::to_string(axis) + ".pgm";
      write_pgm_slice((dir / name).string(), x, axis);
      names.push_back(name);
    }
    m["outputs"]["slices"] = names;
  }
  write_json_file(dir / (a.method + "_manifest.json"), m);
}

// ---------------------------------------------------------------------------

namespace {

struct SampleFiles {
  fs::path sinogram;
  fs::path target;
};

SampleFiles resolve_sample(const json& entry, const fs::path& base, const std::string& section) {
  if (entry.is_string()) {
    const fs::path manifest = base / entry.get<std::string>();
    require_file(manifest, section + " manifest");
    const json m = read_json_file(manifest);
    if (!m.contains("outputs")) throw ConfigError("manifest '" + manifest.string() + "' has no outputs section");
    const fs::path dir = manifest.parent_path();
    return {dir / get_field<std::string>(m["outputs"], manifest.string() + ":outputs", "sinogram"),
            dir / get_field<std::string>(m["outputs"], manifest.string() + ":outputs", "phantom")};
  }
  if (entry.is_object()) {
    return {base / get_field<std::string>(entry, section, "sinogram"),
            base / get_field<std::string>(entry, section, "target")};
  }
  throw ConfigError(section + " entries must be manifest paths or {sinogram, target} objects");
}

std::vector<Sample> load_samples(const json& cfg, const std::string& key, const fs::path& base,
                                 ordered_json& record) {
  if (!cfg.contains(key) || !cfg[key].is_array()) throw ConfigError(key + " must be a list of samples");
  if (cfg[key].empty()) throw ConfigError(key + " is empty");
  std::vector<Sample> out;
  record = ordered_json::array();
  for (const auto& entry : cfg[key]) {
    const SampleFiles f = resolve_sample(entry, base, key);
    require_file(f.sinogram, key + " sinogram");
    require_file(f.target, key + " target");
    Sample s{read_sinogram(f.sinogram.string()), read_volume(f.target.string())};
    check_grid_geometry(s.target.grid(), s.sinogram.geometry());
    record.push_back({{"sinogram", fs::absolute(f.sinogram).lexically_normal().string()},
                      {"target", fs::absolute(f.target).lexically_normal().string()}});
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

void cmd_train(const TrainArgs& a) {
  const json cfg = read_json_file(a.config);
  const fs::path base = fs::absolute(a.config).parent_path();
  ordered_json train_files, val_files;
  const auto train_set = load_samples(cfg, "train_samples", base, train_files);
  const auto val_set = load_samples(cfg, "val_samples", base, val_files);
  NetArch arch = parse_arch(cfg.value("arch", json::object()));
  if (!cfg.contains("arch") || !cfg["arch"].contains("dims")) {
    arch.dims = static_cast<std::uint32_t>(train_set.front().target.grid().dims);
  }
  const OdeConfig ode = parse_ode(cfg.value("ode", json::object()));
  TrainConfig tc = parse_train(cfg.value("train", json::object()));

  const fs::path dir = make_out_dir(a.out);
  tc.checkpoint_dir = dir.string();

  std::optional<Checkpoint> resume;
  std::vector<EpochRecord> previous;
  if (!a.resume.empty()) {
    require_file(a.resume, "resume checkpoint");
    resume = load_checkpoint(a.resume);
    if (!(resume->params.arch == arch)) throw ConfigError("resume checkpoint architecture differs from arch config");
    const fs::path hist = fs::path(a.resume).parent_path() / "history.csv";
    if (fs::is_regular_file(hist)) previous = read_history(hist.string());
  }

  TrainResult r = train(train_set, val_set, arch, ode, tc, resume ? &*resume : nullptr);

  std::vector<EpochRecord> history = previous;
  history.insert(history.end(), r.history.begin(), r.history.end());
  // The best checkpoint across the resume boundary is the better of the two.
  if (resume) {
    const fs::path prev_best = fs::path(a.resume).parent_path() / "best.nprm";
    if (fs::is_regular_file(prev_best)) {
      const Checkpoint pb = load_checkpoint(prev_best.string());
      if (pb.val_loss <= r.best.val_loss) r.best = pb;
    }
  }

  ordered_json extra;
  extra["arch"] = arch_to_json(arch);
  extra["ode"] = ode_to_json(ode);
  extra["train"] = train_to_json(tc);
  extra["initial_val_loss"] = r.initial_val_loss;
  save_checkpoint((dir / "best.nprm").string(), r.best, extra.dump());
  save_checkpoint((dir / "last.nprm").string(), r.last, extra.dump());
  write_history((dir / "history.csv").string(), history);

  ordered_json m = manifest_base("train");
  m["config"] = fs::absolute(a.config).lexically_normal().string();
  m["train_samples"] = train_files;
  m["val_samples"] = val_files;
  m["arch"] = extra["arch"];
  m["ode"] = extra["ode"];
  m["train"] = extra["train"];
  m["param_count"] = r.best.params.values.size();
  if (resume) m["resumed_from"] = fs::absolute(a.resume).lexically_normal().string();
  m["initial_val_loss"] = r.initial_val_loss;
  m["selected_epoch"] = r.best.epoch;
  m["selected_val_loss"] = r.best.val_loss;
  m["updates"] = r.updates;
  m["outputs"] = {{"best", "best.nprm"}, {"last", "last.nprm"}, {"history", "history.csv"}};
  write_json_file(dir / "manifest.json", m);
  std::cout << "selected epoch " << r.best.epoch << " validation loss " << std::setprecision(10) << r.best.val_loss
            << '\n';
}

// ---------------------------------------------------------------------------

void cmd_eval(const EvalArgs& a) {
  const Volume recon = load_volume(a.recon, "reconstruction");
  const Volume reference = load_volume(a.reference, "reference volume");
  if (!(recon.grid().shape == reference.grid().shape && recon.grid().dims == reference.grid().dims)) {
    throw DataError("reconstruction and reference shapes differ");
  }
  const auto t0 = std::chrono::steady_clock::now();
  std::optional<Volume> mask;
  ordered_json m = manifest_base("eval");
  if (!a.no_fov_mask) {
    std::optional<Geometry> geom;
    if (!a.sinogram.empty()) {
      geom = load_sinogram(a.sinogram, "sinogram").geometry();
      m["sinogram"] = fs::absolute(a.sinogram).lexically_normal().string();
    } else {
      for (const auto& f : {a.recon, a.reference}) {
        const json side = read_sidecar(f);
        if (side.contains("geometry")) {
          geom = parse_geometry(side["geometry"]);
          break;
        }
      }
    }
    if (!geom) throw ConfigError("the FOV mask needs a geometry: pass --sinogram or --no-fov-mask");
    mask = fov_mask(reference.grid(), *geom);
  }
  MetricsReport rep = evaluate_metrics(a.label, recon, reference, mask ? &*mask : nullptr);
  rep.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  const fs::path dir = make_out_dir(a.out);
  const fs::path metrics_path = dir / (a.label + "_metrics.json");
  std::ofstream(metrics_path) << metrics_to_json(rep);
  m["recon"] = fs::absolute(a.recon).lexically_normal().string();
  m["reference"] = fs::absolute(a.reference).lexically_normal().string();
  m["fov_mask"] = !a.no_fov_mask;
  m["outputs"] = {{"metrics", metrics_path.filename().string()}};
  write_json_file(dir / (a.label + "_manifest.json"), m);
  std::cout << a.label << ": rmse " << rep.rmse << " psnr " << rep.psnr << " ssim " << rep.ssim << '\n';
}

}  // namespace nodect::cli
