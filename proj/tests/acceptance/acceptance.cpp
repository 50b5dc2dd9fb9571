// Acceptance checks: one PASS/FAIL line each, exit status 1 if any fails.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "nodect/analytic.hpp"
#include "nodect/classical.hpp"
#include "nodect/log.hpp"
#include "nodect/metrics.hpp"
#include "nodect/ode.hpp"
#include "nodect/parallel.hpp"
#include "nodect/phantoms.hpp"
#include "nodect/projector.hpp"
#include "nodect/training.hpp"
#include "test_support.hpp"

namespace {

using namespace nodect;
namespace fs = std::filesystem;
using nlohmann::json;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string sci(double v) { return fmt("%.3e", v); }

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------

double adjoint_mismatch(const Volume& x, const Sinogram& y) {
  const Sinogram ax = forward_project(x, y.geometry());
  const Volume aty = back_project(y, x.grid());
  return std::abs(dot(ax.values(), y.values()) - dot(x.values(), aty.values())) /
         (norm2(ax.values()) * norm2(y.values()));
}

Outcome adjoint_operator() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto grid2 = VolumeGrid::make_2d(64, 64, 1.0);
  const Geometry fan = make_fan_geometry(60, 95, 120.0, 120.0, AngularRange::full_turn(), 2.0);
  const auto grid3 = VolumeGrid::make_3d(32, 32, 32, 1.0);
  const Geometry cone = make_cone_geometry(30, 24, 24, 80.0, 80.0, 3.0);
  double worst2 = 0.0, worst3 = 0.0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    worst2 = std::max(worst2, adjoint_mismatch(testing::random_volume(grid2, s), testing::random_sinogram(fan, 1000 + s)));
    worst3 = std::max(worst3, adjoint_mismatch(testing::random_volume(grid3, 2000 + s), testing::random_sinogram(cone, 3000 + s)));
  }
  const double t = seconds_since(t0);
  return {worst2 < 1e-10 && worst3 < 1e-10 && t < 30.0,
          "max mismatch 2D " + sci(worst2) + ", 3D " + sci(worst3) + " (bound 1e-10), " + fmt("%.1f s", t) +
              " (budget 30 s)"};
}

// ---------------------------------------------------------------------------

Outcome dense_equivalence() {
  const auto t0 = std::chrono::steady_clock::now();
  struct Case {
    VolumeGrid grid;
    Geometry geom;
  };
  const std::vector<Case> cases = {
      {VolumeGrid::make_2d(8, 8, 1.0), make_fan_geometry(10, 13, 20.0, 10.0, AngularRange::full_turn(), 1.0)},
      {VolumeGrid::make_3d(4, 4, 4, 1.0), make_cone_geometry(6, 5, 6, 15.0, 10.0, 1.0)}};
  double worst = 0.0;
  for (const auto& c : cases) {
    const std::size_t m = c.grid.size(), n = n_rays(c.geom);
    const auto a = testing::dense_matrix(c.geom, c.grid);
    double scale = 0.0;
    for (double v : a) scale = std::max(scale, std::abs(v));
    // A applied to unit vectors gives the columns, A^T applied to unit rays the rows.
    for (std::size_t j = 0; j < m; ++j) {
      Volume e(c.grid);
      e[j] = 1.0;
      const Sinogram col = forward_project(e, c.geom);
      for (std::size_t i = 0; i < n; ++i) worst = std::max(worst, std::abs(col[i] - a[i * m + j]) / scale);
    }
    for (std::size_t i = 0; i < n; ++i) {
      Sinogram e(c.geom);
      e[i] = 1.0;
      const Volume row = back_project(e, c.grid);
      for (std::size_t j = 0; j < m; ++j) worst = std::max(worst, std::abs(row[j] - a[i * m + j]) / scale);
    }
    // And on a random pair.
    const Volume x = testing::random_volume(c.grid, 5);
    const Sinogram ax = forward_project(x, c.geom);
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < m; ++j) s += a[i * m + j] * x[j];
      worst = std::max(worst, std::abs(ax[i] - s) / scale);
    }
  }
  const double t = seconds_since(t0);
  return {worst < 1e-10 && t < 5.0, "max entry difference " + sci(worst) + " (bound 1e-10), " + fmt("%.2f s", t) +
                                        " (budget 5 s)"};
}

// ---------------------------------------------------------------------------

Outcome rk4_order() {
  const auto t0 = std::chrono::steady_clock::now();
  const Volume x0(VolumeGrid::make_2d(1, 1, 1.0), 1.0);
  std::vector<double> err;
  for (double h : {0.1, 0.05, 0.025}) {
    OdeConfig cfg;
    cfg.t_end = 1.0;
    cfg.step_size = h;
    const auto r = rk4_solve([](const Volume& x) { Volume f = x; for (double& v : f.values()) v = -v; return f; }, x0, cfg);
    err.push_back(std::abs(r.x_end[0] - std::exp(-1.0)));
  }
  const double r1 = err[0] / err[1], r2 = err[1] / err[2];
  const bool ratios = std::abs(r1 - 16.0) <= 4.0 && std::abs(r2 - 16.0) <= 4.0;
  const bool absolute = err[1] < 1e-8;
  const double t = seconds_since(t0);
  std::string detail = "error ratios " + fmt("%.2f", r1) + ", " + fmt("%.2f", r2) + " (16 +/- 4: " +
                       (ratios ? "ok" : "out of range") + "); |x(1) - e^-1| at h=0.05 is " + sci(err[1]) +
                       " (bound 1e-8: " + (absolute ? "ok" : "exceeded") + "); " + fmt("%.3f s", t);
  return {ratios && absolute && t < 1.0, detail};
}

// ---------------------------------------------------------------------------

Outcome evaluation_count() {
  const auto grid = VolumeGrid::make_2d(8, 8, 1.0);
  const Geometry g = make_fan_geometry(8, 12, 20.0, 10.0, AngularRange::full_turn(), 1.0);
  const Sinogram p = forward_project(testing::random_volume(grid, 1, 0.0, 0.05), g);
  const NetParams params = init_params(NetArch{}, 0);
  const OdeConfig cfg;
  const ReconstructionDynamics dyn(p, grid, params, 0.01, cfg);
  const auto r = rk4_solve([&](const Volume& x) { return dyn.evaluate(x); }, Volume(grid), cfg);
  const bool ok = cfg.steps() == 20 && r.steps == 20 && r.evaluations == 80 && dyn.evaluations() == 80;
  return {ok, "steps " + std::to_string(r.steps) + ", solver evaluations " + std::to_string(r.evaluations) +
                  ", dynamics calls " + std::to_string(dyn.evaluations()) + " (expected 20 and 80)"};
}

// ---------------------------------------------------------------------------

NetArch one_conv_arch() {
  NetArch a;
  a.n_levels = 1;
  a.convs_per_level = 0;
  a.final_kernel = 3;
  return a;
}

struct SmallProblem {
  VolumeGrid grid = VolumeGrid::make_2d(8, 8, 1.0);
  Geometry geom = make_fan_geometry(8, 12, 20.0, 10.0, AngularRange::full_turn(), 1.0);
  Sample sample;
  Volume x0;
  Volume mask;
  SmallProblem() {
    Volume truth = testing::random_volume(grid, 1, 0.0, 0.05);
    Sinogram p = simulate_measurement(truth, geom, {NoiseKind::gaussian, 0.01, 1e5}, 2);
    x0 = fbp_fan(p, grid, FilterWindow::ram_lak);
    mask = fov_mask(grid, geom);
    sample = {std::move(p), std::move(truth)};
  }
};

Outcome adjoint_gradient() {
  const auto t0 = std::chrono::steady_clock::now();
  const SmallProblem s;
  const OdeConfig cfg;
  NetParams params = NetParams::unflatten(one_conv_arch(), testing::random_values(10, 8, -0.3, 0.3));
  const double gamma = 0.02;
  const SampleGradient g = loss_and_gradient(s.sample, s.x0, params, gamma, cfg, s.mask);
  auto loss = [&](const NetParams& p, double gm) { return sample_loss(s.sample, s.x0, p, gm, cfg, s.mask); };

  const double hg = 1e-5;
  const double fd_gamma = (loss(params, gamma + hg) - loss(params, gamma - hg)) / (2 * hg);
  const double err_gamma = testing::rel_err(g.grad_gamma, fd_gamma);
  double err_theta = 0.0;
  const double h = 1e-5;
  for (std::size_t i = 0; i < params.values.size(); ++i) {
    const double v = params.values[i];
    params.values[i] = v + h;
    const double up = loss(params, gamma);
    params.values[i] = v - h;
    const double dn = loss(params, gamma);
    params.values[i] = v;
    err_theta = std::max(err_theta, testing::rel_err(g.grad_params[i], (up - dn) / (2 * h)));
  }
  const double t = seconds_since(t0);
  return {err_gamma < 1e-4 && err_theta < 1e-3 && t < 120.0,
          "dL/dgamma rel err " + sci(err_gamma) + " (bound 1e-4), max dL/dtheta rel err over " +
              std::to_string(params.values.size()) + " entries " + sci(err_theta) + " (bound 1e-3), " +
              fmt("%.2f s", t)};
}

// ---------------------------------------------------------------------------

std::size_t peak_buffers(std::size_t steps) {
  const SmallProblem s;
  OdeConfig cfg;
  cfg.step_size = 1.0 / static_cast<double>(steps);
  const NetParams params = NetParams::unflatten(one_conv_arch(), testing::random_values(10, 11, -0.3, 0.3));
  const ReconstructionDynamics dyn(s.sample.sinogram, s.grid, params, 0.01, cfg);
  const std::size_t base = BufferProbe::live();
  BufferProbe::reset_peak();
  {
    const auto fwd = rk4_solve([&](const Volume& x) { return dyn.evaluate(x); }, s.x0, cfg);
    const Volume dl = l1_fov_loss_gradient(fwd.x_end, s.sample.target, s.mask);
    const auto r = adjoint_backward(dyn, fwd, dl, cfg);
    (void)r;
  }
  return BufferProbe::peak() - base;
}

Outcome memory_independence() {
  const std::size_t p20 = peak_buffers(20), p200 = peak_buffers(200);
  return {p20 > 0 && p20 == p200,
          "peak live Volume buffers S=20: " + std::to_string(p20) + ", S=200: " + std::to_string(p200)};
}

// ---------------------------------------------------------------------------

Outcome zero_init_identity() {
  std::vector<std::string> notes;
  bool ok = true;
  {
    const auto grid = VolumeGrid::make_2d(32, 32, 0.5);
    const Geometry g = make_fan_geometry(30, 48, 40.0, 20.0, AngularRange::full_turn(), 0.6);
    PhantomSpec spec;
    spec.grid = grid;
    const Sinogram p = simulate_measurement(make_phantom(spec), g, {NoiseKind::gaussian, 0.002, 1e5}, 3);
    const NetParams params = init_params(NetArch{}, 42);
    for (FilterWindow w : {FilterWindow::ram_lak, FilterWindow::hann}) {
      const auto r = reconstruct_node(p, grid, params, 0.0, OdeConfig{}, w);
      const bool same = r.solve.x_end.storage() == fbp_fan(p, grid, w).storage();
      ok = ok && same;
      notes.push_back(std::string("2D ") + std::string(window_name(w)) + (same ? " identical" : " differs"));
    }
  }
  {
    const auto grid = VolumeGrid::make_3d(16, 16, 16, 0.5);
    const Geometry g = make_cone_geometry(24, 20, 20, 40.0, 20.0, 0.75);
    PhantomSpec spec;
    spec.kind = PhantomKind::walnut_like_3d;
    spec.grid = grid;
    const Sinogram p = forward_project(make_phantom(spec), g);
    NetArch arch;
    arch.dims = 3;
    const auto r = reconstruct_node(p, grid, init_params(arch, 42), 0.0, OdeConfig{}, FilterWindow::ram_lak);
    const bool same = r.solve.x_end.storage() == fdk_cone(p, grid, FilterWindow::ram_lak).storage();
    ok = ok && same;
    notes.push_back(std::string("3D FDK") + (same ? " identical" : " differs"));
  }
  std::string d;
  for (const auto& n : notes) d += (d.empty() ? "" : ", ") + n;
  return {ok, d + " (bitwise)"};
}

// ---------------------------------------------------------------------------

Outcome baseline_sanity() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto grid = VolumeGrid::make_2d(64, 64, 0.25);
  const Geometry g = make_fan_geometry(60, 96, 50.0, 25.0, AngularRange::full_turn(), 0.375);
  PhantomSpec spec;
  spec.grid = grid;
  spec.seed = 4;
  const Volume truth = make_phantom(spec);
  const Sinogram p = forward_project(truth, g);

  IterConfig sc;
  sc.n_iters = 200;
  const auto s = sirt(p, grid, sc);
  std::size_t increases = 0;
  double prev = norm2(p.values());
  for (const auto& h : s.history) {
    if (h.residual_norm > prev) ++increases;
    prev = h.residual_norm;
  }
  const double rmse_sirt = rmse(s.volume, truth);
  const double rmse_fbp = rmse(fbp_fan(p, grid, FilterWindow::ram_lak), truth);

  const double norm = op_norm_estimate(g, grid, 50);
  IterConfig tc;
  tc.n_iters = 150;
  tc.tv_weight = 0.01;
  tc.tv_eps = 1e-3;
  const double bound = 2.0 / (norm * norm + tc.tv_weight * tv_lipschitz(2, tc.tv_eps));
  tc.step_size = 0.5 * bound;
  const auto tv = tv_reconstruct(p, grid, tc);
  std::size_t tv_increases = 0;
  double prev_obj = 0.5 * dot(p.values(), p.values()) + tc.tv_weight * tv_value(Volume(grid), tc.tv_eps);
  for (const auto& h : tv.history) {
    const double obj = h.data_term + tc.tv_weight * h.tv_term;
    if (obj > prev_obj * (1.0 + 1e-12)) ++tv_increases;
    prev_obj = obj;
  }
  const double t = seconds_since(t0);
  const bool ok = increases == 0 && rmse_sirt < rmse_fbp && tv_increases == 0 && t < 120.0;
  return {ok, "SIRT residual increases " + std::to_string(increases) + "/200, RMSE SIRT " + sci(rmse_sirt) +
                  " vs FBP " + sci(rmse_fbp) + "; TV objective increases " + std::to_string(tv_increases) +
                  "/150 at step " + sci(tc.step_size) + " (bound " + sci(bound) + "), " + fmt("%.1f s", t)};
}

// ---------------------------------------------------------------------------

struct MethodScore {
  std::string name;
  std::vector<double> rmse, ssim;
  double mean_rmse() const { return mean(rmse); }
  double mean_ssim() const { return mean(ssim); }
  static double mean(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  }
};

Outcome method_ordering() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto grid = VolumeGrid::make_2d(64, 64, 0.25);
  const Geometry g = make_fan_geometry(30, 96, 50.0, 25.0, AngularRange::full_turn(), 0.375);
  auto make = [&](std::uint64_t seed) {
    PhantomSpec spec;
    spec.grid = grid;
    spec.seed = seed;
    Volume x = make_phantom(spec);
    Sinogram p = simulate_measurement(x, g, {NoiseKind::gaussian, 0.0025, 1e5}, seed + 1000);
    return Sample{std::move(p), std::move(x)};
  };
  std::vector<Sample> train_set, val_set, test_set;
  for (std::uint64_t i = 0; i < 10; ++i) train_set.push_back(make(i));
  for (std::uint64_t i = 50; i < 53; ++i) val_set.push_back(make(i));
  for (std::uint64_t i = 100; i < 103; ++i) test_set.push_back(make(i));

  NetArch arch;
  arch.base_channels = 8;
  arch.n_levels = 3;
  const OdeConfig ode;
  TrainConfig tc;
  tc.epochs = 25;
  tc.lr_net = 3e-3;
  tc.lr_gamma = 2e-3;
  tc.window = FilterWindow::hann;
  tc.seed = 7;
  const TrainResult tr = train(train_set, val_set, arch, ode, tc);
  const double t_train = seconds_since(t0);

  const Volume mask = fov_mask(grid, g);
  auto score = [&](MethodScore& m, const Volume& rec, const Volume& ref) {
    const MetricsReport r = evaluate_metrics(m.name, rec, ref, &mask);
    m.rmse.push_back(r.rmse);
    m.ssim.push_back(r.ssim);
  };
  MethodScore node{"node"}, fbp_hann{"fbp-hann"}, fbp_rl{"fbp-ram-lak"}, sirt_s{"sirt"};
  const std::vector<double> mus = {0.003, 0.01, 0.03, 0.1};
  std::vector<MethodScore> tvs;
  for (double mu : mus) tvs.push_back({"tv mu=" + fmt("%g", mu)});
  for (const auto& s : test_set) {
    score(node, reconstruct_node(s.sinogram, grid, tr.best.params, tr.best.gamma, ode, tc.window).solve.x_end,
          s.target);
    score(fbp_hann, fbp_fan(s.sinogram, grid, FilterWindow::hann), s.target);
    score(fbp_rl, fbp_fan(s.sinogram, grid, FilterWindow::ram_lak), s.target);
    IterConfig sc;
    sc.n_iters = 200;
    score(sirt_s, sirt(s.sinogram, grid, sc, {nullptr, nullptr, false}).volume, s.target);
    for (std::size_t k = 0; k < mus.size(); ++k) {
      IterConfig c;
      c.n_iters = 150;
      c.tv_weight = mus[k];
      score(tvs[k], tv_reconstruct(s.sinogram, grid, c, {nullptr, nullptr, false}).volume, s.target);
    }
  }
  // Baselines get their best variant on each metric separately.
  std::vector<const MethodScore*> baselines = {&fbp_hann, &fbp_rl, &sirt_s};
  for (const auto& m : tvs) baselines.push_back(&m);
  const MethodScore* best_rmse = baselines.front();
  const MethodScore* best_ssim = baselines.front();
  for (const auto* m : baselines) {
    if (m->mean_rmse() < best_rmse->mean_rmse()) best_rmse = m;
    if (m->mean_ssim() > best_ssim->mean_ssim()) best_ssim = m;
  }
  const double t = seconds_since(t0);
  std::printf("  [9] trained %zu epochs in %.0f s, selected epoch %zu, gamma %.4f\n", tc.epochs,
              t_train, tr.best.epoch, tr.best.gamma);
  std::vector<const MethodScore*> all = {&node};
  all.insert(all.end(), baselines.begin(), baselines.end());
  for (const auto* m : all) {
    std::printf("  %-14s rmse %s %s %s (mean %s)  ssim %.4f %.4f %.4f (mean %.4f)\n", m->name.c_str(),
                sci(m->rmse[0]).c_str(), sci(m->rmse[1]).c_str(), sci(m->rmse[2]).c_str(),
                sci(m->mean_rmse()).c_str(), m->ssim[0], m->ssim[1], m->ssim[2], m->mean_ssim());
  }
  std::size_t per_sample_wins = 0;
  for (std::size_t i = 0; i < test_set.size(); ++i) {
    bool win = true;
    for (const auto* m : baselines) win = win && node.rmse[i] < m->rmse[i] && node.ssim[i] > m->ssim[i];
    per_sample_wins += win;
  }
  const bool ok = node.mean_rmse() < best_rmse->mean_rmse() && node.mean_ssim() > best_ssim->mean_ssim() && t < 1800.0;
  return {ok, "mean RMSE node " + sci(node.mean_rmse()) + " vs best baseline " + sci(best_rmse->mean_rmse()) + " (" +
                  best_rmse->name + "), mean SSIM node " + fmt("%.4f", node.mean_ssim()) + " vs " +
                  fmt("%.4f", best_ssim->mean_ssim()) + " (" + best_ssim->name + "); node best on both metrics for " +
                  std::to_string(per_sample_wins) + "/3 phantoms individually; " + fmt("%.0f s", t) +
                  " (budget 1800 s)"};
}

// ---------------------------------------------------------------------------

Outcome metric_consistency() {
  const auto grid = VolumeGrid::make_2d(32, 32, 1.0);
  PhantomSpec spec;
  spec.grid = grid;
  const Volume a = make_phantom(spec);
  Volume b = a;
  const auto noise = testing::random_values(b.size(), 3, -0.005, 0.005);
  for (std::size_t i = 0; i < b.size(); ++i) b[i] += noise[i];
  const double range = 0.06;
  const double p = psnr(b, a, nullptr, range);
  const bool psnr_ok = p == 20.0 * std::log10(range / rmse(b, a));
  const bool ssim_ok = ssim(a, a, nullptr, range) == 1.0 && ssim(b, b, nullptr, range) == 1.0;
  const auto g2 = VolumeGrid::make_2d(2, 1, 1.0);
  const double hand = rmse(Volume(g2, std::vector<double>{0.0, 0.0}), Volume(g2, std::vector<double>{0.003, 0.005}));
  const bool hand_ok = std::abs(hand - 0.0041231056256176604) < 1e-12;
  return {psnr_ok && ssim_ok && hand_ok, std::string("psnr identity ") + (psnr_ok ? "exact" : "violated") +
                                             ", ssim(a,a) " + (ssim_ok ? "= 1" : "!= 1") + ", rmse hand value " +
                                             fmt("%.13f", hand) + " (expected 0.0041231056256)"};
}

// ---------------------------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(NODECT_CLI_PATH) + " --threads 1 " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// Wall-clock fields are the only content allowed to differ between runs.
std::string normalized(const fs::path& p) {
  const std::string raw = slurp(p);
  if (p.extension() != ".json") return raw;
  json j = json::parse(raw);
  j.erase("runtime_seconds");
  return j.dump();
}

Outcome cli_determinism() {
  const fs::path root = testing::scratch_dir("acceptance_cli");
  auto write = [&](const std::string& name, const json& j) { std::ofstream(root / name) << j.dump(2); };
  auto fan_cfg = [](std::uint64_t seed) {
    return json{{"phantom", {{"kind", "disk_set"}, {"shape", {24, 24}}, {"voxel_size", 0.5}, {"seed", seed}}},
                {"geometry",
                 {{"type", "fan"},
                  {"n_angles", 20},
                  {"angular_range", {0, 360}},
                  {"source_distance", 30.0},
                  {"detector_distance", 15.0},
                  {"n_detectors", 36},
                  {"detector_pixel_size", 0.75}}},
                {"noise", {{"kind", "gaussian"}, {"sigma", 0.003}, {"seed", seed + 7}}}};
  };
  for (int i = 0; i < 3; ++i) write("fan" + std::to_string(i) + ".json", fan_cfg(10 + i));
  write("cone.json", json{{"phantom", {{"kind", "walnut_like_3d"}, {"shape", {16, 16, 16}}, {"voxel_size", 0.5}, {"seed", 3}}},
                          {"geometry",
                           {{"type", "cone"},
                            {"n_angles", 24},
                            {"angular_range", {0, 360}},
                            {"source_distance", 40.0},
                            {"detector_distance", 20.0},
                            {"detector_rows", 20},
                            {"detector_cols", 20},
                            {"detector_pixel_size", 0.75}}},
                          {"noise", {{"kind", "poisson"}, {"incident_photons", 1e5}, {"seed", 9}}}});
  write("train.json", json{{"train_samples", {"../fan0/manifest.json", "../fan1/manifest.json"}},
                           {"val_samples", {"../fan2/manifest.json"}},
                           {"arch", {{"base_channels", 2}}},
                           {"ode", {{"t_end", 1.0}, {"step_size", 0.25}}},
                           {"train", {{"epochs", 2}, {"seed", 5}}}});

  // Inputs shared by both runs: simulated once, outside the compared trees.
  std::vector<std::string> failures;
  auto must = [&](const std::string& args, const fs::path& log) {
    if (run_cli(args, log) != 0) failures.push_back("'" + args + "' failed: " + slurp(log));
  };
  for (int i = 0; i < 3; ++i) {
    must("simulate --config " + (root / ("fan" + std::to_string(i) + ".json")).string() + " --out " +
             (root / ("fan" + std::to_string(i))).string(),
         root / "log");
  }
  must("simulate --config " + (root / "cone.json").string() + " --out " + (root / "cone").string(), root / "log");
  const std::string fs0 = (root / "fan0" / "sinogram.cts").string(), fp0 = (root / "fan0" / "phantom.ctv").string();
  const std::string cs = (root / "cone" / "sinogram.cts").string(), cp = (root / "cone" / "phantom.ctv").string();

  auto run_all = [&](const fs::path& out) {
    fs::create_directories(out);
    const fs::path log = out / "cli.log";
    must("simulate --config " + (root / "fan0.json").string() + " --out " + (out / "sim_fan").string(), log);
    must("simulate --config " + (root / "cone.json").string() + " --out " + (out / "sim_cone").string(), log);
    const std::string rec = " --sinogram " + fs0 + " --reference " + fp0 + " --out " + (out / "rec").string();
    must("reconstruct --method fbp --slices" + rec, log);
    must("reconstruct --method sirt --iters 40 --log" + rec, log);
    must("reconstruct --method tv --iters 40 --tv-weight 0.01 --log" + rec, log);
    must("reconstruct --method node --untrained --gamma 0.05 --seed 3 --log" + rec, log);
    must("reconstruct --method fdk --slices --sinogram " + cs + " --reference " + cp + " --out " +
             (out / "rec3d").string(),
         log);
    // Training config refers to the shared samples relative to its own directory.
    fs::create_directories(out / "cfg");
    fs::copy_file(root / "train.json", out / "cfg" / "train.json", fs::copy_options::overwrite_existing);
    for (int i = 0; i < 3; ++i) {
      const std::string d = "fan" + std::to_string(i);
      if (!fs::exists(out / d)) fs::create_directory_symlink(root / d, out / d);
    }
    must("train --config " + (out / "cfg" / "train.json").string() + " --out " + (out / "train").string(), log);
    must("train --config " + (out / "cfg" / "train.json").string() + " --out " + (out / "train_resumed").string() +
             " --resume " + (out / "train" / "last.nprm").string(),
         log);
    must("reconstruct --method node --checkpoint " + (out / "train" / "best.nprm").string() + rec, log);
    must("eval --recon " + (out / "rec" / "sirt.ctv").string() + " --reference " + fp0 + " --sinogram " + fs0 +
             " --label sirt --out " + (out / "eval").string(),
         log);
  };
  const fs::path a = root / "run_a", b = root / "run_b";
  run_all(a);
  run_all(b);

  std::size_t compared = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file() || e.is_symlink()) continue;
    const fs::path rel = fs::relative(e.path(), a);
    if (rel.begin()->string().rfind("fan", 0) == 0 || rel.filename() == "cli.log") continue;
    const fs::path other = b / rel;
    // Manifests name their own output tree; compare them with that prefix removed.
    std::string x = normalized(e.path()), y = fs::exists(other) ? normalized(other) : std::string("<missing>");
    for (auto* s : {&x, &y}) {
      for (const std::string& prefix : {a.string(), b.string()}) {
        for (std::size_t pos; (pos = s->find(prefix)) != std::string::npos;) s->replace(pos, prefix.size(), "<run>");
      }
    }
    ++compared;
    if (x != y) failures.push_back(rel.string() + " differs");
  }
  std::string detail = std::to_string(compared) + " output files compared across two runs of simulate, reconstruct "
                       "(fbp, fdk, sirt, tv, node), train, train --resume and eval";
  for (const auto& f : failures) detail += "; " + f.substr(0, 300);
  return {failures.empty() && compared > 20, detail};
}

}  // namespace

// Optional arguments select criteria by number; all run by default.
int main(int argc, char** argv) {
  set_num_threads(1);
  set_log_sink([](LogLevel, const std::string&) {});
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"adjoint operator test", adjoint_operator},
      {"dense-matrix equivalence", dense_equivalence},
      {"RK4 order", rk4_order},
      {"evaluation count", evaluation_count},
      {"adjoint-method gradient correctness", adjoint_gradient},
      {"memory independence of step count", memory_independence},
      {"zero-init identity", zero_init_identity},
      {"baseline sanity", baseline_sanity},
      {"method ordering at desk scale", method_ordering},
      {"metric self-consistency", metric_consistency},
      {"determinism", cli_determinism},
  };
  std::vector<bool> selected(criteria.size(), argc == 1);
  for (int k = 1; k < argc; ++k) {
    const std::size_t n = std::strtoul(argv[k], nullptr, 10);
    if (n >= 1 && n <= criteria.size()) selected[n - 1] = true;
  }
  std::size_t failed = 0, ran = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!selected[i]) continue;
    ++ran;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s [%zu] %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%zu/%zu criteria passed\n", ran - failed, ran);
  return failed == 0 ? 0 : 1;
}
