#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <limits>

#include "nodect/analytic.hpp"
#include "nodect/errors.hpp"
#include "nodect/ode.hpp"
#include "nodect/phantoms.hpp"
#include "nodect/projector.hpp"
#include "test_support.hpp"

namespace nodect {
namespace {

NetArch one_conv_arch() {
  NetArch a;
  a.n_levels = 1;
  a.convs_per_level = 0;
  a.final_kernel = 3;
  return a;
}

OdeConfig cfg_with(double t_end, double h) {
  OdeConfig c;
  c.t_end = t_end;
  c.step_size = h;
  return c;
}

Volume scalar_volume(double v) { return Volume(VolumeGrid::make_2d(1, 1, 1.0), v); }

struct SmallProblem {
  VolumeGrid grid = VolumeGrid::make_2d(8, 8, 1.0);
  Geometry geom = make_fan_geometry(8, 12, 20.0, 10.0, AngularRange::full_turn(), 1.0);
  Volume truth = testing::random_volume(grid, 1, 0.0, 0.05);
  Sinogram p = simulate_measurement(truth, geom, {NoiseKind::gaussian, 0.01, 1e5}, 2);
  Volume x0 = fbp_fan(p, grid, FilterWindow::ram_lak);
};

// 0.5 ||x(T) - target||^2 after a full solve.
double solve_loss(const SmallProblem& s, const NetParams& params, double gamma, const OdeConfig& cfg) {
  const ReconstructionDynamics dyn(s.p, s.grid, params, gamma, cfg);
  const auto r = rk4_solve([&](const Volume& x) { return dyn.evaluate(x); }, s.x0, cfg);
  double l = 0.0;
  for (std::size_t i = 0; i < r.x_end.size(); ++i) l += 0.5 * std::pow(r.x_end[i] - s.truth[i], 2);
  return l;
}

AdjointResult solve_gradient(const SmallProblem& s, const NetParams& params, double gamma, const OdeConfig& cfg) {
  const ReconstructionDynamics dyn(s.p, s.grid, params, gamma, cfg);
  const auto fwd = rk4_solve([&](const Volume& x) { return dyn.evaluate(x); }, s.x0, cfg);
  Volume dl(s.grid);
  for (std::size_t i = 0; i < dl.size(); ++i) dl[i] = fwd.x_end[i] - s.truth[i];
  return adjoint_backward(dyn, fwd, dl, cfg);
}

TEST(OdeConfig, DefaultsGiveTwentySteps) {
  EXPECT_EQ(OdeConfig{}.steps(), 20u);
  EXPECT_EQ(cfg_with(1.0, 0.005).steps(), 200u);
  EXPECT_THROW(cfg_with(1.0, 0.03).steps(), InvalidArgument);
  EXPECT_THROW(cfg_with(0.0, 0.05).steps(), InvalidArgument);
  EXPECT_THROW(cfg_with(1.0, -0.05).steps(), InvalidArgument);
}

TEST(Dynamics, EquilibriumWhenDataIsConsistent) {
  SmallProblem s;
  const Sinogram p = forward_project(s.truth, s.geom);
  const Volume f = dynamics(s.truth, p, init_params(NetArch{}, 3), 0.5, OdeConfig{});
  EXPECT_EQ(max_abs(f.values()), 0.0);
}

TEST(Dynamics, ZeroInitIsScaledDataGradient) {
  SmallProblem s;
  OdeConfig cfg;
  cfg.lambda = 0.7;
  const double gamma = 0.3;
  const Volume x = testing::random_volume(s.grid, 4);
  const Volume f = dynamics(x, s.p, init_params(NetArch{}, 3), gamma, cfg);
  Sinogram r = forward_project(x, s.geom);
  for (std::size_t i = 0; i < r.size(); ++i) r[i] -= s.p[i];
  const Volume g = back_project(r, s.grid);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(f[i], -cfg.lambda * gamma * g[i], 1e-14 * (1 + std::abs(g[i])));
}

TEST(Dynamics, ZeroGammaZeroInitVanishes) {
  SmallProblem s;
  const Volume f = dynamics(testing::random_volume(s.grid, 5), s.p, init_params(NetArch{}, 1), 0.0, OdeConfig{});
  EXPECT_EQ(max_abs(f.values()), 0.0);
}

TEST(Dynamics, NetworkBranchScaledByLambdaMu) {
  SmallProblem s;
  OdeConfig cfg;
  cfg.lambda = 2.0;
  cfg.mu = 0.25;
  const NetParams params = NetParams::unflatten(NetArch{}, testing::random_values(param_count(NetArch{}), 6, -0.2, 0.2));
  const Volume x = testing::random_volume(s.grid, 7, 0.0, 0.05);
  const Volume f = dynamics(x, s.p, params, 0.0, cfg);
  const Volume n = net_forward(params, x);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(f[i], -0.5 * n[i], 1e-15);
}

TEST(Rk4, ZeroRhsKeepsInitialValue) {
  const Volume x0 = testing::random_volume(VolumeGrid::make_2d(4, 4, 1.0), 1);
  const auto r = rk4_solve([](const Volume& x) { return Volume(x.grid()); }, x0, OdeConfig{});
  for (std::size_t i = 0; i < x0.size(); ++i) EXPECT_EQ(r.x_end[i], x0[i]);
}

TEST(Rk4, ExponentialDecayIsFourthOrder) {
  auto decay = [](const Volume& x) {
    Volume k(x.grid());
    k[0] = -x[0];
    return k;
  };
  const double exact = std::exp(-1.0);
  double errs[3];
  const double hs[3] = {0.1, 0.05, 0.025};
  for (int i = 0; i < 3; ++i) errs[i] = std::abs(rk4_solve(decay, scalar_volume(1.0), cfg_with(1.0, hs[i])).x_end[0] - exact);
  // One classic RK4 step multiplies by the degree-4 Taylor polynomial of e^-h.
  for (int i = 0; i < 3; ++i) {
    const double h = hs[i];
    const double r = 1.0 - h + h * h / 2.0 - h * h * h / 6.0 + h * h * h * h / 24.0;
    const double x_t = std::pow(r, std::round(1.0 / h));
    EXPECT_NEAR(rk4_solve(decay, scalar_volume(1.0), cfg_with(1.0, h)).x_end[0], x_t, 1e-15);
  }
  // Leading global error S h^5 / 120 e^-1 with S = 1 / h.
  EXPECT_NEAR(errs[1], 0.05 * 0.05 * 0.05 * 0.05 / 120.0 * exact, 0.05 * errs[1]);
  EXPECT_NEAR(errs[0] / errs[1], 16.0, 4.0);
  EXPECT_NEAR(errs[1] / errs[2], 16.0, 4.0);
}

TEST(Rk4, CubicQuadratureIsExact) {
  auto cubic = [](double t, const Volume& x) { return Volume(x.grid(), t * t * t); };
  EXPECT_NEAR(rk4_solve_t(cubic, scalar_volume(0.0), OdeConfig{}).x_end[0], 0.25, 1e-14);
}

TEST(Rk4, CountsFourEvaluationsPerStep) {
  SmallProblem s;
  const OdeConfig cfg;
  const NetParams params = init_params(NetArch{}, 0);
  const ReconstructionDynamics dyn(s.p, s.grid, params, 0.01, cfg);
  const auto r = rk4_solve([&](const Volume& x) { return dyn.evaluate(x); }, s.x0, cfg);
  EXPECT_EQ(r.steps, 20u);
  EXPECT_EQ(r.evaluations, 80u);
  EXPECT_EQ(dyn.evaluations(), 80u);
}

TEST(Rk4, NonFiniteStageRaisesDivergence) {
  auto blowup = [](const Volume& x) {
    Volume k(x.grid(), 1.0);
    if (x[0] > 1.2) k[0] = std::numeric_limits<double>::infinity();
    return k;
  };
  try {
    rk4_solve(blowup, scalar_volume(1.0), OdeConfig{});
    FAIL() << "expected divergence";
  } catch (const DivergenceError& e) {
    EXPECT_GE(e.step(), 3);
    EXPECT_LE(e.step(), 5);
    EXPECT_NE(std::string(e.what()).find("step"), std::string::npos);
  }
}

TEST(Rk4, EquilibriumStaysPut) {
  SmallProblem s;
  const Sinogram p = forward_project(s.truth, s.geom);
  const NetParams params = init_params(NetArch{}, 0);
  const ReconstructionDynamics dyn(p, s.grid, params, 0.2, OdeConfig{});
  const auto r = rk4_solve([&](const Volume& x) { return dyn.evaluate(x); }, s.truth, OdeConfig{});
  for (std::size_t i = 0; i < s.truth.size(); ++i) EXPECT_EQ(r.x_end[i], s.truth[i]);
}

TEST(Adjoint, ZeroCotangentGivesZeroGradients) {
  SmallProblem s;
  const OdeConfig cfg;
  const NetParams params = NetParams::unflatten(one_conv_arch(), testing::random_values(10, 3, -0.3, 0.3));
  const ReconstructionDynamics dyn(s.p, s.grid, params, 0.02, cfg);
  const auto fwd = rk4_solve([&](const Volume& x) { return dyn.evaluate(x); }, s.x0, cfg);
  const auto r = adjoint_backward(dyn, fwd, Volume(s.grid), cfg);
  EXPECT_EQ(max_abs(r.grad_x0.values()), 0.0);
  EXPECT_EQ(max_abs(r.grad_params), 0.0);
  EXPECT_EQ(r.grad_gamma, 0.0);
}

TEST(Adjoint, GammaGradientMatchesFiniteDifferences) {
  SmallProblem s;
  const OdeConfig cfg;
  const NetParams params = init_params(NetArch{}, 0);
  const double gamma = 0.01, h = 1e-5;
  const auto r = solve_gradient(s, params, gamma, cfg);
  const double fd = (solve_loss(s, params, gamma + h, cfg) - solve_loss(s, params, gamma - h, cfg)) / (2 * h);
  EXPECT_LT(testing::rel_err(r.grad_gamma, fd), 1e-4) << r.grad_gamma << " vs " << fd;
}

TEST(Adjoint, ParameterGradientMatchesFiniteDifferences) {
  SmallProblem s;
  const OdeConfig cfg;
  NetParams params = NetParams::unflatten(one_conv_arch(), testing::random_values(10, 8, -0.3, 0.3));
  const double gamma = 0.02, h = 1e-4;
  const auto r = solve_gradient(s, params, gamma, cfg);
  for (std::size_t i = 0; i < params.values.size(); ++i) {
    const double v = params.values[i];
    params.values[i] = v + h;
    const double up = solve_loss(s, params, gamma, cfg);
    params.values[i] = v - h;
    const double dn = solve_loss(s, params, gamma, cfg);
    params.values[i] = v;
    EXPECT_LT(testing::rel_err(r.grad_params[i], (up - dn) / (2 * h)), 1e-3) << i;
  }
}

TEST(Adjoint, InitialStateGradientMatchesFiniteDifferences) {
  SmallProblem s;
  const OdeConfig cfg;
  const NetParams params = NetParams::unflatten(one_conv_arch(), testing::random_values(10, 9, -0.3, 0.3));
  const double gamma = 0.02, h = 1e-6;
  const auto r = solve_gradient(s, params, gamma, cfg);
  for (std::size_t i : {0u, 9u, 27u, 36u, 63u}) {
    SmallProblem sp = s, sm = s;
    sp.x0[i] += h;
    sm.x0[i] -= h;
    const double fd = (solve_loss(sp, params, gamma, cfg) - solve_loss(sm, params, gamma, cfg)) / (2 * h);
    EXPECT_LT(testing::rel_err(r.grad_x0[i], fd), 1e-5) << i;
  }
}

TEST(Adjoint, RecoversInitialStateOnStableConfig) {
  SmallProblem s;
  const OdeConfig cfg;
  const NetParams params = NetParams::unflatten(one_conv_arch(), testing::random_values(10, 10, -0.3, 0.3));
  const auto r = solve_gradient(s, params, 0.01, cfg);
  Volume diff = r.x0_recovered;
  axpy(-1.0, s.x0.values(), diff.values());
  EXPECT_LT(norm2(diff.values()) / norm2(s.x0.values()), 1e-3);
}

TEST(Adjoint, RejectsMismatchedConfig) {
  SmallProblem s;
  const NetParams params = init_params(NetArch{}, 0);
  const ReconstructionDynamics dyn(s.p, s.grid, params, 0.01, OdeConfig{});
  const auto fwd = rk4_solve([&](const Volume& x) { return dyn.evaluate(x); }, s.x0, OdeConfig{});
  EXPECT_THROW(adjoint_backward(dyn, fwd, Volume(s.grid), cfg_with(1.0, 0.1)), InvalidArgument);
  EXPECT_THROW(adjoint_backward(dyn, fwd, Volume(VolumeGrid::make_2d(4, 4, 1.0)), OdeConfig{}), InvalidArgument);
}

std::size_t peak_buffers(std::size_t steps) {
  SmallProblem s;
  const OdeConfig cfg = cfg_with(1.0, 1.0 / static_cast<double>(steps));
  const NetParams params = NetParams::unflatten(one_conv_arch(), testing::random_values(10, 11, -0.3, 0.3));
  const ReconstructionDynamics dyn(s.p, s.grid, params, 0.01, cfg);
  Volume dl(s.grid, 1.0);
  const std::size_t base = BufferProbe::live();
  BufferProbe::reset_peak();
  {
    const auto fwd = rk4_solve([&](const Volume& x) { return dyn.evaluate(x); }, s.x0, cfg);
    const auto r = adjoint_backward(dyn, fwd, dl, cfg);
    EXPECT_TRUE(r.grad_x0.all_finite());
  }
  return BufferProbe::peak() - base;
}

TEST(Adjoint, MemoryIndependentOfStepCount) {
  const std::size_t p20 = peak_buffers(20), p200 = peak_buffers(200);
  EXPECT_GT(p20, 0u);
  EXPECT_EQ(p20, p200);
}

TEST(ReconstructNode, ZeroGammaUntrainedReturnsInitializer) {
  SmallProblem s;
  for (auto w : {FilterWindow::ram_lak, FilterWindow::hann}) {
    const auto r = reconstruct_node(s.p, s.grid, init_params(NetArch{}, 0), 0.0, OdeConfig{}, w);
    const Volume fbp = fbp_fan(s.p, s.grid, w);
    for (std::size_t i = 0; i < fbp.size(); ++i) EXPECT_EQ(r.solve.x_end[i], fbp[i]);
  }
}

TEST(ReconstructNode, UntrainedIsGradientFlowThatReducesResidual) {
  const auto grid = VolumeGrid::make_2d(32, 32, 0.5);
  const Geometry geom = make_fan_geometry(15, 48, 50.0, 25.0, AngularRange::full_turn(), 0.75);
  PhantomSpec spec;
  spec.grid = grid;
  spec.seed = 3;
  const Sinogram p = forward_project(make_phantom(spec), geom);
  const OdeConfig cfg;
  const double gamma = 0.02;
  const auto r = reconstruct_node(p, grid, init_params(NetArch{}, 0), gamma, cfg, FilterWindow::ram_lak, true);

  // Independent composition of the same gradient flow.
  auto flow = [&](const Volume& x) {
    Sinogram res = forward_project(x, geom);
    axpy(-1.0, p.values(), res.values());
    Volume g = back_project(res, grid);
    for (double& v : g.values()) v *= -gamma;
    return g;
  };
  const auto ref = rk4_solve(flow, fbp_fan(p, grid, FilterWindow::ram_lak), cfg);
  for (std::size_t i = 0; i < grid.size(); ++i) EXPECT_NEAR(r.solve.x_end[i], ref.x_end[i], 1e-12);

  ASSERT_EQ(r.solve.log.size(), 21u);
  EXPECT_LT(r.solve.log.back().residual, r.solve.log.front().residual);
  for (std::size_t i = 1; i < r.solve.log.size(); ++i) EXPECT_LE(r.solve.log[i].residual, r.solve.log[i - 1].residual);

  const auto dir = testing::scratch_dir("trajectory");
  write_trajectory_log((dir / "t.csv").string(), r.solve.log);
  std::ifstream in(dir / "t.csv");
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "step,t,x_norm,f_norm,residual");
}

}  // namespace
}  // namespace nodect
