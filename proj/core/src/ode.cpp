#include "nodect/ode.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>

#include "nodect/errors.hpp"
#include "nodect/projector.hpp"

namespace nodect {

namespace {

void check_finite(const Volume& k, std::size_t step, const Volume& x, const char* stage) {
  if (!k.all_finite()) throw DivergenceError(static_cast<int>(step), max_abs(x.values()), stage);
}

// out = x + c * k
void set_stage(Volume& out, const Volume& x, double c, const Volume& k) {
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + c * k[i];
}

// x += h/6 (k1 + 2 k2 + 2 k3 + k4)
template <class V>
void rk4_combine(V& x, double h, const V& k1, const V& k2, const V& k3, const V& k4) {
  const double c = h / 6.0;
  for (std::size_t i = 0; i < k1.size(); ++i) x[i] += c * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
}

}  // namespace

std::size_t OdeConfig::steps() const {
  if (!(t_end > 0.0) || !std::isfinite(t_end)) throw InvalidArgument("ODE t_end must be > 0");
  if (!(step_size > 0.0) || !std::isfinite(step_size)) throw InvalidArgument("ODE step_size must be > 0");
  const double ratio = t_end / step_size;
  const double rounded = std::round(ratio);
  if (rounded < 1.0 || std::abs(ratio - rounded) > 1e-9) {
    throw InvalidArgument("t_end / step_size must be a positive integer");
  }
  return static_cast<std::size_t>(rounded);
}

// ---------------------------------------------------------------------------

ReconstructionDynamics::ReconstructionDynamics(const Sinogram& p, const VolumeGrid& grid, const NetParams& params,
                                               double gamma, const OdeConfig& cfg)
    : p_(p), grid_(grid), params_(params), gamma_(gamma), cfg_(cfg), scratch_(p.geometry()) {
  check_compatible(p.geometry(), grid);
  if (params.arch.dims != static_cast<std::uint32_t>(grid.dims)) {
    throw InvalidArgument("network dims do not match the volume grid");
  }
}

void ReconstructionDynamics::data_gradient(const Volume& x, Volume& out) const {
  forward_project_into(x, scratch_);
  auto r = scratch_.values();
  const auto pv = p_.values();
  for (std::size_t i = 0; i < r.size(); ++i) r[i] -= pv[i];
  back_project_into(scratch_, out);
}

Volume ReconstructionDynamics::evaluate(const Volume& x) const {
  ++evaluations_;
  Volume dc(grid_);
  data_gradient(x, dc);
  const Volume reg = net_forward(params_, x);
  const double lam = cfg_.lambda, mu = cfg_.mu;
  for (std::size_t i = 0; i < dc.size(); ++i) dc[i] = -(lam * (gamma_ * dc[i] + mu * reg[i]));
  return dc;
}

DifferentiableDynamics::Vjp ReconstructionDynamics::evaluate_vjp(const Volume& x, const Volume& a) const {
  ++evaluations_;
  const double lam = cfg_.lambda, mu = cfg_.mu;
  Vjp out;

  // f(x) and <A^T (A x - p), a> for the gamma sensitivity.
  Volume dc(grid_);
  data_gradient(x, dc);
  auto [reg, net] = net_forward_vjp(params_, x, a);
  out.a_dfdgamma = -lam * dot(dc.values(), a.values());
  for (std::size_t i = 0; i < dc.size(); ++i) dc[i] = -(lam * (gamma_ * dc[i] + mu * reg[i]));
  out.f = std::move(dc);

  // (df/dx)^T a = -lambda (gamma A^T A a + mu J_N^T a)
  Volume ata(grid_);
  forward_project_into(a, scratch_);
  back_project_into(scratch_, ata);
  for (std::size_t i = 0; i < ata.size(); ++i) ata[i] = -lam * (gamma_ * ata[i] + mu * net.grad_x[i]);
  out.a_dfdx = std::move(ata);

  out.a_dfdparams = std::move(net.grad_params);
  for (double& g : out.a_dfdparams) g *= -lam * mu;
  return out;
}

Volume dynamics(const Volume& x, const Sinogram& p, const NetParams& params, double gamma, const OdeConfig& cfg) {
  return ReconstructionDynamics(p, x.grid(), params, gamma, cfg).evaluate(x);
}

// ---------------------------------------------------------------------------

SolveResult rk4_solve_t(const TimeRhs& f, const Volume& x0, const OdeConfig& cfg) {
  const std::size_t steps = cfg.steps();
  const double h = cfg.step_size;
  SolveResult res{x0, steps, 0, cfg, {}};
  Volume& x = res.x_end;
  Volume stage(x0.grid());
  for (std::size_t s = 0; s < steps; ++s) {
    const double t = static_cast<double>(s) * h;
    const Volume k1 = f(t, x);
    check_finite(k1, s, x, "k1");
    set_stage(stage, x, 0.5 * h, k1);
    const Volume k2 = f(t + 0.5 * h, stage);
    check_finite(k2, s, x, "k2");
    set_stage(stage, x, 0.5 * h, k2);
    const Volume k3 = f(t + 0.5 * h, stage);
    check_finite(k3, s, x, "k3");
    set_stage(stage, x, h, k3);
    const Volume k4 = f(t + h, stage);
    check_finite(k4, s, x, "k4");
    res.evaluations += 4;
    rk4_combine(x, h, k1, k2, k3, k4);
  }
  return res;
}

SolveResult rk4_solve(const AutonomousRhs& f, const Volume& x0, const OdeConfig& cfg, const StepObserver& observer) {
  const std::size_t steps = cfg.steps();
  const double h = cfg.step_size;
  SolveResult res{x0, steps, 0, cfg, {}};
  Volume& x = res.x_end;
  Volume stage(x0.grid());
  for (std::size_t s = 0; s < steps; ++s) {
    const Volume k1 = f(x);
    check_finite(k1, s, x, "k1");
    if (observer) observer(s, static_cast<double>(s) * h, x, k1);
    set_stage(stage, x, 0.5 * h, k1);
    const Volume k2 = f(stage);
    check_finite(k2, s, x, "k2");
    set_stage(stage, x, 0.5 * h, k2);
    const Volume k3 = f(stage);
    check_finite(k3, s, x, "k3");
    set_stage(stage, x, h, k3);
    const Volume k4 = f(stage);
    check_finite(k4, s, x, "k4");
    res.evaluations += 4;
    rk4_combine(x, h, k1, k2, k3, k4);
  }
  return res;
}

// ---------------------------------------------------------------------------

AdjointResult adjoint_backward(const DifferentiableDynamics& f, const SolveResult& forward, const Volume& dl_dxt,
                               const OdeConfig& cfg) {
  const std::size_t steps = cfg.steps();
  if (!(forward.cfg == cfg) || forward.steps != steps) {
    throw InvalidArgument("adjoint config does not match the forward solve");
  }
  if (!forward.x_end.same_shape(dl_dxt)) throw InvalidArgument("dL/dx(T) shape does not match x(T)");

  const double h = cfg.step_size;
  const std::size_t P = f.param_count();
  AdjointResult res{dl_dxt, std::vector<double>(P, 0.0), 0.0, forward.x_end};
  Volume& a = res.grad_x0;
  Volume& x = res.x0_recovered;
  std::vector<double>& g = res.grad_params;
  double& gg = res.grad_gamma;

  const VolumeGrid& grid = x.grid();
  Volume xs(grid), as(grid);

  // Stage derivatives of the augmented state in backward time (step -h):
  // dx = f, da = -(df/dx)^T a, dg = -(df/dtheta)^T a.
  struct Stage {
    Volume dx, da;
    std::vector<double> dg;
    double dgg = 0.0;
  };
  auto eval = [&](const Volume& xi, const Volume& ai, std::size_t step, const char* name) {
    auto v = f.evaluate_vjp(xi, ai);
    check_finite(v.f, step, xi, name);
    check_finite(v.a_dfdx, step, ai, name);
    Stage st{std::move(v.f), std::move(v.a_dfdx), std::move(v.a_dfdparams), -v.a_dfdgamma};
    for (double& d : st.da.values()) d = -d;
    for (double& d : st.dg) d = -d;
    return st;
  };

  for (std::size_t s = steps; s-- > 0;) {
    const Stage k1 = eval(x, a, s, "adjoint k1");
    set_stage(xs, x, -0.5 * h, k1.dx);
    set_stage(as, a, -0.5 * h, k1.da);
    const Stage k2 = eval(xs, as, s, "adjoint k2");
    set_stage(xs, x, -0.5 * h, k2.dx);
    set_stage(as, a, -0.5 * h, k2.da);
    const Stage k3 = eval(xs, as, s, "adjoint k3");
    set_stage(xs, x, -h, k3.dx);
    set_stage(as, a, -h, k3.da);
    const Stage k4 = eval(xs, as, s, "adjoint k4");

    rk4_combine(x, -h, k1.dx, k2.dx, k3.dx, k4.dx);
    rk4_combine(a, -h, k1.da, k2.da, k3.da, k4.da);
    rk4_combine(g, -h, k1.dg, k2.dg, k3.dg, k4.dg);
    gg += -h / 6.0 * (k1.dgg + 2.0 * k2.dgg + 2.0 * k3.dgg + k4.dgg);
  }
  return res;
}

// ---------------------------------------------------------------------------

NodeReconstruction reconstruct_node(const Sinogram& p, const VolumeGrid& grid, const NetParams& params, double gamma,
                                    const OdeConfig& cfg, FilterWindow window, bool record_trajectory) {
  NodeReconstruction out{analytic_reconstruct(p, grid, window), {}};
  const ReconstructionDynamics dyn(p, grid, params, gamma, cfg);
  std::vector<TrajectoryRecord> log;
  StepObserver observer;
  if (record_trajectory) {
    observer = [&](std::size_t step, double t, const Volume& x, const Volume& k1) {
      Sinogram r = forward_project(x, p.geometry());
      axpy(-1.0, p.values(), r.values());
      log.push_back({step, t, norm2(x.values()), norm2(k1.values()), norm2(r.values())});
    };
  }
  out.solve = rk4_solve([&](const Volume& x) { return dyn.evaluate(x); }, out.initial, cfg, observer);
  if (record_trajectory) {
    const Volume& x = out.solve.x_end;
    Sinogram r = forward_project(x, p.geometry());
    axpy(-1.0, p.values(), r.values());
    log.push_back({out.solve.steps, cfg.t_end, norm2(x.values()), norm2(dyn.evaluate(x).values()),
                   norm2(r.values())});
    out.solve.log = std::move(log);
  }
  return out;
}

void write_trajectory_log(const std::string& path, const std::vector<TrajectoryRecord>& log) {
  std::ofstream out(path);
  if (!out) throw InvalidArgument("cannot open trajectory log '" + path + "'");
  out << "step,t,x_norm,f_norm,residual\n" << std::setprecision(17);
  for (const auto& r : log) out << r.step << ',' << r.t << ',' << r.x_norm << ',' << r.f_norm << ',' << r.residual << '\n';
}

}  // namespace nodect
