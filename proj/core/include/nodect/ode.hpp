#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "nodect/analytic.hpp"
#include "nodect/net.hpp"
#include "nodect/volume.hpp"

namespace nodect {

struct OdeConfig {
  double t_end = 1.0;
  double step_size = 0.05;
  double lambda = 1.0;
  double mu = 1.0;

  /// Number of fixed steps T/h; throws InvalidArgument unless T/h is within
  /// 1e-9 of a positive integer.
  std::size_t steps() const;
  bool operator==(const OdeConfig&) const = default;
};

/// Right-hand side of an autonomous ODE dx/dt = f(x) that can also apply its
/// transposed Jacobians to a cotangent `a`.
class DifferentiableDynamics {
 public:
  virtual ~DifferentiableDynamics() = default;

  virtual Volume evaluate(const Volume& x) const = 0;

  struct Vjp {
    Volume f;                          // f(x), needed to recompute x backward
    Volume a_dfdx;                     // (df/dx)^T a
    std::vector<double> a_dfdparams;   // (df/dtheta)^T a
    double a_dfdgamma = 0.0;           // (df/dgamma)^T a
  };
  virtual Vjp evaluate_vjp(const Volume& x, const Volume& a) const = 0;

  virtual std::size_t param_count() const = 0;
};

/// f(x) = -lambda * (gamma * A^T (A x - p) + mu * N_theta(x)).
/// The time variable never enters; the data-consistency branch has no
/// trainable parameters and gamma scales only that branch.
class ReconstructionDynamics final : public DifferentiableDynamics {
 public:
  ReconstructionDynamics(const Sinogram& p, const VolumeGrid& grid, const NetParams& params, double gamma,
                         const OdeConfig& cfg);

  Volume evaluate(const Volume& x) const override;
  Vjp evaluate_vjp(const Volume& x, const Volume& a) const override;
  std::size_t param_count() const override { return params_.values.size(); }

  /// Number of evaluate/evaluate_vjp calls so far.
  std::size_t evaluations() const { return evaluations_; }
  void reset_evaluations() { evaluations_ = 0; }

 private:
  // A^T (A x - p) into `out`.
  void data_gradient(const Volume& x, Volume& out) const;

  const Sinogram& p_;
  VolumeGrid grid_;
  const NetParams& params_;
  double gamma_;
  OdeConfig cfg_;
  mutable Sinogram scratch_;
  mutable std::size_t evaluations_ = 0;
};

/// Convenience wrapper returning f(x) from ReconstructionDynamics.
Volume dynamics(const Volume& x, const Sinogram& p, const NetParams& params, double gamma, const OdeConfig& cfg);

struct TrajectoryRecord {
  std::size_t step = 0;
  double t = 0.0;
  double x_norm = 0.0;
  double f_norm = 0.0;      // ||f(x)|| at the start of the step
  double residual = -1.0;   // ||A x - p||, negative when not available
};

struct SolveResult {
  Volume x_end;
  std::size_t steps = 0;
  std::size_t evaluations = 0;
  OdeConfig cfg;
  std::vector<TrajectoryRecord> log;
};

using AutonomousRhs = std::function<Volume(const Volume&)>;
using TimeRhs = std::function<Volume(double, const Volume&)>;

/// Optional per-step hook: receives the state at the start of a step plus
/// k1 = f(x). Used to build trajectory logs.
using StepObserver = std::function<void(std::size_t step, double t, const Volume& x, const Volume& k1)>;

/// Classic fixed-step RK4 from t = 0 to cfg.t_end, four right-hand side
/// evaluations per step. Non-finite stages raise DivergenceError.
SolveResult rk4_solve(const AutonomousRhs& f, const Volume& x0, const OdeConfig& cfg,
                      const StepObserver& observer = {});

/// Time-dependent variant, used to verify the quadrature behaviour of the scheme.
SolveResult rk4_solve_t(const TimeRhs& f, const Volume& x0, const OdeConfig& cfg);

struct AdjointResult {
  Volume grad_x0;
  std::vector<double> grad_params;
  double grad_gamma = 0.0;
  /// x(0) recovered by integrating the dynamics backward from x(T).
  Volume x0_recovered;
};

/// Adjoint sensitivity pass: integrates the augmented system
/// (x, a, g_theta, g_gamma) from T back to 0 with the same RK4 step,
/// dx/dt = f, da/dt = -(df/dx)^T a, dg/dt = -(df/dparams)^T a,
/// a(T) = dL/dx(T), g(T) = 0. The working set is a fixed number of
/// volume-sized buffers for any step count.
AdjointResult adjoint_backward(const DifferentiableDynamics& f, const SolveResult& forward, const Volume& dl_dxt,
                               const OdeConfig& cfg);

/// Node reconstruction: x0 = FBP/FDK of p, then the RK4 solve of the dynamics.
struct NodeReconstruction {
  Volume initial;
  SolveResult solve;
};
NodeReconstruction reconstruct_node(const Sinogram& p, const VolumeGrid& grid, const NetParams& params, double gamma,
                                    const OdeConfig& cfg, FilterWindow window = FilterWindow::ram_lak,
                                    bool record_trajectory = false);

/// CSV with header step,t,x_norm,f_norm,residual.
void write_trajectory_log(const std::string& path, const std::vector<TrajectoryRecord>& log);

}  // namespace nodect
