#include "nodect/classical.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "nodect/errors.hpp"
#include "nodect/log.hpp"
#include "nodect/projector.hpp"

namespace nodect {

namespace {

double rmse_full(const Volume& a, const Volume& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s / static_cast<double>(a.size()));
}

Volume initial_volume(const VolumeGrid& grid, const IterOptions& opt) {
  if (opt.initial) {
    if (opt.initial->grid().shape != grid.shape) throw InvalidArgument("initial volume does not match the grid");
    return *opt.initial;
  }
  return Volume(grid);
}

// Writes r = A x - p, returns 0.5 ||r||^2.
double residual(const Volume& x, const Sinogram& p, Sinogram& r) {
  forward_project_into(x, r);
  auto rv = r.values();
  const auto pv = p.values();
  for (std::size_t i = 0; i < rv.size(); ++i) rv[i] -= pv[i];
  const double n = norm2(rv);
  return 0.5 * n * n;
}

IterRecord make_record(std::size_t it, double data_term, double tv_term, const Volume& x, const IterOptions& opt) {
  IterRecord rec;
  rec.iteration = it;
  rec.data_term = data_term;
  rec.tv_term = tv_term;
  rec.residual_norm = std::sqrt(2.0 * data_term);
  if (opt.reference) rec.rmse = rmse_full(x, *opt.reference);
  return rec;
}

double default_eps(const Sinogram& p, const VolumeGrid& grid) {
  // Dynamic range of the attenuation is unknown a priori; the mean line integral
  // over the largest chord gives a data-driven scale.
  const auto pv = p.values();
  const double pmax = pv.empty() ? 0.0 : *std::max_element(pv.begin(), pv.end());
  const double extent = static_cast<double>(*std::max_element(grid.shape.begin(), grid.shape.end())) * grid.voxel_size;
  const double range = pmax > 0.0 ? pmax / extent : 1.0;
  return 1e-6 * range;
}

}  // namespace

void IterConfig::validate() const {
  if (n_iters < 1) throw InvalidArgument("n_iters must be >= 1");
  if (!(tv_weight >= 0.0) || !std::isfinite(tv_weight)) throw InvalidArgument("tv_weight (mu) must be >= 0");
  if (!std::isfinite(step_size)) throw InvalidArgument("step_size must be finite");
  if (!std::isfinite(tv_eps)) throw InvalidArgument("tv_eps must be finite");
}

IterativeResult sirt(const Sinogram& p, const VolumeGrid& grid, const IterConfig& cfg, const IterOptions& opt) {
  cfg.validate();
  check_compatible(p.geometry(), grid);
  const Geometry& geom = p.geometry();

  Sinogram row_sums = forward_project(Volume(grid, 1.0), geom);
  Volume col_sums = back_project(Sinogram(geom, 1.0), grid);
  for (double& v : row_sums.values()) v = v == 0.0 ? 1.0 : 1.0 / v;
  for (double& v : col_sums.values()) v = v == 0.0 ? 1.0 : 1.0 / v;

  IterativeResult result{initial_volume(grid, opt), {}, 1.0, 0.0};
  Volume& x = result.volume;
  Sinogram r(geom);
  Volume update(grid);
  for (std::size_t it = 1; it <= cfg.n_iters; ++it) {
    residual(x, p, r);
    auto rv = r.values();
    for (std::size_t i = 0; i < rv.size(); ++i) rv[i] = -rv[i] * row_sums[i];
    back_project_into(r, update);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double v = x[i] + col_sums[i] * update[i];
      x[i] = cfg.nonneg ? std::max(v, 0.0) : v;
    }
    if (opt.record) result.history.push_back(make_record(it, residual(x, p, r), 0.0, x, opt));
  }
  return result;
}

double tv_value(const Volume& x, double eps) {
  const auto& g = x.grid();
  const std::size_t nx = g.shape[0], ny = g.shape[1], nz = g.shape[2];
  const std::size_t sx = 1, sy = nx, sz = nx * ny;
  double total = 0.0;
  for (std::size_t iz = 0; iz < nz; ++iz) {
    for (std::size_t iy = 0; iy < ny; ++iy) {
      for (std::size_t ix = 0; ix < nx; ++ix) {
        const std::size_t i = g.index(ix, iy, iz);
        const double dx = ix + 1 < nx ? x[i + sx] - x[i] : 0.0;
        const double dy = iy + 1 < ny ? x[i + sy] - x[i] : 0.0;
        const double dz = iz + 1 < nz ? x[i + sz] - x[i] : 0.0;
        total += std::sqrt(dx * dx + dy * dy + dz * dz + eps * eps);
      }
    }
  }
  return total;
}

Volume tv_gradient(const Volume& x, double eps) {
  if (!(eps > 0.0)) throw InvalidArgument("tv eps must be > 0");
  const auto& g = x.grid();
  const std::size_t nx = g.shape[0], ny = g.shape[1], nz = g.shape[2];
  const std::size_t sx = 1, sy = nx, sz = nx * ny;
  Volume grad(g);
  // dR/dx_j = sum_i sum_a (d_ia / psi_i) * d(d_ia)/dx_j with d_ia = x[i+e_a] - x[i].
  for (std::size_t iz = 0; iz < nz; ++iz) {
    for (std::size_t iy = 0; iy < ny; ++iy) {
      for (std::size_t ix = 0; ix < nx; ++ix) {
        const std::size_t i = g.index(ix, iy, iz);
        const bool hx = ix + 1 < nx, hy = iy + 1 < ny, hz = iz + 1 < nz;
        const double dx = hx ? x[i + sx] - x[i] : 0.0;
        const double dy = hy ? x[i + sy] - x[i] : 0.0;
        const double dz = hz ? x[i + sz] - x[i] : 0.0;
        const double psi = std::sqrt(dx * dx + dy * dy + dz * dz + eps * eps);
        if (hx) {
          grad[i + sx] += dx / psi;
          grad[i] -= dx / psi;
        }
        if (hy) {
          grad[i + sy] += dy / psi;
          grad[i] -= dy / psi;
        }
        if (hz) {
          grad[i + sz] += dz / psi;
          grad[i] -= dz / psi;
        }
      }
    }
  }
  return grad;
}

double tv_lipschitz(int dims, double eps) { return 4.0 * static_cast<double>(dims) / eps; }

IterativeResult tv_reconstruct(const Sinogram& p, const VolumeGrid& grid, const IterConfig& cfg,
                               const IterOptions& opt) {
  cfg.validate();
  check_compatible(p.geometry(), grid);
  const double eps = cfg.tv_eps > 0.0 ? cfg.tv_eps : default_eps(p, grid);
  const double norm = op_norm_estimate(p.geometry(), grid, 30);
  const double lambda = cfg.step_size > 0.0 ? cfg.step_size : 1.0 / (norm * norm);
  const double bound = 2.0 / (norm * norm + cfg.tv_weight * tv_lipschitz(grid.dims, eps));
  if (lambda >= bound) {
    std::ostringstream msg;
    msg << "TV step size " << lambda << " is not below the stability bound " << bound
        << "; the objective may not decrease monotonically";
    log_warning(msg.str());
  }

  IterativeResult result{initial_volume(grid, opt), {}, lambda, eps};
  Volume& x = result.volume;
  Sinogram r(p.geometry());
  Volume grad(grid);
  const double mu = cfg.tv_weight;
  for (std::size_t it = 1; it <= cfg.n_iters; ++it) {
    residual(x, p, r);
    back_project_into(r, grad);
    if (mu != 0.0) axpy(mu, tv_gradient(x, eps).values(), grad.values());
    axpy(-lambda, grad.values(), x.values());
    if (opt.record) {
      const double data = residual(x, p, r);
      result.history.push_back(make_record(it, data, tv_value(x, eps), x, opt));
    }
  }
  return result;
}

IterativeResult landweber(const Sinogram& p, const VolumeGrid& grid, std::size_t n_iters, double step_size,
                          const IterOptions& opt) {
  IterConfig cfg;
  cfg.n_iters = n_iters;
  cfg.step_size = step_size;
  cfg.validate();
  if (!(step_size > 0.0)) throw InvalidArgument("landweber step size must be > 0");
  check_compatible(p.geometry(), grid);
  IterativeResult result{initial_volume(grid, opt), {}, step_size, 0.0};
  Volume& x = result.volume;
  Sinogram r(p.geometry());
  Volume grad(grid);
  for (std::size_t it = 1; it <= n_iters; ++it) {
    residual(x, p, r);
    back_project_into(r, grad);
    axpy(-step_size, grad.values(), x.values());
    if (opt.record) result.history.push_back(make_record(it, residual(x, p, r), 0.0, x, opt));
  }
  return result;
}

void write_iteration_log(const std::string& path, const std::vector<IterRecord>& history) {
  std::ofstream out(path);
  if (!out) throw InvalidArgument("cannot open log file '" + path + "'");
  out << "iteration,data_term,tv_term,residual_norm,rmse_vs_reference\n";
  out << std::setprecision(17);
  for (const auto& h : history) {
    out << h.iteration << ',' << h.data_term << ',' << h.tv_term << ',' << h.residual_norm << ',';
    if (h.rmse) out << *h.rmse;
    out << '\n';
  }
}

}  // namespace nodect
