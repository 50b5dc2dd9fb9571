#include "nodect/training.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "binary_io.hpp"
#include "nodect/errors.hpp"
#include "nodect/log.hpp"

namespace nodect {

namespace {

void check_mask(const Volume& pred, const Volume& target, const Volume& mask) {
  if (!pred.same_shape(target) || !pred.same_shape(mask)) throw InvalidArgument("loss inputs have different shapes");
}

double mask_weight(const Volume& mask) {
  double n = 0.0;
  for (double m : mask.values()) n += m != 0.0 ? 1.0 : 0.0;
  if (n == 0.0) throw InvalidArgument("FOV mask is empty");
  return n;
}

OdeConfig half_step(OdeConfig c) {
  c.step_size *= 0.5;
  return c;
}

std::vector<double> pack(const NetParams& p, double gamma) {
  std::vector<double> v = p.values;
  v.push_back(gamma);
  return v;
}

}  // namespace

Volume fov_mask(const VolumeGrid& grid, const Geometry& geom) {
  const std::size_t n_lat = std::min(grid.shape[0], grid.shape[1]);
  const double grid_radius = 0.5 * static_cast<double>(n_lat - 1) * grid.voxel_size;
  const double radius = std::min(grid_radius, fov_radius(geom));
  Volume mask(grid);
  for (std::size_t iz = 0; iz < grid.shape[2]; ++iz) {
    for (std::size_t iy = 0; iy < grid.shape[1]; ++iy) {
      for (std::size_t ix = 0; ix < grid.shape[0]; ++ix) {
        // Distance to the rotation axis (the z axis through the isocenter).
        const double x = grid.center(0, ix), y = grid.center(1, iy);
        if (std::hypot(x, y) < radius) mask.at(ix, iy, iz) = 1.0;
      }
    }
  }
  return mask;
}

double l1_fov_loss(const Volume& pred, const Volume& target, const Volume& mask) {
  check_mask(pred, target, mask);
  const double n = mask_weight(mask);
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (mask[i] != 0.0) acc += std::abs(pred[i] - target[i]);
  }
  return acc / n;
}

Volume l1_fov_loss_gradient(const Volume& pred, const Volume& target, const Volume& mask) {
  check_mask(pred, target, mask);
  const double inv = 1.0 / mask_weight(mask);
  Volume g(pred.grid());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (mask[i] == 0.0) continue;
    const double d = pred[i] - target[i];
    g[i] = d > 0.0 ? inv : (d < 0.0 ? -inv : 0.0);
  }
  return g;
}

void adam_step(std::vector<double>& params, const std::vector<double>& grads, AdamState& state,
               const AdamConfig& cfg, std::size_t split, double lr_head, double lr_tail) {
  const std::size_t n = params.size();
  if (grads.size() != n || state.m.size() != n || state.v.size() != n) {
    throw InvalidArgument("adam_step: parameter, gradient and state lengths differ");
  }
  ++state.t;
  const double t = static_cast<double>(state.t);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < n; ++i) {
    const double g = grads[i];
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    const double lr = i < split ? lr_head : lr_tail;
    params[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
  }
}

double clip_global_norm(std::vector<double>& grads, double max_norm) {
  const double norm = norm2(grads);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (double& g : grads) g *= s;
  }
  return norm;
}

void TrainConfig::validate() const {
  if (batch_size != 1) throw InvalidArgument("batch_size must be 1");
  if (!(lr_net > 0.0)) throw InvalidArgument("lr_net must be > 0");
  if (!(lr_gamma > 0.0)) throw InvalidArgument("lr_gamma must be > 0");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0)) throw InvalidArgument("adam beta1 must be in [0, 1)");
  if (!(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) throw InvalidArgument("adam beta2 must be in [0, 1)");
  if (!(adam.eps > 0.0)) throw InvalidArgument("adam eps must be > 0");
  if (!(clip_norm > 0.0)) throw InvalidArgument("clip_norm must be > 0");
  if (!std::isfinite(gamma_init)) throw InvalidArgument("gamma_init must be finite");
  if (!(max_diverged_fraction >= 0.0 && max_diverged_fraction <= 1.0)) {
    throw InvalidArgument("max_diverged_fraction must be in [0, 1]");
  }
}

// ---------------------------------------------------------------------------

SampleGradient loss_and_gradient(const Sample& s, const Volume& x0, const NetParams& params, double gamma,
                                 const OdeConfig& ode, const Volume& mask) {
  const ReconstructionDynamics dyn(s.sinogram, x0.grid(), params, gamma, ode);
  const SolveResult fwd = rk4_solve([&](const Volume& x) { return dyn.evaluate(x); }, x0, ode);
  SampleGradient out;
  out.loss = l1_fov_loss(fwd.x_end, s.target, mask);
  const Volume dl = l1_fov_loss_gradient(fwd.x_end, s.target, mask);
  AdjointResult adj = adjoint_backward(dyn, fwd, dl, ode);
  out.grad_params = std::move(adj.grad_params);
  out.grad_gamma = adj.grad_gamma;
  return out;
}

double sample_loss(const Sample& s, const Volume& x0, const NetParams& params, double gamma, const OdeConfig& ode,
                   const Volume& mask) {
  const ReconstructionDynamics dyn(s.sinogram, x0.grid(), params, gamma, ode);
  const SolveResult fwd = rk4_solve([&](const Volume& x) { return dyn.evaluate(x); }, x0, ode);
  return l1_fov_loss(fwd.x_end, s.target, mask);
}

namespace {

struct Prepared {
  const Sample* sample;
  Volume x0;
  Volume mask;
};

std::vector<Prepared> prepare(const std::vector<Sample>& set, FilterWindow window) {
  std::vector<Prepared> out;
  out.reserve(set.size());
  for (const auto& s : set) {
    const VolumeGrid& grid = s.target.grid();
    out.push_back({&s, analytic_reconstruct(s.sinogram, grid, window), fov_mask(grid, s.sinogram.geometry())});
  }
  return out;
}

// Mean validation loss; diverged samples are retried at half step, then left out.
double validate_set(const std::vector<Prepared>& set, const NetParams& params, double gamma, const OdeConfig& ode,
                    EpochRecord* rec) {
  double acc = 0.0;
  std::size_t n = 0;
  for (const auto& p : set) {
    try {
      acc += sample_loss(*p.sample, p.x0, params, gamma, ode, p.mask);
      ++n;
      continue;
    } catch (const DivergenceError& e) {
      log_warning(std::string("validation solve diverged, retrying at half step: ") + e.what());
    }
    if (rec != nullptr) ++rec->retried;
    try {
      acc += sample_loss(*p.sample, p.x0, params, gamma, half_step(ode), p.mask);
      ++n;
    } catch (const DivergenceError& e) {
      log_warning(std::string("validation sample skipped: ") + e.what());
      if (rec != nullptr) ++rec->skipped;
    }
  }
  return n == 0 ? std::numeric_limits<double>::infinity() : acc / static_cast<double>(n);
}

void persist(const TrainConfig& cfg, const TrainResult& res) {
  if (cfg.checkpoint_dir.empty()) return;
  namespace fs = std::filesystem;
  fs::create_directories(cfg.checkpoint_dir);
  const fs::path dir(cfg.checkpoint_dir);
  save_checkpoint((dir / "best.nprm").string(), res.best);
  save_checkpoint((dir / "last.nprm").string(), res.last);
  write_history((dir / "history.csv").string(), res.history);
}

}  // namespace

TrainResult train(const std::vector<Sample>& train_set, const std::vector<Sample>& val_set, const NetArch& arch,
                  const OdeConfig& ode, const TrainConfig& cfg, const Checkpoint* resume) {
  cfg.validate();
  arch.validate();
  ode.steps();
  if (train_set.empty()) throw InvalidArgument("training set is empty");
  if (val_set.empty()) throw InvalidArgument("validation set is empty");

  const auto train_prep = prepare(train_set, cfg.window);
  const auto val_prep = prepare(val_set, cfg.window);

  TrainResult res;
  NetParams params = resume != nullptr ? resume->params : init_params(arch, cfg.seed);
  if (!(params.arch == arch)) throw InvalidArgument("resume checkpoint architecture differs from the configured one");
  const std::size_t P = params.values.size();
  double gamma = resume != nullptr ? resume->gamma : cfg.gamma_init;
  AdamState adam = resume != nullptr ? resume->adam : AdamState::zeros(P + 1);
  if (adam.m.size() != P + 1 || adam.v.size() != P + 1) throw InvalidArgument("resume Adam state has the wrong size");
  const std::size_t first_epoch = resume != nullptr ? resume->epoch + 1 : 1;

  res.initial_val_loss = validate_set(val_prep, params, gamma, ode, nullptr);
  log_info("initial validation loss " + std::to_string(res.initial_val_loss));
  res.best = Checkpoint{params, gamma, first_epoch - 1, res.initial_val_loss, adam};
  if (resume != nullptr) res.best = *resume;
  bool have_best = resume != nullptr;

  // The shuffle stream depends only on the seed and the epoch number, so a
  // resumed run visits samples in the same order as an uninterrupted one.
  std::vector<std::size_t> order(train_prep.size());
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    const std::size_t epoch = first_epoch + e;
    std::mt19937_64 rng(cfg.seed ^ (0x9E3779B97F4A7C15ull * epoch));
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);

    EpochRecord rec;
    rec.epoch = epoch;
    double loss_acc = 0.0;
    std::size_t used = 0;
    for (std::size_t idx : order) {
      const auto& s = train_prep[idx];
      std::optional<SampleGradient> g;
      try {
        g = loss_and_gradient(*s.sample, s.x0, params, gamma, ode, s.mask);
      } catch (const DivergenceError& err) {
        log_warning(std::string("training solve diverged, retrying at half step: ") + err.what());
        ++rec.retried;
        try {
          g = loss_and_gradient(*s.sample, s.x0, params, gamma, half_step(ode), s.mask);
        } catch (const DivergenceError& err2) {
          log_warning(std::string("training sample skipped: ") + err2.what());
          ++rec.skipped;
          if (static_cast<double>(rec.skipped) > cfg.max_diverged_fraction * static_cast<double>(order.size())) {
            throw TrainingError("more than " + std::to_string(cfg.max_diverged_fraction * 100.0) +
                                "% of epoch " + std::to_string(epoch) + " diverged");
          }
          continue;
        }
      }
      std::vector<double> grads = std::move(g->grad_params);
      grads.push_back(g->grad_gamma);
      const double norm = clip_global_norm(grads, cfg.clip_norm);
      if (norm > cfg.clip_norm) {
        ++rec.clipped;
        log_info("gradient norm " + std::to_string(norm) + " clipped to " + std::to_string(cfg.clip_norm));
      }
      std::vector<double> flat = pack(params, gamma);
      adam_step(flat, grads, adam, cfg.adam, P, cfg.lr_net, cfg.lr_gamma);
      gamma = flat.back();
      flat.pop_back();
      params.values = std::move(flat);
      ++res.updates;
      loss_acc += g->loss;
      ++used;
    }
    rec.mean_train_loss = used == 0 ? std::numeric_limits<double>::quiet_NaN() : loss_acc / static_cast<double>(used);
    rec.mean_val_loss = validate_set(val_prep, params, gamma, ode, &rec);
    rec.gamma = gamma;
    rec.adam_step = adam.t;
    res.history.push_back(rec);
    log_info("epoch " + std::to_string(epoch) + " train " + std::to_string(rec.mean_train_loss) + " val " +
             std::to_string(rec.mean_val_loss) + " gamma " + std::to_string(gamma));

    res.last = Checkpoint{params, gamma, epoch, rec.mean_val_loss, adam};
    if (!have_best || rec.mean_val_loss < res.best.val_loss) {
      res.best = res.last;
      have_best = true;
    }
    persist(cfg, res);
  }
  if (cfg.epochs == 0) res.last = res.best;
  return res;
}

// ---------------------------------------------------------------------------

void write_history(const std::string& path, const std::vector<EpochRecord>& history) {
  std::ofstream out(path);
  if (!out) throw InvalidArgument("cannot write history '" + path + "'");
  out << "epoch,mean_train_loss,mean_val_loss,gamma,adam_step,clipped,retried,skipped\n" << std::setprecision(17);
  for (const auto& r : history) {
    out << r.epoch << ',' << r.mean_train_loss << ',' << r.mean_val_loss << ',' << r.gamma << ',' << r.adam_step
        << ',' << r.clipped << ',' << r.retried << ',' << r.skipped << '\n';
  }
}

std::vector<EpochRecord> read_history(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open history '" + path + "'");
  std::string line;
  std::getline(in, line);
  std::vector<EpochRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string f[8];
    for (auto& s : f) std::getline(ss, s, ',');
    EpochRecord r;
    r.epoch = std::stoull(f[0]);
    r.mean_train_loss = std::stod(f[1]);
    r.mean_val_loss = std::stod(f[2]);
    r.gamma = std::stod(f[3]);
    r.adam_step = std::stoull(f[4]);
    r.clipped = std::stoull(f[5]);
    r.retried = std::stoull(f[6]);
    r.skipped = std::stoull(f[7]);
    out.push_back(r);
  }
  return out;
}

void save_checkpoint(const std::string& path, const Checkpoint& c, const std::string& extra) {
  save_params(path, c.params);
  nlohmann::ordered_json side;
  side["gamma"] = c.gamma;
  side["epoch"] = c.epoch;
  side["val_loss"] = c.val_loss;
  side["adam_step"] = c.adam.t;
  side["param_count"] = c.params.values.size();
  if (!extra.empty()) {
    const auto e = nlohmann::json::parse(extra);
    for (auto it = e.begin(); it != e.end(); ++it) side[it.key()] = it.value();
  }
  std::ofstream js(path + ".json");
  if (!js) throw InvalidArgument("cannot write checkpoint sidecar '" + path + ".json'");
  js << side.dump(2) << '\n';

  std::ofstream adam(path + ".adam", std::ios::binary);
  if (!adam) throw InvalidArgument("cannot write Adam state '" + path + ".adam'");
  adam.write("ADAM", 4);
  detail::put_le<std::uint64_t>(adam, c.adam.t);
  detail::put_u32(adam, static_cast<std::uint32_t>(c.adam.m.size()));
  for (double v : c.adam.m) detail::put_f64(adam, v);
  for (double v : c.adam.v) detail::put_f64(adam, v);
  // gamma is also kept here at full precision, independent of JSON formatting.
  detail::put_f64(adam, c.gamma);
  detail::put_f64(adam, c.val_loss);
}

Checkpoint load_checkpoint(const std::string& path) {
  Checkpoint c;
  c.params = load_params(path);
  std::ifstream js(path + ".json");
  if (!js) throw InvalidArgument("missing checkpoint sidecar '" + path + ".json'");
  const auto side = nlohmann::json::parse(js);
  c.gamma = side.at("gamma").get<double>();
  c.epoch = side.at("epoch").get<std::size_t>();
  c.val_loss = side.at("val_loss").get<double>();
  std::ifstream adam(path + ".adam", std::ios::binary);
  if (adam) {
    char magic[4];
    if (!adam.read(magic, 4) || std::string(magic, 4) != "ADAM") throw InvalidArgument("bad Adam state file");
    c.adam.t = detail::get_le<std::uint64_t>(adam);
    const std::uint32_t n = detail::get_u32(adam);
    if (n != c.params.values.size() + 1) throw InvalidArgument("Adam state size does not match the parameters");
    c.adam.m.resize(n);
    c.adam.v.resize(n);
    for (double& v : c.adam.m) v = detail::get_f64(adam);
    for (double& v : c.adam.v) v = detail::get_f64(adam);
    c.gamma = detail::get_f64(adam);
    c.val_loss = detail::get_f64(adam);
  } else {
    c.adam = AdamState::zeros(c.params.values.size() + 1);
    c.adam.t = side.value("adam_step", std::uint64_t{0});
  }
  return c;
}

}  // namespace nodect
