#include "config.hpp"

#include <fstream>
#include <sstream>

#include "nodect/errors.hpp"

namespace nodect::cli {

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config file '" + path.string() + "' is not valid JSON: " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const ordered_json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
}

Geometry parse_geometry(const json& j) {
  if (!j.is_object()) throw ConfigError("geometry must be an object");
  try {
    return geometry_from_json(j.dump());
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("geometry: ") + e.what());
  } catch (const json::exception& e) {
    throw ConfigError(std::string("geometry: ") + e.what());
  }
}

VolumeGrid parse_grid(const json& j, const std::string& section) {
  const auto shape = get_field<std::vector<std::size_t>>(j, section, "shape");
  const double vs = get_field<double>(j, section, "voxel_size", 1.0);
  if (!(vs > 0.0)) throw ConfigError(section + ".voxel_size must be > 0");
  for (std::size_t n : shape) {
    if (n == 0) throw ConfigError(section + ".shape entries must be > 0");
  }
  VolumeGrid g;
  if (shape.size() == 2) {
    g = VolumeGrid::make_2d(shape[0], shape[1], vs);
  } else if (shape.size() == 3) {
    g = VolumeGrid::make_3d(shape[0], shape[1], shape[2], vs);
  } else {
    throw ConfigError(section + ".shape must have 2 or 3 entries");
  }
  if (j.contains("origin")) g.origin = get_field<Vec3>(j, section, "origin");
  return g;
}

PhantomSpec parse_phantom(const json& j) {
  PhantomSpec s;
  try {
    s.kind = parse_phantom_kind(get_field<std::string>(j, "phantom", "kind"));
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("phantom.kind: ") + e.what());
  }
  s.grid = parse_grid(j, "phantom");
  s.seed = get_field<std::uint64_t>(j, "phantom", "seed", 0);
  if (j.contains("value_range")) {
    const auto r = get_field<std::vector<double>>(j, "phantom", "value_range");
    if (r.size() != 2 || !(r[1] > r[0])) throw ConfigError("phantom.value_range must be [min, max] with max > min");
    s.value_min = r[0];
    s.value_max = r[1];
  }
  return s;
}

NoiseModel parse_noise(const json& j) {
  NoiseModel n;
  try {
    n.kind = parse_noise_kind(get_field<std::string>(j, "noise", "kind", std::string("none")));
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("noise.kind: ") + e.what());
  }
  n.sigma = get_field<double>(j, "noise", "sigma", 0.0);
  n.incident_photons = get_field<double>(j, "noise", "incident_photons", n.incident_photons);
  if (!(n.sigma >= 0.0)) throw ConfigError("noise.sigma must be >= 0");
  if (!(n.incident_photons > 0.0)) throw ConfigError("noise.incident_photons must be > 0");
  return n;
}

NetArch parse_arch(const json& j) {
  NetArch a;
  a.n_levels = get_field<std::uint32_t>(j, "arch", "n_levels", a.n_levels);
  a.base_channels = get_field<std::uint32_t>(j, "arch", "base_channels", a.base_channels);
  a.kernel_size = get_field<std::uint32_t>(j, "arch", "kernel_size", a.kernel_size);
  a.dims = get_field<std::uint32_t>(j, "arch", "dims", a.dims);
  a.convs_per_level = get_field<std::uint32_t>(j, "arch", "convs_per_level", a.convs_per_level);
  a.final_kernel = get_field<std::uint32_t>(j, "arch", "final_kernel", a.final_kernel);
  a.instance_norm = get_field<bool>(j, "arch", "instance_norm", a.instance_norm);
  a.value_scale = get_field<double>(j, "arch", "value_scale", a.value_scale);
  const auto pad = get_field<std::string>(j, "arch", "padding", std::string("zero"));
  if (pad == "zero") {
    a.padding = nn::Padding::zero;
  } else if (pad == "periodic") {
    a.padding = nn::Padding::periodic;
  } else {
    throw ConfigError("arch.padding must be 'zero' or 'periodic'");
  }
  try {
    a.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("arch: ") + e.what());
  }
  return a;
}

OdeConfig parse_ode(const json& j) {
  OdeConfig c;
  c.t_end = get_field<double>(j, "ode", "t_end", c.t_end);
  c.step_size = get_field<double>(j, "ode", "step_size", c.step_size);
  c.lambda = get_field<double>(j, "ode", "lambda", c.lambda);
  c.mu = get_field<double>(j, "ode", "mu", c.mu);
  try {
    c.steps();
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("ode: ") + e.what());
  }
  return c;
}

TrainConfig parse_train(const json& j) {
  TrainConfig c;
  c.epochs = get_field<std::size_t>(j, "train", "epochs", c.epochs);
  c.batch_size = get_field<std::size_t>(j, "train", "batch_size", c.batch_size);
  c.lr_net = get_field<double>(j, "train", "lr_net", c.lr_net);
  c.lr_gamma = get_field<double>(j, "train", "lr_gamma", c.lr_gamma);
  c.adam.beta1 = get_field<double>(j, "train", "beta1", c.adam.beta1);
  c.adam.beta2 = get_field<double>(j, "train", "beta2", c.adam.beta2);
  c.adam.eps = get_field<double>(j, "train", "adam_eps", c.adam.eps);
  c.gamma_init = get_field<double>(j, "train", "gamma_init", c.gamma_init);
  c.clip_norm = get_field<double>(j, "train", "clip_norm", c.clip_norm);
  c.seed = get_field<std::uint64_t>(j, "train", "seed", c.seed);
  try {
    c.window = parse_window(get_field<std::string>(j, "train", "window", std::string(window_name(c.window))));
    c.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("train: ") + e.what());
  }
  return c;
}

json arch_to_json(const NetArch& a) {
  return {{"n_levels", a.n_levels},
          {"base_channels", a.base_channels},
          {"kernel_size", a.kernel_size},
          {"dims", a.dims},
          {"convs_per_level", a.convs_per_level},
          {"final_kernel", a.final_kernel},
          {"instance_norm", a.instance_norm},
          {"padding", a.padding == nn::Padding::zero ? "zero" : "periodic"},
          {"value_scale", a.value_scale}};
}

json ode_to_json(const OdeConfig& c) {
  return {{"t_end", c.t_end}, {"step_size", c.step_size}, {"lambda", c.lambda}, {"mu", c.mu}, {"steps", c.steps()}};
}

json train_to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},       {"batch_size", c.batch_size}, {"lr_net", c.lr_net},
          {"lr_gamma", c.lr_gamma},   {"beta1", c.adam.beta1},      {"beta2", c.adam.beta2},
          {"adam_eps", c.adam.eps},   {"gamma_init", c.gamma_init}, {"clip_norm", c.clip_norm},
          {"seed", c.seed},           {"window", std::string(window_name(c.window))}};
}

}  // namespace nodect::cli
