#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "nodect/geometry.hpp"
#include "nodect/net.hpp"
#include "nodect/ode.hpp"
#include "nodect/phantoms.hpp"
#include "nodect/training.hpp"

namespace nodect::cli {

using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

/// Bad configuration or usage; maps to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const ordered_json& j);

/// Field access that names the offending key (with its section) in errors.
template <class T>
T get_field(const json& j, const std::string& section, const std::string& key) {
  if (!j.contains(key)) throw ConfigError(section + "." + key + " is required");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(section + "." + key + " has the wrong type");
  }
}

template <class T>
T get_field(const json& j, const std::string& section, const std::string& key, T fallback) {
  if (!j.contains(key)) return fallback;
  return get_field<T>(j, section, key);
}

Geometry parse_geometry(const json& j);
VolumeGrid parse_grid(const json& j, const std::string& section);
PhantomSpec parse_phantom(const json& j);
NoiseModel parse_noise(const json& j);
NetArch parse_arch(const json& j);
OdeConfig parse_ode(const json& j);
TrainConfig parse_train(const json& j);

json arch_to_json(const NetArch& a);
json ode_to_json(const OdeConfig& c);
json train_to_json(const TrainConfig& c);

}  // namespace nodect::cli
