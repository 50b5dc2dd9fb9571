#include "nodect/geometry.hpp"

#include <cmath>
#include <json.hpp>

#include "nodect/errors.hpp"

namespace nodect {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

void require(bool ok, const char* what) {
  if (!ok) throw InvalidArgument(what);
}

void validate_common(std::size_t n_angles, double source_distance, double detector_distance,
                     double pixel_size, const AngularRange& range) {
  require(n_angles >= 1, "n_angles must be >= 1");
  require(std::isfinite(source_distance) && source_distance > 0.0, "source_distance must be > 0");
  require(std::isfinite(detector_distance) && detector_distance >= 0.0, "detector_distance must be >= 0");
  require(std::isfinite(pixel_size) && pixel_size > 0.0, "detector_pixel_size must be > 0");
  require(std::isfinite(range.start) && std::isfinite(range.end) && range.span() > 0.0,
          "angular_range must have end > start");
}

double centered_offset(std::size_t i, std::size_t n, double pitch) {
  return (static_cast<double>(i) - 0.5 * static_cast<double>(n - 1)) * pitch;
}

Vec3 normalized(Vec3 v) {
  const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
  return {v[0] / n, v[1] / n, v[2] / n};
}

}  // namespace

bool AngularRange::is_full_turn() const { return std::abs(span() - kTwoPi) < 1e-12; }

double FanGeometry::angle(std::size_t i) const {
  return angular_range.start + static_cast<double>(i) * angular_increment();
}
double FanGeometry::angular_increment() const {
  return angular_range.span() / static_cast<double>(n_angles);
}
double FanGeometry::detector_offset(std::size_t j) const {
  return centered_offset(j, n_detectors, detector_pixel_size);
}

double ConeGeometry::angle(std::size_t i) const {
  return angular_range.start + static_cast<double>(i) * angular_increment();
}
double ConeGeometry::angular_increment() const {
  return angular_range.span() / static_cast<double>(n_angles);
}
double ConeGeometry::col_offset(std::size_t c) const {
  return centered_offset(c, detector_cols, detector_pixel_size);
}
double ConeGeometry::row_offset(std::size_t r) const {
  return centered_offset(r, detector_rows, detector_pixel_size);
}
double ConeGeometry::cone_angle() const {
  const double half_height = 0.5 * static_cast<double>(detector_rows) * detector_pixel_size;
  return 2.0 * std::atan(half_height / (source_distance + detector_distance));
}

VolumeGrid VolumeGrid::make_2d(std::size_t nx, std::size_t ny, double voxel_size) {
  require(nx >= 1 && ny >= 1, "grid shape entries must be >= 1");
  require(std::isfinite(voxel_size) && voxel_size > 0.0, "voxel_size must be > 0");
  VolumeGrid g;
  g.dims = 2;
  g.shape = {nx, ny, 1};
  g.voxel_size = voxel_size;
  return g;
}

VolumeGrid VolumeGrid::make_3d(std::size_t nx, std::size_t ny, std::size_t nz, double voxel_size) {
  require(nx >= 1 && ny >= 1 && nz >= 1, "grid shape entries must be >= 1");
  require(std::isfinite(voxel_size) && voxel_size > 0.0, "voxel_size must be > 0");
  VolumeGrid g;
  g.dims = 3;
  g.shape = {nx, ny, nz};
  g.voxel_size = voxel_size;
  return g;
}

FanGeometry make_fan_geometry(std::size_t n_angles, std::size_t n_detectors, double source_distance,
                              double detector_distance, AngularRange range, double detector_pixel_size) {
  validate_common(n_angles, source_distance, detector_distance, detector_pixel_size, range);
  require(n_detectors >= 1, "n_detectors must be >= 1");
  FanGeometry g;
  g.n_angles = n_angles;
  g.angular_range = range;
  g.source_distance = source_distance;
  g.detector_distance = detector_distance;
  g.n_detectors = n_detectors;
  g.detector_pixel_size = detector_pixel_size;
  return g;
}

ConeGeometry make_cone_geometry(std::size_t n_angles, std::size_t detector_rows, std::size_t detector_cols,
                                double source_distance, double detector_distance, double detector_pixel_size,
                                AngularRange range, double trajectory_height) {
  validate_common(n_angles, source_distance, detector_distance, detector_pixel_size, range);
  require(detector_rows >= 1 && detector_cols >= 1, "detector_rows and detector_cols must be >= 1");
  require(std::isfinite(trajectory_height), "trajectory_height must be finite");
  ConeGeometry g;
  g.n_angles = n_angles;
  g.angular_range = range;
  g.source_distance = source_distance;
  g.detector_distance = detector_distance;
  g.detector_rows = detector_rows;
  g.detector_cols = detector_cols;
  g.detector_pixel_size = detector_pixel_size;
  g.trajectory_height = trajectory_height;
  if (!(g.cone_angle() < 0.5 * std::numbers::pi)) {
    throw InvalidGeometry("cone angle " + std::to_string(g.cone_angle() / kDeg) + " deg is not below 90 deg");
  }
  return g;
}

Vec3 source_position(const FanGeometry& g, std::size_t angle_index) {
  const double b = g.angle(angle_index);
  return {g.source_distance * std::cos(b), g.source_distance * std::sin(b), 0.0};
}

Vec3 source_position(const ConeGeometry& g, std::size_t angle_index) {
  const double b = g.angle(angle_index);
  return {g.source_distance * std::cos(b), g.source_distance * std::sin(b), g.trajectory_height};
}

Ray ray_for(const FanGeometry& g, std::size_t angle_index, std::size_t detector_index) {
  if (angle_index >= g.n_angles) throw IndexError("angle index out of range");
  if (detector_index >= g.n_detectors) throw IndexError("detector index out of range");
  const double b = g.angle(angle_index);
  const double c = std::cos(b), s = std::sin(b);
  const double u = g.detector_offset(detector_index);
  const Vec3 src{g.source_distance * c, g.source_distance * s, 0.0};
  const Vec3 pixel{-g.detector_distance * c - u * s, -g.detector_distance * s + u * c, 0.0};
  Ray r;
  r.origin = src;
  r.direction = normalized({pixel[0] - src[0], pixel[1] - src[1], 0.0});
  r.angle_index = angle_index;
  r.detector_col = detector_index;
  return r;
}

Ray ray_for(const ConeGeometry& g, std::size_t angle_index, std::size_t row, std::size_t col) {
  if (angle_index >= g.n_angles) throw IndexError("angle index out of range");
  if (row >= g.detector_rows || col >= g.detector_cols) throw IndexError("detector index out of range");
  const double b = g.angle(angle_index);
  const double c = std::cos(b), s = std::sin(b);
  const double u = g.col_offset(col);
  const double v = g.row_offset(row);
  const Vec3 src{g.source_distance * c, g.source_distance * s, g.trajectory_height};
  const Vec3 pixel{-g.detector_distance * c - u * s, -g.detector_distance * s + u * c, g.trajectory_height + v};
  Ray r;
  r.origin = src;
  r.direction = normalized({pixel[0] - src[0], pixel[1] - src[1], pixel[2] - src[2]});
  r.angle_index = angle_index;
  r.detector_row = row;
  r.detector_col = col;
  return r;
}

std::size_t n_angles(const Geometry& g) {
  return std::visit([](const auto& x) { return x.n_angles; }, g);
}

std::size_t detector_rows(const Geometry& g) {
  if (const auto* c = std::get_if<ConeGeometry>(&g)) return c->detector_rows;
  return 1;
}

std::size_t detector_cols(const Geometry& g) {
  if (const auto* c = std::get_if<ConeGeometry>(&g)) return c->detector_cols;
  return std::get<FanGeometry>(g).n_detectors;
}

Ray ray_for(const Geometry& g, std::size_t angle_index, std::size_t row, std::size_t col) {
  if (const auto* c = std::get_if<ConeGeometry>(&g)) return ray_for(*c, angle_index, row, col);
  if (row != 0) throw IndexError("fan geometry has a single detector row");
  return ray_for(std::get<FanGeometry>(g), angle_index, col);
}

double fov_radius(const Geometry& g) {
  const double sd = std::visit([](const auto& x) { return x.source_distance; }, g);
  const double dd = std::visit([](const auto& x) { return x.detector_distance; }, g);
  const double pitch = std::visit([](const auto& x) { return x.detector_pixel_size; }, g);
  const double half_width = 0.5 * static_cast<double>(detector_cols(g)) * pitch;
  return sd * std::sin(std::atan(half_width / (sd + dd)));
}

// ---------------------------------------------------------------------------
// JSON

namespace {

using nlohmann::json;

json range_json(const AngularRange& r) { return json::array({r.start / kDeg, r.end / kDeg}); }

AngularRange range_from(const json& j) {
  if (!j.is_array() || j.size() != 2) throw InvalidArgument("angular_range must be [start_deg, end_deg]");
  AngularRange r{j[0].get<double>() * kDeg, j[1].get<double>() * kDeg};
  // Degrees round-trip through text; snap a full turn back onto exactly 2*pi.
  if (std::abs(j[1].get<double>() - j[0].get<double>() - 360.0) < 1e-9) r.end = r.start + kTwoPi;
  return r;
}

template <class T>
T field(const json& j, const char* name) {
  if (!j.contains(name)) throw InvalidArgument(std::string("geometry is missing field '") + name + "'");
  try {
    return j.at(name).get<T>();
  } catch (const json::exception&) {
    throw InvalidArgument(std::string("geometry field '") + name + "' has the wrong type");
  }
}

}  // namespace

std::string geometry_to_json(const Geometry& g) {
  json j;
  if (const auto* f = std::get_if<FanGeometry>(&g)) {
    j["type"] = "fan";
    j["n_angles"] = f->n_angles;
    j["angular_range"] = range_json(f->angular_range);
    j["source_distance"] = f->source_distance;
    j["detector_distance"] = f->detector_distance;
    j["n_detectors"] = f->n_detectors;
    j["detector_pixel_size"] = f->detector_pixel_size;
  } else {
    const auto& c = std::get<ConeGeometry>(g);
    j["type"] = "cone";
    j["n_angles"] = c.n_angles;
    j["angular_range"] = range_json(c.angular_range);
    j["source_distance"] = c.source_distance;
    j["detector_distance"] = c.detector_distance;
    j["detector_rows"] = c.detector_rows;
    j["detector_cols"] = c.detector_cols;
    j["detector_pixel_size"] = c.detector_pixel_size;
    j["trajectory_height"] = c.trajectory_height;
  }
  return j.dump(2);
}

Geometry geometry_from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("geometry JSON does not parse: ") + e.what());
  }
  const auto type = field<std::string>(j, "type");
  const AngularRange range = j.contains("angular_range") ? range_from(j["angular_range"]) : AngularRange{};
  if (type == "fan") {
    return make_fan_geometry(field<std::size_t>(j, "n_angles"), field<std::size_t>(j, "n_detectors"),
                             field<double>(j, "source_distance"), field<double>(j, "detector_distance"), range,
                             j.value("detector_pixel_size", 1.0));
  }
  if (type == "cone") {
    return make_cone_geometry(field<std::size_t>(j, "n_angles"), field<std::size_t>(j, "detector_rows"),
                              field<std::size_t>(j, "detector_cols"), field<double>(j, "source_distance"),
                              field<double>(j, "detector_distance"), field<double>(j, "detector_pixel_size"),
                              range, j.value("trajectory_height", 0.0));
  }
  throw InvalidArgument("geometry type must be 'fan' or 'cone', got '" + type + "'");
}

std::string grid_to_json(const VolumeGrid& g) {
  json j;
  j["dims"] = g.dims;
  if (g.dims == 2) {
    j["shape"] = {g.shape[0], g.shape[1]};
  } else {
    j["shape"] = {g.shape[0], g.shape[1], g.shape[2]};
  }
  j["voxel_size"] = g.voxel_size;
  j["origin"] = g.origin;
  return j.dump(2);
}

VolumeGrid grid_from_json(std::string_view text) {
  json j = json::parse(text);
  const auto shape = j.at("shape").get<std::vector<std::size_t>>();
  const double vs = j.value("voxel_size", 1.0);
  VolumeGrid g;
  if (shape.size() == 2) {
    g = VolumeGrid::make_2d(shape[0], shape[1], vs);
  } else if (shape.size() == 3) {
    g = VolumeGrid::make_3d(shape[0], shape[1], shape[2], vs);
  } else {
    throw InvalidArgument("grid shape must have 2 or 3 entries");
  }
  if (j.contains("origin")) g.origin = j["origin"].get<Vec3>();
  return g;
}

}  // namespace nodect
