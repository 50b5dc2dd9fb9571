#include "nodect/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "binary_io.hpp"
#include "nodect/errors.hpp"

namespace nodect {

namespace {

constexpr std::size_t kHeaderBytes = 64;
using nlohmann::ordered_json;

void pad_header(std::ostream& out, std::streamoff written) {
  for (auto i = written; i < static_cast<std::streamoff>(kHeaderBytes); ++i) out.put('\0');
}

ordered_json merge_extra(ordered_json side, const std::string& extra) {
  if (extra.empty()) return side;
  const auto e = nlohmann::json::parse(extra);
  if (!e.is_object()) throw InvalidArgument("sidecar extra metadata must be a JSON object");
  for (auto it = e.begin(); it != e.end(); ++it) side[it.key()] = it.value();
  return side;
}

void write_sidecar(const std::string& path, const ordered_json& side) {
  std::ofstream out(path + ".json");
  if (!out) throw DataError("cannot write sidecar '" + path + ".json'");
  out << side.dump(2) << '\n';
}

std::ifstream open_with_magic(const std::string& path, const char* magic) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  char m[4];
  if (!in.read(m, 4) || std::memcmp(m, magic, 4) != 0) {
    throw DataError("'" + path + "' does not start with magic " + std::string(magic, 4));
  }
  return in;
}

std::string read_sidecar(const std::string& path) {
  std::ifstream in(path + ".json");
  if (!in) return {};
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Parses a sidecar and lets `use` read from it; any malformed content becomes a DataError.
template <class F>
void with_sidecar(const std::string& path, F&& use) {
  const std::string side = read_sidecar(path);
  if (side.empty()) return;
  try {
    use(nlohmann::json::parse(side));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("'" + path + ".json' is malformed: " + e.what());
  } catch (const InvalidArgument& e) {
    throw DataError("'" + path + ".json' is malformed: " + e.what());
  }
}

std::vector<double> read_payload(std::istream& in, std::size_t count, const std::string& path) {
  in.seekg(static_cast<std::streamoff>(kHeaderBytes));
  std::vector<double> values(count);
  try {
    for (double& v : values) v = detail::get_f32(in);
  } catch (const InvalidArgument&) {
    throw DataError("'" + path + "' is truncated");
  }
  if (in.peek() != std::char_traits<char>::eof()) throw DataError("'" + path + "' has trailing bytes");
  return values;
}

}  // namespace

void write_volume(const std::string& path, const Volume& v, const std::string& extra) {
  const VolumeGrid& g = v.grid();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path + "'");
  out.write("CTV1", 4);
  detail::put_u32(out, static_cast<std::uint32_t>(g.dims));
  for (std::size_t n : g.shape) detail::put_u32(out, static_cast<std::uint32_t>(n));
  detail::put_f32(out, static_cast<float>(g.voxel_size));
  for (double o : g.origin) detail::put_f32(out, static_cast<float>(o));
  pad_header(out, 4 + 4 * 4 + 4 * 4);
  for (double x : v.values()) detail::put_f32(out, static_cast<float>(x));
  if (!out) throw DataError("failed writing '" + path + "'");

  ordered_json side;
  side["format"] = "CTV1";
  side["dtype"] = "float32-le";
  side["grid"] = nlohmann::json::parse(grid_to_json(g));
  write_sidecar(path, merge_extra(std::move(side), extra));
}

Volume read_volume(const std::string& path) {
  auto in = open_with_magic(path, "CTV1");
  VolumeGrid g;
  try {
    g.dims = static_cast<int>(detail::get_u32(in));
    for (auto& n : g.shape) n = detail::get_u32(in);
    g.voxel_size = detail::get_f32(in);
    for (auto& o : g.origin) o = detail::get_f32(in);
  } catch (const InvalidArgument&) {
    throw DataError("'" + path + "' has a truncated header");
  }
  if ((g.dims != 2 && g.dims != 3) || g.size() == 0 || (g.dims == 2 && g.shape[2] != 1)) {
    throw DataError("'" + path + "' has an invalid grid header");
  }
  with_sidecar(path, [&](const nlohmann::json& j) {
    if (!j.contains("grid")) return;
    const VolumeGrid sg = grid_from_json(j["grid"].dump());
    if (sg.shape != g.shape || sg.dims != g.dims) throw DataError("'" + path + "' sidecar disagrees with header");
    g = sg;
  });
  return Volume(g, read_payload(in, g.size(), path));
}

void write_sinogram(const std::string& path, const Sinogram& s, const std::string& extra) {
  const Geometry& geom = s.geometry();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path + "'");
  out.write("CTS1", 4);
  constexpr double kRadToDeg = 180.0 / std::numbers::pi;
  auto header = [&](std::uint32_t type, std::size_t na, std::size_t rows, std::size_t cols, double pix, double sd,
                    double dd, const AngularRange& r, double height) {
    detail::put_u32(out, type);
    detail::put_u32(out, static_cast<std::uint32_t>(na));
    detail::put_u32(out, static_cast<std::uint32_t>(rows));
    detail::put_u32(out, static_cast<std::uint32_t>(cols));
    for (double f : {pix, sd, dd, r.start * kRadToDeg, r.end * kRadToDeg, height}) {
      detail::put_f32(out, static_cast<float>(f));
    }
  };
  if (const auto* f = std::get_if<FanGeometry>(&geom)) {
    header(0, f->n_angles, 1, f->n_detectors, f->detector_pixel_size, f->source_distance, f->detector_distance,
           f->angular_range, 0.0);
  } else {
    const auto& c = std::get<ConeGeometry>(geom);
    header(1, c.n_angles, c.detector_rows, c.detector_cols, c.detector_pixel_size, c.source_distance,
           c.detector_distance, c.angular_range, c.trajectory_height);
  }
  pad_header(out, 4 + 4 * 4 + 6 * 4);
  for (double x : s.values()) detail::put_f32(out, static_cast<float>(x));
  if (!out) throw DataError("failed writing '" + path + "'");

  ordered_json side;
  side["format"] = "CTS1";
  side["dtype"] = "float32-le";
  side["layout"] = "angle,row,col";
  side["geometry"] = nlohmann::json::parse(geometry_to_json(geom));
  write_sidecar(path, merge_extra(std::move(side), extra));
}

Sinogram read_sinogram(const std::string& path) {
  auto in = open_with_magic(path, "CTS1");
  Geometry geom;
  try {
    const std::uint32_t type = detail::get_u32(in);
    const std::size_t na = detail::get_u32(in), rows = detail::get_u32(in), cols = detail::get_u32(in);
    const double pix = detail::get_f32(in), sd = detail::get_f32(in), dd = detail::get_f32(in);
    constexpr double kDegToRad = std::numbers::pi / 180.0;
    AngularRange r{detail::get_f32(in) * kDegToRad, detail::get_f32(in) * kDegToRad};
    if (std::abs(r.span() - kTwoPi) < 1e-5) r.end = r.start + kTwoPi;
    const double height = detail::get_f32(in);
    if (type == 0) {
      geom = make_fan_geometry(na, cols, sd, dd, r, pix);
    } else if (type == 1) {
      geom = make_cone_geometry(na, rows, cols, sd, dd, pix, r, height);
    } else {
      throw DataError("'" + path + "' has an unknown geometry type");
    }
  } catch (const InvalidArgument& e) {
    throw DataError("'" + path + "' has an invalid header: " + e.what());
  }
  with_sidecar(path, [&](const nlohmann::json& j) {
    if (!j.contains("geometry")) return;
    Geometry sg = geometry_from_json(j["geometry"].dump());
    if (n_rays(sg) != n_rays(geom)) throw DataError("'" + path + "' sidecar disagrees with header");
    geom = std::move(sg);
  });
  return Sinogram(geom, read_payload(in, n_rays(geom), path));
}

void write_pgm_slice(const std::string& path, const Volume& v, int axis, double lo, double hi) {
  const VolumeGrid& g = v.grid();
  if (axis < 0 || axis > 2 || (g.dims == 2 && axis != 2)) throw InvalidArgument("slice axis out of range");
  if (!(hi > lo)) throw InvalidArgument("display window must have hi > lo");
  // Columns run along the lower remaining axis, rows along the higher one with its last index on top.
  const int col_axis = axis == 0 ? 1 : 0;
  const int row_axis = axis == 2 ? 1 : 2;
  const std::size_t cols = g.shape[col_axis], rows = g.shape[row_axis];
  std::array<std::size_t, 3> idx{g.shape[0] / 2, g.shape[1] / 2, g.shape[2] / 2};
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << "P5\n" << cols << ' ' << rows << "\n255\n";
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      idx[col_axis] = c;
      idx[row_axis] = rows - 1 - r;
      const double t = std::clamp((v.at(idx[0], idx[1], idx[2]) - lo) / (hi - lo), 0.0, 1.0);
      out.put(static_cast<char>(static_cast<unsigned char>(std::lround(t * 255.0))));
    }
  }
}

}  // namespace nodect
