#pragma once

#include <array>
#include <cstddef>
#include <numbers>
#include <string>
#include <string_view>
#include <variant>

namespace nodect {

using Vec3 = std::array<double, 3>;

inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

/// Angular coverage of a scan in radians. Angles are sampled half-open:
/// angle i = start + i * (end - start) / n_angles, so a full turn never repeats
/// its first view.
struct AngularRange {
  double start = 0.0;
  double end = kTwoPi;

  double span() const { return end - start; }
  bool is_full_turn() const;

  static AngularRange full_turn() { return {}; }
};

/// 2D fan-beam scan with a flat linear detector.
///
/// The source starts on the +x axis at angle 0 and rotates counter-clockwise
/// around the isocenter. The detector is centered on the source-isocenter line
/// at detector_distance behind the isocenter; detector index 0 sits at the most
/// negative position along the detector axis (-sin b, cos b).
struct FanGeometry {
  std::size_t n_angles = 1;
  AngularRange angular_range{};
  double source_distance = 1.0;
  double detector_distance = 0.0;
  std::size_t n_detectors = 1;
  double detector_pixel_size = 1.0;

  double angle(std::size_t i) const;
  double angular_increment() const;
  /// Position of detector element j along the detector axis, relative to its center.
  double detector_offset(std::size_t j) const;
};

/// Circular cone-beam scan with a flat-panel detector perpendicular to the
/// source-isocenter axis. Rows run along z, columns along the in-plane detector axis.
struct ConeGeometry {
  std::size_t n_angles = 1;
  AngularRange angular_range{};
  double source_distance = 1.0;
  double detector_distance = 0.0;
  std::size_t detector_rows = 1;
  std::size_t detector_cols = 1;
  double detector_pixel_size = 1.0;
  double trajectory_height = 0.0;

  double angle(std::size_t i) const;
  double angular_increment() const;
  double col_offset(std::size_t c) const;
  double row_offset(std::size_t r) const;
  /// Full cone angle (radians) subtended by the detector rows at the source.
  double cone_angle() const;
};

using Geometry = std::variant<FanGeometry, ConeGeometry>;

struct Ray {
  Vec3 origin{};
  Vec3 direction{};
  std::size_t angle_index = 0;
  std::size_t detector_row = 0;
  std::size_t detector_col = 0;
};

/// Regular voxel grid. 2D grids have dims == 2 and shape[2] == 1. The grid is
/// centered on `origin` (mm), which defaults to the isocenter.
struct VolumeGrid {
  int dims = 2;
  std::array<std::size_t, 3> shape{1, 1, 1};
  double voxel_size = 1.0;
  Vec3 origin{};

  static VolumeGrid make_2d(std::size_t nx, std::size_t ny, double voxel_size);
  static VolumeGrid make_3d(std::size_t nx, std::size_t ny, std::size_t nz, double voxel_size);

  std::size_t size() const { return shape[0] * shape[1] * shape[2]; }
  std::size_t index(std::size_t ix, std::size_t iy, std::size_t iz = 0) const {
    return ix + shape[0] * (iy + shape[1] * iz);
  }
  /// Center of voxel i along axis a, in mm.
  double center(int axis, std::size_t i) const {
    return origin[axis] + (static_cast<double>(i) - 0.5 * static_cast<double>(shape[axis] - 1)) * voxel_size;
  }

  bool operator==(const VolumeGrid&) const = default;
};

FanGeometry make_fan_geometry(std::size_t n_angles, std::size_t n_detectors, double source_distance,
                              double detector_distance, AngularRange range = AngularRange::full_turn(),
                              double detector_pixel_size = 1.0);

/// Throws InvalidGeometry when the full cone angle reaches 90 degrees.
ConeGeometry make_cone_geometry(std::size_t n_angles, std::size_t detector_rows, std::size_t detector_cols,
                                double source_distance, double detector_distance, double detector_pixel_size,
                                AngularRange range = AngularRange::full_turn(), double trajectory_height = 0.0);

Vec3 source_position(const FanGeometry& g, std::size_t angle_index);
Vec3 source_position(const ConeGeometry& g, std::size_t angle_index);

Ray ray_for(const FanGeometry& g, std::size_t angle_index, std::size_t detector_index);
Ray ray_for(const ConeGeometry& g, std::size_t angle_index, std::size_t row, std::size_t col);

// Uniform accessors over the variant.
std::size_t n_angles(const Geometry& g);
std::size_t detector_rows(const Geometry& g);
std::size_t detector_cols(const Geometry& g);
inline std::size_t rays_per_view(const Geometry& g) { return detector_rows(g) * detector_cols(g); }
inline std::size_t n_rays(const Geometry& g) { return n_angles(g) * rays_per_view(g); }
inline bool is_fan(const Geometry& g) { return std::holds_alternative<FanGeometry>(g); }
/// Ray through sinogram entry (angle, row, col); fan geometries ignore row.
Ray ray_for(const Geometry& g, std::size_t angle_index, std::size_t row, std::size_t col);

/// Radius of the largest isocentric disk seen by every view: the detector edges
/// back-projected onto the source orbit.
double fov_radius(const Geometry& g);

/// JSON form: {"type": "fan"|"cone", field names as in the structs,
/// "angular_range": [start_deg, end_deg]}. Angles are stored in degrees.
std::string geometry_to_json(const Geometry& g);
Geometry geometry_from_json(std::string_view text);

std::string grid_to_json(const VolumeGrid& g);
VolumeGrid grid_from_json(std::string_view text);

}  // namespace nodect
