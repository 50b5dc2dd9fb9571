#include "nodect/phantoms.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "nodect/errors.hpp"
#include "nodect/projector.hpp"

namespace nodect {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

// Modified Shepp-Logan (Toft): intensity, semi-axes a, b, center x0, y0, angle.
struct Ellipse {
  double intensity, a, b, x0, y0, phi_deg;
};

constexpr std::array<Ellipse, 10> kSheppLogan{{
    {1.0, 0.69, 0.92, 0.0, 0.0, 0.0},
    {-0.8, 0.6624, 0.8740, 0.0, -0.0184, 0.0},
    {-0.2, 0.1100, 0.3100, 0.22, 0.0, -18.0},
    {-0.2, 0.1600, 0.4100, -0.22, 0.0, 18.0},
    {0.1, 0.2100, 0.2500, 0.0, 0.35, 0.0},
    {0.1, 0.0460, 0.0460, 0.0, 0.1, 0.0},
    {0.1, 0.0460, 0.0460, 0.0, -0.1, 0.0},
    {0.1, 0.0460, 0.0230, -0.08, -0.605, 0.0},
    {0.1, 0.0230, 0.0230, 0.0, -0.606, 0.0},
    {0.1, 0.0230, 0.0460, 0.06, -0.605, 0.0},
}};

// Axis-aligned-then-rotated ellipsoid in normalized coordinates (rotation about z).
struct Blob {
  Vec3 center{};
  Vec3 radii{1.0, 1.0, 1.0};
  double angle = 0.0;

  bool contains(const Vec3& p, int dims) const {
    const double dx = p[0] - center[0], dy = p[1] - center[1], dz = p[2] - center[2];
    const double c = std::cos(angle), s = std::sin(angle);
    const double u = (dx * c + dy * s) / radii[0];
    const double v = (-dx * s + dy * c) / radii[1];
    const double w = dims == 3 ? dz / radii[2] : 0.0;
    return u * u + v * v + w * w <= 1.0;
  }
  Blob scaled(double f) const { return {center, {radii[0] * f, radii[1] * f, radii[2] * f}, angle}; }
};

// Normalized coordinates of every voxel center.
template <class F>
void for_each_voxel(const VolumeGrid& g, F&& f) {
  std::array<double, 3> half{};
  for (int a = 0; a < 3; ++a) half[a] = 0.5 * static_cast<double>(g.shape[a]) * g.voxel_size;
  for (std::size_t iz = 0; iz < g.shape[2]; ++iz) {
    for (std::size_t iy = 0; iy < g.shape[1]; ++iy) {
      for (std::size_t ix = 0; ix < g.shape[0]; ++ix) {
        const Vec3 p{(g.center(0, ix) - g.origin[0]) / half[0], (g.center(1, iy) - g.origin[1]) / half[1],
                     g.dims == 3 ? (g.center(2, iz) - g.origin[2]) / half[2] : 0.0};
        f(g.index(ix, iy, iz), p);
      }
    }
  }
}

// Layers are painted in order; later layers overwrite earlier ones.
struct Layer {
  Blob blob;
  double value;
};

Volume paint(const PhantomSpec& spec, const std::vector<Layer>& layers) {
  Volume v(spec.grid, spec.value_min);
  for_each_voxel(spec.grid, [&](std::size_t i, const Vec3& p) {
    for (const auto& layer : layers) {
      if (layer.blob.contains(p, spec.grid.dims)) v[i] = layer.value;
    }
  });
  for (double& x : v.values()) x = std::clamp(x, spec.value_min, spec.value_max);
  return v;
}

double lerp(double lo, double hi, double t) { return lo + (hi - lo) * t; }

Volume disk_set(const PhantomSpec& spec, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double lo = spec.value_min, hi = spec.value_max;
  std::vector<Layer> layers;
  const double body_r = lerp(0.62, 0.78, u01(rng));
  Blob body{{lerp(-0.05, 0.05, u01(rng)), lerp(-0.05, 0.05, u01(rng)), 0.0},
            {body_r, body_r * lerp(0.85, 1.0, u01(rng)), body_r},
            0.0};
  layers.push_back({body, lerp(lo, hi, lerp(0.25, 0.45, u01(rng)))});
  const int n_inner = 3 + static_cast<int>(u01(rng) * 4.0);
  for (int k = 0; k < n_inner; ++k) {
    const double r = lerp(0.07, 0.22, u01(rng));
    const double reach = std::max(0.0, body_r - r - 0.05);
    const double ang = u01(rng) * 2.0 * std::numbers::pi;
    const double rad = reach * std::sqrt(u01(rng));
    const double z = spec.grid.dims == 3 ? lerp(-reach, reach, u01(rng)) * 0.6 : 0.0;
    Blob b{{body.center[0] + rad * std::cos(ang), body.center[1] + rad * std::sin(ang), z}, {r, r, r}, 0.0};
    layers.push_back({b, lerp(lo, hi, lerp(0.0, 1.0, u01(rng)))});
  }
  return paint(spec, layers);
}

Volume nested_shells(const PhantomSpec& spec, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double lo = spec.value_min, hi = spec.value_max;
  Blob outer{{lerp(-0.05, 0.05, u01(rng)), lerp(-0.05, 0.05, u01(rng)), lerp(-0.05, 0.05, u01(rng))},
             {lerp(0.7, 0.82, u01(rng)), lerp(0.62, 0.8, u01(rng)), lerp(0.7, 0.85, u01(rng))},
             u01(rng) * std::numbers::pi};
  std::vector<Layer> layers;
  double scale = 1.0;
  const int shells = 3 + static_cast<int>(u01(rng) * 2.0);
  for (int k = 0; k < shells; ++k) {
    layers.push_back({outer.scaled(scale), lerp(lo, hi, lerp(0.4, 1.0, u01(rng)))});
    scale *= lerp(0.82, 0.9, u01(rng));
    layers.push_back({outer.scaled(scale), lerp(lo, hi, lerp(0.0, 0.25, u01(rng)))});
    scale *= lerp(0.8, 0.9, u01(rng));
  }
  return paint(spec, layers);
}

Volume walnut_like(const PhantomSpec& spec, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double lo = spec.value_min, hi = spec.value_max;
  const Blob hull{{0.0, 0.0, 0.0},
                  {lerp(0.72, 0.8, u01(rng)), lerp(0.66, 0.76, u01(rng)), lerp(0.75, 0.85, u01(rng))},
                  u01(rng) * std::numbers::pi};
  std::vector<Layer> layers;
  layers.push_back({hull, lerp(lo, hi, lerp(0.75, 0.95, u01(rng)))});       // shell
  layers.push_back({hull.scaled(lerp(0.86, 0.9, u01(rng))), lerp(lo, hi, 0.03)});  // air gap
  // Kernel: two halves plus lobes, separated by a thin septum.
  const double kernel_scale = lerp(0.72, 0.78, u01(rng));
  const int lobes = 4 + static_cast<int>(u01(rng) * 3.0);
  const double kernel_value = lerp(lo, hi, lerp(0.45, 0.6, u01(rng)));
  for (int k = 0; k < lobes; ++k) {
    const double ang = (static_cast<double>(k) + 0.3 * u01(rng)) * 2.0 * std::numbers::pi / lobes;
    const double rad = hull.radii[0] * kernel_scale * lerp(0.25, 0.45, u01(rng));
    Blob lobe{{rad * std::cos(ang), rad * std::sin(ang), lerp(-0.2, 0.2, u01(rng))},
              {hull.radii[0] * kernel_scale * lerp(0.45, 0.6, u01(rng)),
               hull.radii[1] * kernel_scale * lerp(0.35, 0.5, u01(rng)),
               hull.radii[2] * kernel_scale * lerp(0.6, 0.8, u01(rng))},
              ang};
    layers.push_back({lobe, kernel_value});
  }
  Blob septum{{0.0, 0.0, 0.0}, {hull.radii[0] * 0.8, 0.035, hull.radii[2] * 0.8}, hull.angle};
  layers.push_back({septum, lerp(lo, hi, 0.7)});
  // A few internal voids.
  const int voids = 2 + static_cast<int>(u01(rng) * 3.0);
  for (int k = 0; k < voids; ++k) {
    const double ang = u01(rng) * 2.0 * std::numbers::pi;
    const double rad = lerp(0.15, 0.4, u01(rng));
    const double r = lerp(0.04, 0.09, u01(rng));
    layers.push_back({Blob{{rad * std::cos(ang), rad * std::sin(ang), lerp(-0.3, 0.3, u01(rng))}, {r, r, r}, 0.0},
                      lerp(lo, hi, 0.05)});
  }
  return paint(spec, layers);
}

}  // namespace

PhantomKind parse_phantom_kind(std::string_view name) {
  if (name == "disk_set") return PhantomKind::disk_set;
  if (name == "shepp_logan_2d") return PhantomKind::shepp_logan_2d;
  if (name == "nested_shells_3d") return PhantomKind::nested_shells_3d;
  if (name == "walnut_like_3d") return PhantomKind::walnut_like_3d;
  throw InvalidArgument("unknown phantom kind '" + std::string(name) + "'");
}

std::string_view phantom_kind_name(PhantomKind kind) {
  switch (kind) {
    case PhantomKind::disk_set: return "disk_set";
    case PhantomKind::shepp_logan_2d: return "shepp_logan_2d";
    case PhantomKind::nested_shells_3d: return "nested_shells_3d";
    case PhantomKind::walnut_like_3d: return "walnut_like_3d";
  }
  return "unknown";
}

double shepp_logan_value(double u, double v) {
  double total = 0.0;
  for (const auto& e : kSheppLogan) {
    const double c = std::cos(e.phi_deg * kDeg), s = std::sin(e.phi_deg * kDeg);
    const double dx = u - e.x0, dy = v - e.y0;
    const double xr = (dx * c + dy * s) / e.a;
    const double yr = (-dx * s + dy * c) / e.b;
    if (xr * xr + yr * yr <= 1.0) total += e.intensity;
  }
  return total;
}

Volume make_phantom(const PhantomSpec& spec) {
  if (!(spec.value_max > spec.value_min)) throw InvalidArgument("phantom value range must have max > min");
  std::mt19937_64 rng(spec.seed);
  switch (spec.kind) {
    case PhantomKind::shepp_logan_2d: {
      if (spec.grid.dims != 2) throw InvalidArgument("shepp_logan_2d requires a 2D grid");
      Volume v(spec.grid);
      for_each_voxel(spec.grid, [&](std::size_t i, const Vec3& p) {
        const double s = shepp_logan_value(p[0], p[1]);
        v[i] = std::clamp(spec.value_min + (spec.value_max - spec.value_min) * s, spec.value_min, spec.value_max);
      });
      return v;
    }
    case PhantomKind::disk_set: return disk_set(spec, rng);
    case PhantomKind::nested_shells_3d: return nested_shells(spec, rng);
    case PhantomKind::walnut_like_3d: return walnut_like(spec, rng);
  }
  throw InvalidArgument("unknown phantom kind");
}

NoiseKind parse_noise_kind(std::string_view name) {
  if (name == "none") return NoiseKind::none;
  if (name == "gaussian") return NoiseKind::gaussian;
  if (name == "poisson") return NoiseKind::poisson;
  throw InvalidArgument("unknown noise kind '" + std::string(name) + "'");
}

std::string_view noise_kind_name(NoiseKind kind) {
  switch (kind) {
    case NoiseKind::none: return "none";
    case NoiseKind::gaussian: return "gaussian";
    case NoiseKind::poisson: return "poisson";
  }
  return "unknown";
}

void NoiseModel::validate() const {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw InvalidArgument("noise sigma must be >= 0");
  if (!(incident_photons > 0.0) || !std::isfinite(incident_photons)) {
    throw InvalidArgument("noise incident_photons (I0) must be > 0");
  }
}

Sinogram simulate_measurement(const Volume& x, const Geometry& geom, const NoiseModel& noise, std::uint64_t seed) {
  noise.validate();
  Sinogram p = forward_project(x, geom);
  std::mt19937_64 rng(seed);
  switch (noise.kind) {
    case NoiseKind::none: break;
    case NoiseKind::gaussian: {
      std::normal_distribution<double> n(0.0, noise.sigma);
      if (noise.sigma > 0.0) {
        for (double& v : p.values()) v += n(rng);
      }
      break;
    }
    case NoiseKind::poisson: {
      const double i0 = noise.incident_photons;
      for (double& v : p.values()) {
        std::poisson_distribution<long long> counts(i0 * std::exp(-v));
        const double c = std::max<long long>(1, counts(rng));
        v = -std::log(c / i0);
      }
      break;
    }
  }
  return p;
}

}  // namespace nodect
