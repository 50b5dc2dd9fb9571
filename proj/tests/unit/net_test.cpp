#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "nodect/errors.hpp"
#include "nodect/net.hpp"
#include "test_support.hpp"

namespace nodect {
namespace {

NetArch tiny_arch() {
  NetArch a;
  a.n_levels = 1;
  a.convs_per_level = 0;
  a.final_kernel = 3;
  return a;
}

NetParams random_params(const NetArch& arch, std::uint64_t seed, double scale = 0.3) {
  return NetParams::unflatten(arch, testing::random_values(param_count(arch), seed, -scale, scale));
}

double scalar_output(const NetParams& p, const Volume& x, const Volume& u) {
  return dot(u.values(), net_forward(p, x).values());
}

TEST(NetParams, ClosedFormParameterCount) {
  NetArch a;  // 2 levels, 4 base channels, 3x3 kernels, 2 convs per level, 1x1 projection
  // encoder 0: 1->4, 4->4; encoder 1: 4->8, 8->8; decoder 0: (8+4)->4, 4->4; projection 4->1
  const std::size_t expected = (1 * 4 * 9 + 4) + (4 * 4 * 9 + 4) + (4 * 8 * 9 + 8) + (8 * 8 * 9 + 8) +
                               (12 * 4 * 9 + 4) + (4 * 4 * 9 + 4) + (4 * 1 + 1);
  EXPECT_EQ(param_count(a), expected);
  EXPECT_EQ(expected, 1657u);
  EXPECT_EQ(init_params(a, 1).values.size(), expected);
  EXPECT_EQ(param_count(tiny_arch()), 10u);
}

TEST(NetParams, ClosedFormParameterCount3D) {
  NetArch a;
  a.dims = 3;
  a.n_levels = 2;
  a.base_channels = 2;
  const std::size_t k = 27;
  const std::size_t expected = (1 * 2 * k + 2) + (2 * 2 * k + 2) + (2 * 4 * k + 4) + (4 * 4 * k + 4) +
                               (6 * 2 * k + 2) + (2 * 2 * k + 2) + (2 + 1);
  EXPECT_EQ(param_count(a), expected);
}

TEST(NetParams, FlattenRoundTrip) {
  const NetParams p = init_params(NetArch{}, 5);
  const NetParams q = NetParams::unflatten(p.arch, std::vector<double>(p.flatten().begin(), p.flatten().end()));
  EXPECT_EQ(p.values, q.values);
  EXPECT_THROW(NetParams::unflatten(p.arch, std::vector<double>(3)), InvalidArgument);
}

TEST(InitParams, DeterministicAndFinalLayerZero) {
  const NetArch arch;
  const NetParams a = init_params(arch, 42), b = init_params(arch, 42), c = init_params(arch, 43);
  EXPECT_EQ(a.values, b.values);
  EXPECT_NE(a.values, c.values);
  const auto slots = layer_slots(arch);
  const auto& last = slots.back();
  EXPECT_FALSE(last.relu);
  for (std::size_t i = 0; i < last.shape.param_count(); ++i) EXPECT_EQ(a.values[last.weight_offset + i], 0.0);
  // Hidden weights are not all zero.
  EXPECT_GT(max_abs(std::span<const double>(a.values).subspan(0, last.weight_offset)), 0.0);
}

TEST(NetForward, ZeroInitOutputsZero) {
  const auto grid = VolumeGrid::make_2d(16, 12, 1.0);
  for (std::uint64_t seed : {0u, 1u, 99u}) {
    const Volume y = net_forward(init_params(NetArch{}, seed), testing::random_volume(grid, seed, 0.0, 0.06));
    EXPECT_EQ(max_abs(y.values()), 0.0);
  }
}

TEST(NetForward, IdentityKernelIsIdentity) {
  NetParams p = init_params(tiny_arch(), 0);
  p.values.assign(p.values.size(), 0.0);
  p.values[4] = 1.0;  // center tap
  const Volume x = testing::random_volume(VolumeGrid::make_2d(7, 6, 1.0), 3);
  const Volume y = net_forward(p, x);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y[i], x[i], 1e-15);
}

TEST(NetForward, ShiftEquivariantUnderPeriodicPadding) {
  NetArch arch;
  arch.padding = nn::Padding::periodic;
  const NetParams p = random_params(arch, 8);
  const auto grid = VolumeGrid::make_2d(16, 8, 1.0);
  const Volume x = testing::random_volume(grid, 9, 0.0, 0.06);
  const std::size_t sx = 2, sy = 4;  // multiples of 2^(n_levels - 1)
  Volume xs(grid);
  for (std::size_t iy = 0; iy < 8; ++iy)
    for (std::size_t ix = 0; ix < 16; ++ix) xs.at((ix + sx) % 16, (iy + sy) % 8) = x.at(ix, iy);
  const Volume y = net_forward(p, x), ys = net_forward(p, xs);
  ASSERT_GT(max_abs(y.values()), 0.0);
  double dev = 0.0;
  for (std::size_t iy = 0; iy < 8; ++iy)
    for (std::size_t ix = 0; ix < 16; ++ix) dev = std::max(dev, std::abs(ys.at((ix + sx) % 16, (iy + sy) % 8) - y.at(ix, iy)));
  EXPECT_LT(dev, 1e-10);
}

TEST(NetForward, ShapeContract) {
  NetArch arch;
  arch.n_levels = 3;
  const NetParams p = random_params(arch, 1);
  for (auto [nx, ny] : {std::pair<std::size_t, std::size_t>{4, 4}, {8, 12}, {16, 4}}) {
    const Volume y = net_forward(p, Volume(VolumeGrid::make_2d(nx, ny, 1.0), 0.01));
    EXPECT_EQ(y.grid().shape, (std::array<std::size_t, 3>{nx, ny, 1}));
  }
  EXPECT_THROW(net_forward(p, Volume(VolumeGrid::make_2d(6, 8, 1.0))), InvalidArgument);
  EXPECT_THROW(net_forward(p, Volume(VolumeGrid::make_3d(8, 8, 8, 1.0))), InvalidArgument);
}

TEST(NetVjp, ZeroCotangentGivesZeroGradients) {
  const NetParams p = random_params(NetArch{}, 2);
  const auto grid = VolumeGrid::make_2d(8, 8, 1.0);
  const auto r = net_vjp(p, testing::random_volume(grid, 1, 0.0, 0.06), Volume(grid));
  EXPECT_EQ(max_abs(r.grad_params), 0.0);
  EXPECT_EQ(max_abs(r.grad_x.values()), 0.0);
}

TEST(NetVjp, TinyNetMatchesFiniteDifferences) {
  NetParams p = random_params(tiny_arch(), 4);
  const auto grid = VolumeGrid::make_2d(5, 5, 1.0);
  Volume x = testing::random_volume(grid, 5, 0.0, 0.06);
  const Volume u = testing::random_volume(grid, 6);
  const auto r = net_vjp(p, x, u);
  const double h = 1e-6;
  for (std::size_t i = 0; i < p.values.size(); ++i) {
    const double v = p.values[i];
    p.values[i] = v + h;
    const double up = scalar_output(p, x, u);
    p.values[i] = v - h;
    const double dn = scalar_output(p, x, u);
    p.values[i] = v;
    EXPECT_LT(testing::rel_err(r.grad_params[i], (up - dn) / (2 * h)), 1e-6) << i;
  }
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x[i];
    x[i] = v + h;
    const double up = scalar_output(p, x, u);
    x[i] = v - h;
    const double dn = scalar_output(p, x, u);
    x[i] = v;
    EXPECT_LT(testing::rel_err(r.grad_x[i], (up - dn) / (2 * h)), 1e-6) << i;
  }
}

void check_full_net_fd(const NetArch& arch, const VolumeGrid& grid, std::uint64_t seed) {
  NetParams p = random_params(arch, seed);
  Volume x = testing::random_volume(grid, seed + 1, 0.0, 0.06);
  const Volume u = testing::random_volume(grid, seed + 2);
  const auto r = net_vjp(p, x, u);
  const double h = 1e-5;
  double scale = max_abs(r.grad_params);
  for (std::size_t i = 0; i < p.values.size(); i += 7) {
    const double v = p.values[i];
    p.values[i] = v + h;
    const double up = scalar_output(p, x, u);
    p.values[i] = v - h;
    const double dn = scalar_output(p, x, u);
    p.values[i] = v;
    EXPECT_LE(std::abs(r.grad_params[i] - (up - dn) / (2 * h)), 1e-5 * scale) << i;
  }
  // Input perturbations are scaled to the attenuation range.
  const double hx = 1e-7;
  scale = max_abs(r.grad_x.values());
  for (std::size_t i = 0; i < x.size(); i += 3) {
    const double v = x[i];
    x[i] = v + hx;
    const double up = scalar_output(p, x, u);
    x[i] = v - hx;
    const double dn = scalar_output(p, x, u);
    x[i] = v;
    EXPECT_LE(std::abs(r.grad_x[i] - (up - dn) / (2 * hx)), 1e-5 * scale) << i;
  }
}

TEST(NetVjp, FullNetMatchesFiniteDifferences) { check_full_net_fd(NetArch{}, VolumeGrid::make_2d(8, 8, 1.0), 10); }

TEST(NetVjp, InstanceNormNetMatchesFiniteDifferences) {
  NetArch arch;
  arch.instance_norm = true;
  check_full_net_fd(arch, VolumeGrid::make_2d(8, 8, 1.0), 20);
}

TEST(NetVjp, ThreeDimensionalNetMatchesFiniteDifferences) {
  NetArch arch;
  arch.dims = 3;
  arch.base_channels = 2;
  check_full_net_fd(arch, VolumeGrid::make_3d(4, 4, 4, 1.0), 30);
}

TEST(NetVjp, DotProductTest) {
  // <J v, u> with J v from forward differencing equals <v, J^T u>.
  const NetParams p = random_params(NetArch{}, 40);
  const auto grid = VolumeGrid::make_2d(8, 8, 1.0);
  const Volume x = testing::random_volume(grid, 41, 0.0, 0.06);
  const Volume v = testing::random_volume(grid, 42);
  const Volume u = testing::random_volume(grid, 43);
  const double h = 1e-7;
  Volume xp(grid), xm(grid);
  for (std::size_t i = 0; i < x.size(); ++i) {
    xp[i] = x[i] + h * v[i];
    xm[i] = x[i] - h * v[i];
  }
  const Volume yp = net_forward(p, xp), ym = net_forward(p, xm);
  double jv_u = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) jv_u += (yp[i] - ym[i]) / (2 * h) * u[i];
  const double v_jtu = dot(v.values(), net_vjp(p, x, u).grad_x.values());
  EXPECT_LT(testing::rel_err(jv_u, v_jtu), 1e-5);
}

TEST(NetVjp, ForwardVjpSharesForward) {
  const NetParams p = random_params(NetArch{}, 50);
  const auto grid = VolumeGrid::make_2d(8, 8, 1.0);
  const Volume x = testing::random_volume(grid, 51, 0.0, 0.06);
  const Volume u = testing::random_volume(grid, 52);
  const auto [y, r] = net_forward_vjp(p, x, u);
  const Volume y2 = net_forward(p, x);
  const auto r2 = net_vjp(p, x, u);
  for (std::size_t i = 0; i < x.size(); ++i) {
    EXPECT_EQ(y[i], y2[i]);
    EXPECT_EQ(r.grad_x[i], r2.grad_x[i]);
  }
  EXPECT_EQ(r.grad_params, r2.grad_params);
  EXPECT_THROW(net_vjp(p, x, Volume(VolumeGrid::make_2d(4, 4, 1.0))), InvalidArgument);
}

TEST(NetParamsFile, RoundTripAndHeader) {
  NetArch arch;
  arch.instance_norm = true;
  arch.value_scale = 12.5;
  const NetParams p = random_params(arch, 60);
  const auto dir = testing::scratch_dir("params");
  const std::string path = (dir / "p.nprm").string();
  save_params(path, p);
  const NetParams q = load_params(path);
  EXPECT_EQ(q.arch, p.arch);
  EXPECT_EQ(q.values, p.values);

  std::ifstream in(path, std::ios::binary);
  char magic[4];
  in.read(magic, 4);
  EXPECT_EQ(std::string(magic, 4), "NPRM");
  // Header: magic, version, 8 u32 arch fields, f64 value_scale, u32 count.
  EXPECT_EQ(std::filesystem::file_size(path), 4 + 4 + 8 * 4 + 8 + 4 + 8 * p.values.size());

  std::ofstream(dir / "bad.nprm", std::ios::binary) << "XXXXjunk";
  EXPECT_THROW(load_params((dir / "bad.nprm").string()), InvalidArgument);
}

TEST(NetArch, Validation) {
  NetArch a;
  a.kernel_size = 4;
  EXPECT_THROW(a.validate(), InvalidArgument);
  a = NetArch{};
  a.n_levels = 0;
  EXPECT_THROW(a.validate(), InvalidArgument);
  a = NetArch{};
  a.dims = 1;
  EXPECT_THROW(a.validate(), InvalidArgument);
  a = NetArch{};
  a.value_scale = 0.0;
  EXPECT_THROW(a.validate(), InvalidArgument);
}

}  // namespace
}  // namespace nodect
