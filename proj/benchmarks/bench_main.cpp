#include <benchmark/benchmark.h>

#include "nodect/analytic.hpp"
#include "nodect/classical.hpp"
#include "nodect/net.hpp"
#include "nodect/ode.hpp"
#include "nodect/parallel.hpp"
#include "nodect/phantoms.hpp"
#include "nodect/projector.hpp"
#include "nodect/training.hpp"

namespace {

using namespace nodect;

// Desk-scale 2D problem used for training.
struct Desk2D {
  VolumeGrid grid = VolumeGrid::make_2d(64, 64, 0.25);
  Geometry geom = make_fan_geometry(30, 96, 50.0, 25.0, AngularRange::full_turn(), 0.375);
  Volume x;
  Sinogram p;
  Desk2D() {
    PhantomSpec s;
    s.grid = grid;
    x = make_phantom(s);
    p = simulate_measurement(x, geom, {NoiseKind::gaussian, 0.0025, 1e5}, 1);
  }
};

struct Cone3D {
  VolumeGrid grid = VolumeGrid::make_3d(32, 32, 32, 0.5);
  Geometry geom = make_cone_geometry(120, 40, 40, 66.0, 33.0, 0.75);
  Volume x;
  Sinogram p;
  Cone3D() {
    PhantomSpec s;
    s.kind = PhantomKind::walnut_like_3d;
    s.grid = grid;
    x = make_phantom(s);
    p = forward_project(x, geom);
  }
};

void BM_ForwardProject2D(benchmark::State& state) {
  set_num_threads(static_cast<std::size_t>(state.range(0)));
  const Desk2D d;
  for (auto _ : state) benchmark::DoNotOptimize(forward_project(d.x, d.geom));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(d.p.size()));
}
BENCHMARK(BM_ForwardProject2D)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_BackProject2D(benchmark::State& state) {
  set_num_threads(static_cast<std::size_t>(state.range(0)));
  const Desk2D d;
  for (auto _ : state) benchmark::DoNotOptimize(back_project(d.p, d.grid));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(d.p.size()));
}
BENCHMARK(BM_BackProject2D)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_ForwardProject3D(benchmark::State& state) {
  set_num_threads(1);
  const Cone3D d;
  for (auto _ : state) benchmark::DoNotOptimize(forward_project(d.x, d.geom));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(d.p.size()));
}
BENCHMARK(BM_ForwardProject3D)->Unit(benchmark::kMillisecond);

void BM_BackProject3D(benchmark::State& state) {
  set_num_threads(1);
  const Cone3D d;
  for (auto _ : state) benchmark::DoNotOptimize(back_project(d.p, d.grid));
}
BENCHMARK(BM_BackProject3D)->Unit(benchmark::kMillisecond);

void BM_Fbp2D(benchmark::State& state) {
  set_num_threads(1);
  const Desk2D d;
  for (auto _ : state) benchmark::DoNotOptimize(fbp_fan(d.p, d.grid, FilterWindow::hann));
}
BENCHMARK(BM_Fbp2D)->Unit(benchmark::kMillisecond);

void BM_Fdk3D(benchmark::State& state) {
  set_num_threads(1);
  const Cone3D d;
  for (auto _ : state) benchmark::DoNotOptimize(fdk_cone(d.p, d.grid, FilterWindow::hann));
}
BENCHMARK(BM_Fdk3D)->Unit(benchmark::kMillisecond);

void BM_NetForward(benchmark::State& state) {
  set_num_threads(1);
  const Desk2D d;
  NetArch arch;
  arch.base_channels = static_cast<std::uint32_t>(state.range(0));
  const NetParams params = init_params(arch, 0);
  for (auto _ : state) benchmark::DoNotOptimize(net_forward(params, d.x));
}
BENCHMARK(BM_NetForward)->Arg(4)->Arg(8)->Unit(benchmark::kMillisecond);

void BM_NetVjp(benchmark::State& state) {
  set_num_threads(1);
  const Desk2D d;
  NetArch arch;
  arch.base_channels = static_cast<std::uint32_t>(state.range(0));
  const NetParams params = init_params(arch, 0);
  for (auto _ : state) benchmark::DoNotOptimize(net_vjp(params, d.x, d.x));
}
BENCHMARK(BM_NetVjp)->Arg(4)->Arg(8)->Unit(benchmark::kMillisecond);

// One training step: forward solve, adjoint pass, loss gradient.
void BM_LossAndGradient(benchmark::State& state) {
  set_num_threads(1);
  const Desk2D d;
  const NetParams params = init_params(NetArch{}, 0);
  const Volume x0 = fbp_fan(d.p, d.grid, FilterWindow::hann);
  const Volume mask = fov_mask(d.grid, d.geom);
  const Sample s{d.p, d.x};
  for (auto _ : state) benchmark::DoNotOptimize(loss_and_gradient(s, x0, params, 0.05, OdeConfig{}, mask));
}
BENCHMARK(BM_LossAndGradient)->Unit(benchmark::kMillisecond);

void BM_Sirt(benchmark::State& state) {
  set_num_threads(1);
  const Desk2D d;
  IterConfig cfg;
  cfg.n_iters = 50;
  for (auto _ : state) benchmark::DoNotOptimize(sirt(d.p, d.grid, cfg, {nullptr, nullptr, false}));
}
BENCHMARK(BM_Sirt)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
