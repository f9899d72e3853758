// invrender: single-image inverse rendering toolkit.
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include "invrender/renderer.h"
#include "invrender/scene.h"

namespace {

using namespace invrender;

AnalyticSceneSpec sphere_spec(int h, int w) {
  AnalyticSceneSpec spec;
  spec.height = h;
  spec.width = w;
  spec.spheres.push_back({});
  spec.env = make_env_map();
  spec.env.at(3, 9, 0) = 0.8;
  spec.env.at(3, 9, 1) = 0.7;
  spec.env.at(3, 9, 2) = 0.6;
  spec.env.at(5, 20, 0) = 0.4;
  spec.env.at(5, 20, 1) = 0.4;
  spec.env.at(5, 20, 2) = 0.5;
  return spec;
}

void BM_ShadeDirect(benchmark::State& state) {
  int h = static_cast<int>(state.range(0));
  int w = h * 4 / 3;
  SceneSample sample = generate_analytic_scene(sphere_spec(h, w), 7);
  for (auto _ : state) {
    ImageMap out = shade_direct(*sample.albedo_gt, *sample.normal_gt,
                                *sample.env_gt);
    benchmark::DoNotOptimize(out.pixels.data());
  }
  state.SetItemsProcessed(state.iterations() * h * w);
}
BENCHMARK(BM_ShadeDirect)->Arg(60)->Arg(120)->Arg(240);

void BM_DirectionGrid(benchmark::State& state) {
  for (auto _ : state) {
    DirectionGrid g = direction_grid(18, 36);
    benchmark::DoNotOptimize(g.solid_angles.data());
  }
}
BENCHMARK(BM_DirectionGrid);

void BM_FitEnvLeastSquares(benchmark::State& state) {
  int h = static_cast<int>(state.range(0));
  SceneSample sample = generate_analytic_scene(sphere_spec(h, h * 4 / 3), 7);
  for (auto _ : state) {
    EnvFitResult fit = fit_env_least_squares(sample.image, *sample.albedo_gt,
                                             *sample.normal_gt);
    benchmark::DoNotOptimize(fit.residual_mad);
  }
}
BENCHMARK(BM_FitEnvLeastSquares)->Arg(96)->Unit(benchmark::kMillisecond);

void BM_RenderProbe(benchmark::State& state) {
  EnvironmentMap env = make_env_map();
  env.at(2, 5, 0) = 1.0;
  env.at(2, 5, 1) = 0.9;
  env.at(2, 5, 2) = 0.8;
  for (auto _ : state) {
    ProbeRender probe = render_probe(env, static_cast<int>(state.range(0)));
    benchmark::DoNotOptimize(probe.image.pixels.data());
  }
}
BENCHMARK(BM_RenderProbe)->Arg(64)->Arg(128);

}  // namespace
