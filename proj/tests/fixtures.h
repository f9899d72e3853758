// invrender: single-image inverse rendering toolkit.
// SPDX-License-Identifier: Apache-2.0
//
// Shared analytic fixture sets for training tests and the acceptance suite.

#pragma once

#include <string>
#include <vector>

#include "invrender/scene.h"
#include "invrender/training.h"

namespace invrender::fixtures {

struct FixtureSet {
  std::vector<SceneSample> samples;
  std::vector<const SceneSample*> view() {
    std::vector<const SceneSample*> v;
    for (auto& s : samples) v.push_back(&s);
    return v;
  }
  std::vector<const SceneSample*> shadowed() {
    std::vector<const SceneSample*> v;
    for (auto& s : samples)
      if (s.id.find("shadow") != std::string::npos) v.push_back(&s);
    return v;
  }
  std::vector<const SceneSample*> clean() {
    std::vector<const SceneSample*> v;
    for (auto& s : samples)
      if (s.id.find("shadow") == std::string::npos) v.push_back(&s);
    return v;
  }
};

// Indoor-ish environment pool: a few bright blobs in the upper hemisphere
// over a dim ambient floor.
inline std::vector<EnvironmentMap> make_env_pool(int count, uint64_t seed) {
  std::vector<EnvironmentMap> pool;
  Rng rng(seed);
  for (int i = 0; i < count; ++i) {
    EnvironmentMap env = make_env_map();
    int lights = 2 + static_cast<int>(rng.next_u64() % 3);
    for (int l = 0; l < lights; ++l) {
      int r = static_cast<int>(rng.next_u64() % (env.rows / 2));
      int c = static_cast<int>(rng.next_u64() % env.cols);
      real p = rng.uniform(0.25, 0.9);
      for (int k = 0; k < 3; ++k) env.at(r, c, k) += p * rng.uniform(0.6, 1.0);
    }
    for (real& v : env.radiance) v += 2e-4;
    pool.push_back(std::move(env));
  }
  return pool;
}

struct FixtureOptions {
  int count = 8;
  int height = 48;
  int width = 64;
  uint64_t seed = 1;
  int shadowed = 0;      // first `shadowed` samples carry shadow blobs
  int judgments = 0;
  std::string prefix = "syn";
};

// Sphere-over-plane scenes with per-scene albedos and small random envs;
// exact ground truth throughout.
inline FixtureSet make_fixture_set(const FixtureOptions& opt) {
  FixtureSet set;
  Rng rng(opt.seed);
  for (int i = 0; i < opt.count; ++i) {
    AnalyticSceneSpec spec;
    spec.height = opt.height;
    spec.width = opt.width;
    bool with_shadow = i < opt.shadowed;
    spec.id = opt.prefix + std::to_string(i) + (with_shadow ? "_shadow" : "");
    spec.judgment_count = opt.judgments;

    SphereSpec sphere;
    sphere.center[0] = rng.uniform(-0.5, 0.5);
    sphere.center[1] = rng.uniform(-0.1, 0.4);
    sphere.center[2] = -4.0 + rng.uniform(-0.4, 0.4);
    sphere.radius = rng.uniform(0.9, 1.3);
    // Strong two-tone albedo contrast makes judgments informative.
    real sphere_level = rng.uniform(0.15, 0.4);
    real plane_level = rng.uniform(0.6, 0.95);
    if (i % 2 == 1) std::swap(sphere_level, plane_level);
    for (int k = 0; k < 3; ++k)
      sphere.albedo[k] = sphere_level * rng.uniform(0.85, 1.15);
    spec.spheres.push_back(sphere);

    PlaneSpec plane;
    plane.point[1] = sphere.center[1] - sphere.radius;
    for (int k = 0; k < 3; ++k)
      plane.albedo[k] = plane_level * rng.uniform(0.85, 1.15);
    spec.planes.push_back(plane);

    spec.env = make_env_map();
    int lights = 2 + static_cast<int>(rng.next_u64() % 2);
    for (int l = 0; l < lights; ++l) {
      int r = static_cast<int>(rng.next_u64() % (spec.env.rows / 2));
      int c = static_cast<int>(rng.next_u64() % spec.env.cols);
      real p = rng.uniform(0.35, 0.8);
      for (int k = 0; k < 3; ++k)
        spec.env.at(r, c, k) += p * rng.uniform(0.7, 1.0);
    }
    for (real& v : spec.env.radiance) v += 2e-4;

    if (with_shadow) {
      ShadowBlobSpec blob;
      blob.x = rng.uniform(0.3, 0.7);
      blob.y = rng.uniform(0.45, 0.75);
      blob.radius = rng.uniform(0.2, 0.32);
      blob.strength = rng.uniform(0.4, 0.6);
      spec.shadows.push_back(blob);
    }
    set.samples.push_back(generate_analytic_scene(spec, opt.seed * 1000 + i));
  }
  return set;
}

// Shared smoke-scale config: small channels, short budgets, early stop.
inline TrainConfig smoke_config(Stage stage, int steps, uint64_t seed,
                                real lr = 1e-3) {
  TrainConfig cfg;
  cfg.stage = stage;
  cfg.model.input_height = 48;
  cfg.model.input_width = 64;
  cfg.model.base_channels = 8;
  cfg.steps = steps;
  cfg.batch_size = 4;
  cfg.seed = seed;
  cfg.optimizer.lr = lr;
  cfg.checkpoint_every = 0;  // tests manage checkpoints explicitly
  cfg.stop_at_fraction = 0.05;
  cfg.smooth_window = 10;
  return cfg;
}

}  // namespace invrender::fixtures
