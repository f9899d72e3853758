// invrender: single-image inverse rendering toolkit.
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>

#include "invrender/bridge.h"
#include "invrender/nn.h"
#include "invrender/renderer.h"
#include "invrender/scene.h"
#include "invrender/tensor_ops.h"

using namespace invrender;

namespace {

// Independent scalar triple-loop shading oracle: per pixel p, channel k,
//   out[p,k] = A[p,k] * sum_i w_i * max(0, N_p . d_i) * L[i,k].
Image shade_oracle(const Image& albedo, const Image& normals, const Mask& mask,
                   const EnvironmentMap& env, bool solid_angle) {
  Image out(albedo.height(), albedo.width(), 3, 0.0);
  for (int y = 0; y < albedo.height(); ++y) {
    for (int x = 0; x < albedo.width(); ++x) {
      if (!mask.at(y, x)) continue;
      for (int k = 0; k < 3; ++k) {
        real acc = 0.0;
        for (int r = 0; r < env.rows; ++r) {
          for (int c = 0; c < env.cols; ++c) {
            int i = r * env.cols + c;
            real dot = normals.at(y, x, 0) * env.grid.directions[i][0] +
                       normals.at(y, x, 1) * env.grid.directions[i][1] +
                       normals.at(y, x, 2) * env.grid.directions[i][2];
            real w = solid_angle ? env.grid.solid_angles[i] : 1.0;
            acc += w * std::max(0.0, dot) * env.at(r, c, k);
          }
        }
        out.at(y, x, k) = albedo.at(y, x, k) * acc;
      }
    }
  }
  return out;
}

struct RandomMaps {
  AlbedoMap albedo;
  NormalMap normal;
  EnvironmentMap env;
};

RandomMaps random_maps(int h, int w, Rng& rng, bool with_holes = true) {
  RandomMaps m;
  m.albedo.pixels = Image(h, w, 3);
  m.normal.vectors = Image(h, w, 3);
  m.normal.valid = Mask(h, w, true);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) m.albedo.pixels.at(y, x, c) = rng.uniform();
      real n0 = rng.normal(), n1 = rng.normal(), n2 = rng.normal();
      real norm = std::sqrt(n0 * n0 + n1 * n1 + n2 * n2);
      if (norm < 1e-6) {
        n0 = 1;
        n1 = n2 = 0;
        norm = 1;
      }
      m.normal.vectors.at(y, x, 0) = n0 / norm;
      m.normal.vectors.at(y, x, 1) = n1 / norm;
      m.normal.vectors.at(y, x, 2) = n2 / norm;
      if (with_holes && rng.uniform() < 0.1) m.normal.valid.set(y, x, false);
    }
  m.env = make_env_map();
  for (real& v : m.env.radiance) v = rng.uniform();
  return m;
}

}  // namespace

TEST_CASE("shade_direct matches the scalar triple-loop oracle") {
  Rng rng(1234);
  for (int trial = 0; trial < 10; ++trial) {
    RandomMaps m = random_maps(8, 8, rng);
    for (bool solid_angle : {false, true}) {
      EnvWeighting w = solid_angle ? EnvWeighting::kSolidAngle
                                   : EnvWeighting::kLiteralSum;
      ImageMap got = shade_direct(m.albedo, m.normal, m.env, w);
      Image expect = shade_oracle(m.albedo.pixels, m.normal.vectors,
                                  m.normal.valid, m.env, solid_angle);
      for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x)
          for (int c = 0; c < 3; ++c)
            CHECK(std::abs(got.pixels.at(y, x, c) - expect.at(y, x, c)) <
                  1e-6);
    }
  }
}

TEST_CASE("tensor path agrees with the image path") {
  Rng rng(77);
  RandomMaps m = random_maps(6, 9, rng);
  ImageMap plain = shade_direct(m.albedo, m.normal, m.env);
  Tensor out = shade_direct_t(image_to_tensor(m.albedo.pixels),
                              image_to_tensor(m.normal.vectors),
                              env_to_tensor(m.env), m.env.grid,
                              mask_to_tensor(m.normal.valid));
  Image out_img = tensor_to_image(out);
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 9; ++x)
      for (int c = 0; c < 3; ++c)
        CHECK(std::abs(out_img.at(y, x, c) - plain.pixels.at(y, x, c)) < 1e-9);
}

TEST_CASE("zero albedo renders black; single-lit-cell identity") {
  EnvironmentMap env = make_env_map();
  int r = 4, c = 11;
  int i = r * env.cols + c;
  for (int k = 0; k < 3; ++k) env.at(r, c, k) = 1.0;

  AlbedoMap albedo{Image(3, 3, 3, 1.0)};
  NormalMap normal;
  normal.vectors = Image(3, 3, 3, 0.0);
  normal.valid = Mask(3, 3, true);
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 3; ++x)
      for (int k = 0; k < 3; ++k)
        normal.vectors.at(y, x, k) = env.grid.directions[i][k];

  ImageMap lit = shade_direct(albedo, normal, env);
  // N . d = 1 exactly at the lit cell; all other cells are dark.
  for (int k = 0; k < 3; ++k)
    CHECK(lit.pixels.at(1, 1, k) == doctest::Approx(1.0).epsilon(1e-12));

  AlbedoMap zero{Image(3, 3, 3, 0.0)};
  ImageMap black = shade_direct(zero, normal, env);
  for (size_t j = 0; j < black.pixels.size(); ++j)
    CHECK(black.pixels.data()[j] == 0.0);
}

TEST_CASE("linearity, additivity and nonnegativity") {
  Rng rng(555);
  RandomMaps m = random_maps(5, 7, rng);
  EnvironmentMap env2 = make_env_map();
  for (real& v : env2.radiance) v = rng.uniform();

  ImageMap base = shade_direct(m.albedo, m.normal, m.env);

  AlbedoMap scaled{Image(5, 7, 3)};
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 7; ++x)
      for (int c = 0; c < 3; ++c)
        scaled.pixels.at(y, x, c) = 0.5 * m.albedo.pixels.at(y, x, c);
  ImageMap half = shade_direct(scaled, m.normal, m.env);
  for (size_t j = 0; j < base.pixels.size(); ++j)
    CHECK(std::abs(half.pixels.data()[j] - 0.5 * base.pixels.data()[j]) <
          1e-6);

  EnvironmentMap env_sum = make_env_map();
  for (size_t j = 0; j < env_sum.radiance.size(); ++j)
    env_sum.radiance[j] = m.env.radiance[j] + env2.radiance[j];
  ImageMap a = shade_direct(m.albedo, m.normal, m.env);
  ImageMap b = shade_direct(m.albedo, m.normal, env2);
  ImageMap ab = shade_direct(m.albedo, m.normal, env_sum);
  for (size_t j = 0; j < ab.pixels.size(); ++j) {
    CHECK(std::abs(ab.pixels.data()[j] -
                   (a.pixels.data()[j] + b.pixels.data()[j])) < 1e-6);
    CHECK(ab.pixels.data()[j] >= 0.0);
  }
}

TEST_CASE("back-facing pixels render exactly zero") {
  EnvironmentMap env = make_env_map();
  // Light only the upper hemisphere (+z rows).
  for (int r = 0; r < env.rows / 2; ++r)
    for (int c = 0; c < env.cols; ++c)
      for (int k = 0; k < 3; ++k) env.at(r, c, k) = 1.0;
  AlbedoMap albedo{Image(2, 2, 3, 1.0)};
  NormalMap normal;
  normal.vectors = Image(2, 2, 3, 0.0);
  normal.valid = Mask(2, 2, true);
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 2; ++x) normal.vectors.at(y, x, 2) = -1.0;  // -z
  ImageMap out = shade_direct(albedo, normal, env);
  for (size_t j = 0; j < out.pixels.size(); ++j)
    CHECK(out.pixels.data()[j] == 0.0);
}

TEST_CASE("shade_direct validates inputs") {
  Rng rng(3);
  RandomMaps m = random_maps(4, 4, rng, false);
  AlbedoMap wrong{Image(5, 4, 3, 0.5)};
  CHECK_THROWS_AS(shade_direct(wrong, m.normal, m.env), ArgumentError);
  m.normal.vectors.at(1, 1, 0) *= 1.5;
  CHECK_THROWS_AS(shade_direct(m.albedo, m.normal, m.env), ValidationError);
}

TEST_CASE("shade gradient matches finite differences off the kink") {
  Rng rng(9);
  RandomMaps m = random_maps(4, 5, rng, false);
  Tensor albedo = image_to_tensor(m.albedo.pixels);
  Tensor normal = image_to_tensor(m.normal.vectors);
  Tensor env = env_to_tensor(m.env);
  Tensor mask = mask_to_tensor(m.normal.valid);
  albedo.set_requires_grad(true);
  normal.set_requires_grad(true);
  env.set_requires_grad(true);

  auto loss_fn = [&] {
    return sum(shade_direct_t(albedo, normal, env, m.env.grid, mask));
  };
  Tensor loss = loss_fn();
  loss.backward();
  auto ga = albedo.grad();
  auto gn = normal.grad();
  auto ge = env.grad();

  auto probe = [&](Tensor& t, const std::vector<real>& grad, int64_t idx) {
    const real step = 1e-4;
    real saved = t.data()[idx];
    t.data()[idx] = saved + step;
    real up = loss_fn().item();
    t.data()[idx] = saved - step;
    real down = loss_fn().item();
    t.data()[idx] = saved;
    real fd = (up - down) / (2 * step);
    real denom = std::max({std::abs(fd), std::abs(grad[idx]), 1e-8});
    return std::abs(fd - grad[idx]) / denom;
  };

  Rng pick(31);
  const size_t plane = 20;
  for (int p = 0; p < 30; ++p) {
    CHECK(probe(albedo, ga,
                static_cast<int64_t>(pick.next_u64() % albedo.size())) < 1e-3);
    CHECK(probe(env, ge,
                static_cast<int64_t>(pick.next_u64() % env.size())) < 1e-3);
    // Normal probes must avoid the clamped-cosine kink: require the pixel's
    // dots to stay clear of zero.
    for (int attempt = 0; attempt < 50; ++attempt) {
      int64_t idx = static_cast<int64_t>(pick.next_u64() % normal.size());
      size_t pix = static_cast<size_t>(idx) % plane;
      real nx = normal.data()[pix], ny = normal.data()[plane + pix],
           nz = normal.data()[2 * plane + pix];
      real min_dot = 1e9;
      for (const auto& d : m.env.grid.directions)
        min_dot =
            std::min(min_dot, std::abs(nx * d[0] + ny * d[1] + nz * d[2]));
      if (min_dot <= 1e-3) continue;
      CHECK(probe(normal, gn, idx) < 1e-3);
      break;
    }
  }
}

TEST_CASE("probe rendering") {
  EnvironmentMap zero = make_env_map();
  ProbeRender dark = render_probe(zero, 32);
  for (size_t j = 0; j < dark.image.pixels.size(); ++j)
    CHECK(dark.image.pixels.data()[j] == 0.0);
  CHECK_THROWS_AS(render_probe(zero, 4), ArgumentError);

  // Single lit cell: the brightest probe pixel has the normal closest to
  // the lit direction.
  EnvironmentMap env = make_env_map();
  int r = 5, c = 7;
  int i = r * env.cols + c;
  for (int k = 0; k < 3; ++k) env.at(r, c, k) = 2.0;
  ProbeRender probe = render_probe(env, 65);
  real best = -1;
  int by = -1, bx = -1;
  for (int y = 0; y < 65; ++y)
    for (int x = 0; x < 65; ++x) {
      if (!probe.normals.valid.at(y, x)) continue;
      real v = probe.image.pixels.at(y, x, 0);
      if (v > best) {
        best = v;
        by = y;
        bx = x;
      }
    }
  REQUIRE(best > 0);
  real dot = 0;
  for (int k = 0; k < 3; ++k)
    dot += probe.normals.vectors.at(by, bx, k) * env.grid.directions[i][k];
  CHECK(dot > 0.97);
}

TEST_CASE("environment fit round trip on an analytic sphere") {
  AnalyticSceneSpec spec;
  spec.height = 96;
  spec.width = 128;
  SphereSpec sphere;
  sphere.center[2] = -3.0;
  sphere.radius = 1.4;
  sphere.albedo[0] = 0.8;
  sphere.albedo[1] = 0.6;
  sphere.albedo[2] = 0.5;
  spec.spheres.push_back(sphere);
  spec.env = make_env_map();
  spec.env.at(3, 9, 0) = 0.9;
  spec.env.at(3, 9, 1) = 0.8;
  spec.env.at(3, 9, 2) = 0.7;
  spec.env.at(6, 20, 0) = 0.3;
  spec.env.at(6, 20, 1) = 0.35;
  spec.env.at(6, 20, 2) = 0.4;
  for (real& v : spec.env.radiance) v += 1e-3;
  SceneSample sample = generate_analytic_scene(spec, 5);

  EnvFitResult fit =
      fit_env_least_squares(sample.image, *sample.albedo_gt, *sample.normal_gt);
  CHECK(fit.residual_mad < 1e-5);

  ImageMap recon = shade_direct(*sample.albedo_gt, *sample.normal_gt, fit.env);
  real mad = 0;
  size_t n = 0;
  for (int y = 0; y < spec.height; ++y)
    for (int x = 0; x < spec.width; ++x) {
      if (!sample.mask.at(y, x)) continue;
      for (int c = 0; c < 3; ++c) {
        mad += std::abs(recon.pixels.at(y, x, c) -
                        sample.image.pixels.at(y, x, c));
        ++n;
      }
    }
  CHECK(mad / n < 1e-5);
}

TEST_CASE("fit: black image gives zero env, fit never beats zero env") {
  AnalyticSceneSpec spec;
  spec.height = 64;
  spec.width = 64;
  spec.spheres.push_back({});
  spec.env = make_env_map();  // all dark
  SceneSample sample = generate_analytic_scene(spec, 2);
  EnvFitResult fit =
      fit_env_least_squares(sample.image, *sample.albedo_gt, *sample.normal_gt);
  for (real v : fit.env.radiance) CHECK(v == 0.0);

  // Inconsistent image (shadow blob): residual must not exceed the zero-env
  // objective sum(I^2).
  spec.env.at(2, 2, 0) = spec.env.at(2, 2, 1) = spec.env.at(2, 2, 2) = 0.6;
  spec.shadows.push_back({0.5, 0.5, 0.3, 0.7});
  SceneSample shadowed = generate_analytic_scene(spec, 3);
  real zero_obj = 0.0;
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) {
      if (!shadowed.mask.at(y, x)) continue;
      for (int c = 0; c < 3; ++c) {
        real v = shadowed.image.pixels.at(y, x, c);
        zero_obj += v * v;
      }
    }
  EnvFitResult fit2 = fit_env_least_squares(
      shadowed.image, *shadowed.albedo_gt, *shadowed.normal_gt);
  CHECK(fit2.residual_sumsq <= zero_obj + 1e-12);
}

TEST_CASE("fit on a plane flags the unlit hemisphere") {
  AnalyticSceneSpec spec;
  spec.height = 48;
  spec.width = 64;
  PlaneSpec plane;
  plane.point[0] = 0;
  plane.point[1] = 0;
  plane.point[2] = -4;
  plane.normal[0] = 0;
  plane.normal[1] = 0;
  plane.normal[2] = 1;  // facing the camera
  spec.planes.push_back(plane);
  spec.env = make_env_map();
  spec.env.at(2, 5, 0) = spec.env.at(2, 5, 1) = spec.env.at(2, 5, 2) = 0.5;
  SceneSample sample = generate_analytic_scene(spec, 4);

  EnvFitResult fit =
      fit_env_least_squares(sample.image, *sample.albedo_gt, *sample.normal_gt);
  // A single normal n=+z constrains only cells with d.z > 0.
  int flagged = 0;
  for (int i = 0; i < fit.env.cells(); ++i) {
    if (fit.env.grid.directions[i][2] <= 0.0) {
      CHECK(fit.uncovered[i] == 1);
      ++flagged;
    } else {
      CHECK(fit.uncovered[i] == 0);
    }
  }
  CHECK(flagged == fit.env.cells() / 2);
}
