// invrender: single-image inverse rendering toolkit.
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "invrender/metrics.h"
#include "invrender/nn.h"
#include "invrender/scene.h"

using namespace invrender;

namespace {

constexpr real kPi = std::numbers::pi_v<real>;

NormalMap random_normals(int h, int w, Rng& rng) {
  NormalMap m;
  m.vectors = Image(h, w, 3);
  m.valid = Mask(h, w, true);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      real a = rng.normal(), b = rng.normal(), c = rng.normal();
      real n = std::max(std::sqrt(a * a + b * b + c * c), 1e-9);
      m.vectors.at(y, x, 0) = a / n;
      m.vectors.at(y, x, 1) = b / n;
      m.vectors.at(y, x, 2) = c / n;
    }
  return m;
}

// Rodrigues rotation about unit axis k.
std::array<real, 3> rotate(const std::array<real, 3>& v,
                           const std::array<real, 3>& k, real angle) {
  real c = std::cos(angle), s = std::sin(angle);
  real dot = k[0] * v[0] + k[1] * v[1] + k[2] * v[2];
  std::array<real, 3> cross{k[1] * v[2] - k[2] * v[1],
                            k[2] * v[0] - k[0] * v[2],
                            k[0] * v[1] - k[1] * v[0]};
  std::array<real, 3> out;
  for (int i = 0; i < 3; ++i)
    out[i] = v[i] * c + cross[i] * s + k[i] * dot * (1 - c);
  return out;
}

NormalMap rotate_all(const NormalMap& m, const std::array<real, 3>& axis,
                     real angle) {
  NormalMap out = m;
  for (int y = 0; y < m.vectors.height(); ++y)
    for (int x = 0; x < m.vectors.width(); ++x) {
      std::array<real, 3> v{m.vectors.at(y, x, 0), m.vectors.at(y, x, 1),
                            m.vectors.at(y, x, 2)};
      auto r = rotate(v, axis, angle);
      for (int c = 0; c < 3; ++c) out.vectors.at(y, x, c) = r[c];
    }
  return out;
}

}  // namespace

TEST_CASE("whdr matches hand-built cases") {
  const int h = 16, w = 16;
  AlbedoMap albedo{Image(h, w, 3)};
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        albedo.pixels.at(h - 1 - y, x, c) = 0.2;  // placeholder
  // Left half 0.3, right half 0.6: point1 (left) is darker.
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        albedo.pixels.at(y, x, c) = x < w / 2 ? 0.3 : 0.6;
  Mask mask(h, w, true);

  ReflectanceJudgment correct;
  correct.x1 = 0.25;
  correct.y1 = 0.5;
  correct.x2 = 0.75;
  correct.y2 = 0.5;
  correct.relation = ReflectanceRelation::kPoint1Darker;
  correct.weight = 1.0;
  CHECK(whdr(albedo, mask, {correct}) == doctest::Approx(0.0));

  // Constant albedo: EQUAL judgments are all satisfied, DARKER all violated.
  AlbedoMap flat{Image(h, w, 3, 0.5)};
  ReflectanceJudgment equal = correct;
  equal.relation = ReflectanceRelation::kEqual;
  CHECK(whdr(flat, mask, {equal}) == doctest::Approx(0.0));
  CHECK(whdr(flat, mask, {correct}) == doctest::Approx(100.0));

  // Three weighted judgments, one violated carrying w=2 of total 4 -> 50%.
  ReflectanceJudgment majority1 = correct;            // satisfied, w=1
  ReflectanceJudgment majority2 = equal;              // violated on two-tone
  majority2.relation = ReflectanceRelation::kEqual;   // ratio 2 > 1.1
  majority2.weight = 2.0;
  ReflectanceJudgment majority3 = correct;            // satisfied, w=1
  CHECK(whdr(albedo, mask, {majority1, majority2, majority3}) ==
        doctest::Approx(50.0));

  // Zero usable weight errors.
  Mask empty(h, w, false);
  CHECK_THROWS_AS(whdr(albedo, empty, {correct}), ArgumentError);
}

TEST_CASE("whdr is invariant to positive albedo scaling") {
  Rng rng(71);
  AnalyticSceneSpec spec;
  spec.height = 32;
  spec.width = 32;
  SphereSpec sphere;
  sphere.albedo[0] = sphere.albedo[1] = sphere.albedo[2] = 0.25;
  spec.spheres.push_back(sphere);
  PlaneSpec plane;
  plane.point[1] = -1.2;
  plane.albedo[0] = plane.albedo[1] = plane.albedo[2] = 0.7;
  spec.planes.push_back(plane);
  spec.env = make_env_map();
  spec.env.at(1, 1, 0) = 0.5;
  spec.judgment_count = 30;
  SceneSample s = generate_analytic_scene(spec, 13);

  // Perturb albedo so some judgments are violated.
  AlbedoMap noisy = *s.albedo_gt;
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x)
      for (int c = 0; c < 3; ++c)
        noisy.pixels.at(y, x, c) =
            std::clamp(noisy.pixels.at(y, x, c) + rng.uniform(-0.2, 0.2), 0.01,
                       1.0);
  real base = whdr(noisy, s.mask, s.judgments);
  AlbedoMap scaled = noisy;
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x)
      for (int c = 0; c < 3; ++c) scaled.pixels.at(y, x, c) *= 0.37;
  CHECK(whdr(scaled, s.mask, s.judgments) == doctest::Approx(base));
}

TEST_CASE("median angular error: identity, fixed rotation, oracle") {
  Rng rng(73);
  NormalMap a = random_normals(9, 11, rng);
  CHECK(median_angular_error(a, a) == doctest::Approx(0.0));

  // Tilting every normal by exactly 10 degrees (about a per-pixel axis
  // perpendicular to it) gives a constant 10-degree error.
  NormalMap rotated10 = a;
  for (int y = 0; y < 9; ++y)
    for (int x = 0; x < 11; ++x) {
      std::array<real, 3> v{a.vectors.at(y, x, 0), a.vectors.at(y, x, 1),
                            a.vectors.at(y, x, 2)};
      std::array<real, 3> ref{1, 0, 0};
      if (std::abs(v[0]) > 0.9) ref = {0, 1, 0};
      std::array<real, 3> perp{v[1] * ref[2] - v[2] * ref[1],
                               v[2] * ref[0] - v[0] * ref[2],
                               v[0] * ref[1] - v[1] * ref[0]};
      real pn = std::sqrt(perp[0] * perp[0] + perp[1] * perp[1] +
                          perp[2] * perp[2]);
      for (auto& p : perp) p /= pn;
      auto r = rotate(v, perp, 10.0 * kPi / 180.0);
      for (int c = 0; c < 3; ++c) rotated10.vectors.at(y, x, c) = r[c];
    }
  CHECK(median_angular_error(a, rotated10) ==
        doctest::Approx(10.0).epsilon(1e-9));

  std::array<real, 3> axis{0.48, -0.6, 0.64};
  real n = std::sqrt(axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]);
  for (auto& v : axis) v /= n;

  // Symmetry and invariance to a global rotation of both maps.
  NormalMap b = random_normals(9, 11, rng);
  real ab = median_angular_error(a, b);
  real ba = median_angular_error(b, a);
  CHECK(ab == doctest::Approx(ba));
  NormalMap ar = rotate_all(a, axis, 0.7);
  NormalMap br = rotate_all(b, axis, 0.7);
  CHECK(median_angular_error(ar, br) == doctest::Approx(ab).epsilon(1e-9));

  // Scalar oracle: sort per-pixel angles.
  std::vector<real> angles;
  for (int y = 0; y < 9; ++y)
    for (int x = 0; x < 11; ++x) {
      real dot = 0;
      for (int c = 0; c < 3; ++c)
        dot += a.vectors.at(y, x, c) * b.vectors.at(y, x, c);
      angles.push_back(std::acos(std::clamp(dot, -1.0, 1.0)) * 180.0 / kPi);
    }
  std::sort(angles.begin(), angles.end());
  size_t m = angles.size();
  real expect = m % 2 == 1 ? angles[m / 2]
                           : 0.5 * (angles[m / 2 - 1] + angles[m / 2]);
  CHECK(ab == doctest::Approx(expect).epsilon(1e-9));

  NormalMap empty = a;
  empty.valid = Mask(9, 11, false);
  CHECK_THROWS_AS(median_angular_error(empty, b), ArgumentError);
}

TEST_CASE("rmse and mad") {
  Rng rng(79);
  Image a(6, 7, 3), b(6, 7, 3);
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 7; ++x)
      for (int c = 0; c < 3; ++c) {
        a.at(y, x, c) = rng.uniform();
        b.at(y, x, c) = rng.uniform();
      }
  Mask mask(6, 7, true);
  mask.set(3, 3, false);

  auto [rmse0, mad0] = rmse_mad(a, a, mask);
  CHECK(rmse0 == 0.0);
  CHECK(mad0 == 0.0);

  Image shifted = a;
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 7; ++x)
      for (int c = 0; c < 3; ++c) shifted.at(y, x, c) += 0.1;
  auto [rmse1, mad1] = rmse_mad(shifted, a, mask);
  CHECK(rmse1 == doctest::Approx(0.1).epsilon(1e-9));
  CHECK(mad1 == doctest::Approx(0.1).epsilon(1e-9));

  // Scalar oracle.
  real sq = 0, ab_acc = 0;
  size_t n = 0;
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 7; ++x) {
      if (!mask.at(y, x)) continue;
      for (int c = 0; c < 3; ++c) {
        real d = a.at(y, x, c) - b.at(y, x, c);
        sq += d * d;
        ab_acc += std::abs(d);
        ++n;
      }
    }
  auto [rmse2, mad2] = rmse_mad(a, b, mask);
  CHECK(rmse2 == doctest::Approx(std::sqrt(sq / n)).epsilon(1e-12));
  CHECK(mad2 == doctest::Approx(ab_acc / n).epsilon(1e-12));

  Mask empty(6, 7, false);
  CHECK_THROWS_AS(rmse_mad(a, b, empty), ArgumentError);
}

TEST_CASE("environment map error is solid-angle weighted") {
  Rng rng(83);
  EnvironmentMap a = make_env_map();
  EnvironmentMap b = make_env_map();
  for (real& v : a.radiance) v = rng.uniform();
  for (real& v : b.radiance) v = rng.uniform();

  CHECK(env_map_error(a, a) == 0.0);

  EnvironmentMap shifted = a;
  for (real& v : shifted.radiance) v += 0.2;
  CHECK(env_map_error(shifted, a) == doctest::Approx(0.2).epsilon(1e-12));

  // Scalar oracle.
  real num = 0, den = 0;
  for (int i = 0; i < a.cells(); ++i) {
    real w = a.grid.solid_angles[i];
    den += w;
    real acc = 0;
    for (int k = 0; k < 3; ++k)
      acc += std::abs(a.radiance[i * 3 + k] - b.radiance[i * 3 + k]);
    num += w * acc / 3.0;
  }
  CHECK(env_map_error(a, b) == doctest::Approx(num / den).epsilon(1e-12));

  // Linearity under joint scaling.
  EnvironmentMap a2 = a, b2 = b;
  for (real& v : a2.radiance) v *= 2.5;
  for (real& v : b2.radiance) v *= 2.5;
  CHECK(env_map_error(a2, b2) ==
        doctest::Approx(2.5 * env_map_error(a, b)).epsilon(1e-9));

  EnvironmentMap small(9, 18);
  CHECK_THROWS_AS(env_map_error(a, small), ArgumentError);
}

TEST_CASE("image reconstruction error") {
  AnalyticSceneSpec spec;
  spec.height = 24;
  spec.width = 24;
  spec.spheres.push_back({});
  spec.env = make_env_map();
  spec.env.at(2, 4, 0) = spec.env.at(2, 4, 1) = spec.env.at(2, 4, 2) = 0.6;
  SceneSample s = generate_analytic_scene(spec, 21);

  CHECK(image_recon_error(s.image, *s.albedo_gt, *s.normal_gt, *s.env_gt) ==
        doctest::Approx(0.0).epsilon(1e-12));

  EnvironmentMap zero = make_env_map();
  real mean_i = 0;
  size_t n = 0;
  for (int y = 0; y < 24; ++y)
    for (int x = 0; x < 24; ++x) {
      if (!s.mask.at(y, x)) continue;
      for (int c = 0; c < 3; ++c) {
        mean_i += s.image.pixels.at(y, x, c);
        ++n;
      }
    }
  CHECK(image_recon_error(s.image, *s.albedo_gt, *s.normal_gt, zero) ==
        doctest::Approx(mean_i / n).epsilon(1e-12));
}

TEST_CASE("probe error aligns exposure by median intensity") {
  EnvironmentMap env = make_env_map();
  env.at(4, 9, 0) = 1.1;
  env.at(4, 9, 1) = 0.9;
  env.at(4, 9, 2) = 0.8;
  auto [rmse_same, mad_same] = probe_error(env, env);
  CHECK(rmse_same == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(mad_same == doctest::Approx(0.0).epsilon(1e-12));

  // A uniformly scaled environment matches after median alignment.
  EnvironmentMap scaled = env;
  for (real& v : scaled.radiance) v *= 3.0;
  auto [rmse_scaled, mad_scaled] = probe_error(scaled, env);
  CHECK(rmse_scaled == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(mad_scaled == doctest::Approx(0.0).epsilon(1e-9));
}
