// invrender: single-image inverse rendering toolkit.
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <numbers>

#include "invrender/envmap.h"

using namespace invrender;

namespace {
constexpr real kPi = std::numbers::pi_v<real>;
}

TEST_CASE("direction_grid 18x36 covers the sphere") {
  DirectionGrid g = direction_grid(18, 36);
  real total = 0.0;
  for (real w : g.solid_angles) {
    CHECK(w > 0.0);
    total += w;
  }
  CHECK(std::abs(total - 4.0 * kPi) < 1e-9);
  for (const auto& d : g.directions) {
    real n = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
    CHECK(std::abs(n - 1.0) < 1e-12);
  }
}

TEST_CASE("direction_grid degenerate 1x1 covers full sphere") {
  DirectionGrid g = direction_grid(1, 1);
  REQUIRE(g.cells() == 1);
  CHECK(std::abs(g.solid_angles[0] - 4.0 * kPi) < 1e-12);
}

TEST_CASE("direction_grid cell (0,0) matches the closed form") {
  DirectionGrid g = direction_grid(18, 36);
  const real theta = kPi / 36.0;
  const real phi = kPi / 36.0;
  const auto& d = g.directions[0];
  CHECK(d[0] == doctest::Approx(std::sin(theta) * std::cos(phi)).epsilon(1e-14));
  CHECK(d[1] == doctest::Approx(std::sin(theta) * std::sin(phi)).epsilon(1e-14));
  CHECK(d[2] == doctest::Approx(std::cos(theta)).epsilon(1e-14));
  // Solid angle of the first band cell.
  real expected =
      (std::cos(0.0) - std::cos(kPi / 18.0)) * (2.0 * kPi / 36.0);
  CHECK(g.solid_angles[0] == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("direction_grid rejects non-positive dimensions") {
  CHECK_THROWS_AS(direction_grid(0, 36), ArgumentError);
  CHECK_THROWS_AS(direction_grid(18, -1), ArgumentError);
}

TEST_CASE("environment map validation") {
  EnvironmentMap env = make_env_map();
  CHECK_NOTHROW(validate(env));
  env.at(0, 0, 0) = -0.5;
  CHECK_THROWS_AS(validate(env), ValidationError);
  env.at(0, 0, 0) = std::numeric_limits<real>::quiet_NaN();
  CHECK_THROWS_AS(validate(env), ValidationError);
}

TEST_CASE("panorama downsample averages onto the grid") {
  Image pano(36, 72, 3, 0.0);
  for (int y = 0; y < 36; ++y)
    for (int x = 0; x < 72; ++x)
      for (int c = 0; c < 3; ++c) pano.at(y, x, c) = 2.5;
  EnvironmentMap env = downsample_to_env(pano, 18, 36);
  for (real v : env.radiance) CHECK(v == doctest::Approx(2.5));
}
