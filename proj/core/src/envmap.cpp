// invrender: single-image inverse rendering toolkit.
// SPDX-License-Identifier: Apache-2.0

#include "invrender/envmap.h"

#include <cmath>
#include <numbers>

namespace invrender {

DirectionGrid direction_grid(int rows, int cols) {
  if (rows < 1 || cols < 1)
    throw ArgumentError("direction_grid: non-positive dimensions");
  DirectionGrid g;
  g.rows = rows;
  g.cols = cols;
  g.directions.resize(static_cast<size_t>(rows) * cols);
  g.solid_angles.resize(static_cast<size_t>(rows) * cols);
  const real pi = std::numbers::pi_v<real>;
  const real dphi = 2.0 * pi / cols;
  for (int r = 0; r < rows; ++r) {
    real theta_lo = pi * r / rows;
    real theta_hi = pi * (r + 1) / rows;
    real theta_c = pi * (r + 0.5) / rows;
    real band = std::cos(theta_lo) - std::cos(theta_hi);
    for (int c = 0; c < cols; ++c) {
      real phi_c = 2.0 * pi * (c + 0.5) / cols;
      real st = std::sin(theta_c);
      g.directions[g.index(r, c)] = {st * std::cos(phi_c),
                                     st * std::sin(phi_c), std::cos(theta_c)};
      g.solid_angles[g.index(r, c)] = band * dphi;
    }
  }
  return g;
}

EnvironmentMap make_env_map(int rows, int cols, real fill) {
  return EnvironmentMap(rows, cols, fill);
}

void validate(const EnvironmentMap& env) {
  if (env.rows < 1 || env.cols < 1)
    throw ValidationError("EnvironmentMap: empty grid");
  if (env.radiance.size() != static_cast<size_t>(env.rows) * env.cols * 3)
    throw ValidationError("EnvironmentMap: radiance size mismatch");
  for (real v : env.radiance) {
    if (!std::isfinite(v) || v < 0.0)
      throw ValidationError("EnvironmentMap: non-finite or negative radiance");
  }
  const real pi = std::numbers::pi_v<real>;
  real total = 0.0;
  for (real w : env.grid.solid_angles) {
    if (!(w > 0.0)) throw ValidationError("EnvironmentMap: non-positive solid angle");
    total += w;
  }
  if (std::abs(total - 4.0 * pi) > 1e-9)
    throw ValidationError("EnvironmentMap: solid angles do not sum to 4*pi");
  for (const auto& d : env.grid.directions) {
    real n = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
    if (std::abs(n - 1.0) > 1e-12)
      throw ValidationError("EnvironmentMap: non-unit direction");
  }
}

EnvironmentMap downsample_to_env(const Image& panorama, int rows, int cols) {
  if (panorama.channels() != 3)
    throw ArgumentError("downsample_to_env: expected 3-channel panorama");
  EnvironmentMap env(rows, cols);
  // Average all source texels whose center falls inside each target cell.
  std::vector<real> acc(static_cast<size_t>(rows) * cols * 3, 0.0);
  std::vector<int> cnt(static_cast<size_t>(rows) * cols, 0);
  for (int y = 0; y < panorama.height(); ++y) {
    int r = std::min(static_cast<int>((y + 0.5) * rows / panorama.height()),
                     rows - 1);
    for (int x = 0; x < panorama.width(); ++x) {
      int c = std::min(static_cast<int>((x + 0.5) * cols / panorama.width()),
                       cols - 1);
      size_t i = static_cast<size_t>(r) * cols + c;
      for (int k = 0; k < 3; ++k) acc[i * 3 + k] += panorama.at(y, x, k);
      cnt[i]++;
    }
  }
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      size_t i = static_cast<size_t>(r) * cols + c;
      if (cnt[i] == 0) continue;
      for (int k = 0; k < 3; ++k) env.at(r, c, k) = acc[i * 3 + k] / cnt[i];
    }
  }
  return env;
}

}  // namespace invrender
