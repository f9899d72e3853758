// invrender: single-image inverse rendering toolkit.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <vector>

#include "invrender/image.h"

namespace invrender {

inline constexpr int kEnvRows = 18;
inline constexpr int kEnvCols = 36;

// Equirectangular direction/solid-angle convention: row r spans polar angle
// theta in [pi*r/R, pi*(r+1)/R] measured from +z, column c spans azimuth
// phi in [2*pi*c/C, 2*pi*(c+1)/C]; directions are evaluated at cell centers,
// solid angle per cell is (cos(theta_lo) - cos(theta_hi)) * dphi.
struct DirectionGrid {
  int rows = 0;
  int cols = 0;
  std::vector<std::array<real, 3>> directions;  // rows*cols unit vectors
  std::vector<real> solid_angles;               // rows*cols, sums to 4*pi

  int cells() const { return rows * cols; }
  int index(int r, int c) const { return r * cols + c; }
};

DirectionGrid direction_grid(int rows, int cols);

// Low-resolution HDR incident radiance over the sphere.
struct EnvironmentMap {
  int rows = 0;
  int cols = 0;
  std::vector<real> radiance;  // rows*cols*3, interleaved RGB
  DirectionGrid grid;

  EnvironmentMap() = default;
  EnvironmentMap(int r, int c, real fill = 0.0)
      : rows(r), cols(c), radiance(static_cast<size_t>(r) * c * 3, fill),
        grid(direction_grid(r, c)) {}

  int cells() const { return rows * cols; }
  real& at(int r, int c, int k) {
    return radiance[(static_cast<size_t>(r) * cols + c) * 3 + k];
  }
  real at(int r, int c, int k) const {
    return radiance[(static_cast<size_t>(r) * cols + c) * 3 + k];
  }
  bool same_grid(const EnvironmentMap& other) const {
    return rows == other.rows && cols == other.cols;
  }
};

EnvironmentMap make_env_map(int rows = kEnvRows, int cols = kEnvCols,
                            real fill = 0.0);

// Radiance finite and >= 0; grid invariants.
void validate(const EnvironmentMap& env);

// Area-averaged downsample onto a rows x cols grid (used when ingesting
// HDR panoramas of higher resolution).
EnvironmentMap downsample_to_env(const Image& panorama, int rows = kEnvRows,
                                 int cols = kEnvCols);

}  // namespace invrender
