// invrender: single-image inverse rendering toolkit.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "invrender/envmap.h"
#include "invrender/image.h"
#include "invrender/tensor.h"

namespace invrender {

// The sum over environment cells either follows the plain formulation
// (weight 1 per cell, the default) or weights each cell by its solid angle.
enum class EnvWeighting { kLiteralSum, kSolidAngle };

// Closed-form direct illumination. Per pixel p and channel k:
//   out[p,k] = albedo[p,k] * sum_i w_i * max(0, N_p . d_i) * L[i,k]
// Masked pixels render 0. Normals must be unit within 1e-3 on valid pixels
// and are renormalized before the dot product.
ImageMap shade_direct(const AlbedoMap& albedo, const NormalMap& normal,
                      const EnvironmentMap& env,
                      EnvWeighting weighting = EnvWeighting::kLiteralSum);

// Differentiable path over batches. albedo/normal: [N,3,H,W]; env: [N,3,M]
// with M == grid.cells(); mask: [N,1,H,W] of {0,1} (constant). Gradients
// flow into albedo, normal (through renormalization) and env radiance.
Tensor shade_direct_t(const Tensor& albedo, const Tensor& normal,
                      const Tensor& env, const DirectionGrid& grid,
                      const Tensor& mask,
                      EnvWeighting weighting = EnvWeighting::kLiteralSum);

// Orthographic view of a unit diffuse sphere (albedo 1) under `env`;
// pixels outside the disk are masked invalid.
struct ProbeRender {
  ImageMap image;
  NormalMap normals;
};
ProbeRender render_probe(const EnvironmentMap& env, int resolution,
                         EnvWeighting weighting = EnvWeighting::kLiteralSum);

// Nonnegative least-squares fit of environment radiance to an image given
// albedo and normals: minimizes sum_p ||I[p] - shade(A,N,L)[p]||^2 s.t.
// L >= 0. Warm-started projected gradient with a fixed iteration budget.
struct EnvFitOptions {
  int rows = kEnvRows;
  int cols = kEnvCols;
  EnvWeighting weighting = EnvWeighting::kLiteralSum;
  int max_iterations = 2000;
  real tolerance = 1e-10;
};

struct EnvFitResult {
  EnvironmentMap env;
  // Cells never illuminated by any valid pixel's positive hemisphere; such
  // cells are unconstrained by the data and pinned to zero.
  std::vector<uint8_t> uncovered;
  real residual_mad = 0.0;          // masked MAD of the reconstruction
  real residual_sumsq = 0.0;        // final least-squares objective
  int iterations = 0;
};

EnvFitResult fit_env_least_squares(const ImageMap& image,
                                   const AlbedoMap& albedo,
                                   const NormalMap& normal,
                                   const EnvFitOptions& options = {});

}  // namespace invrender
