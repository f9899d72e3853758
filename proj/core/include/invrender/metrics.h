// invrender: single-image inverse rendering toolkit.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <utility>
#include <vector>

#include "invrender/envmap.h"
#include "invrender/image.h"
#include "invrender/renderer.h"
#include "invrender/scene.h"

namespace invrender {

struct MetricReport {
  std::string name;
  real value = 0.0;
  std::string units;
  int sample_count = 0;
  std::vector<real> per_sample;
};

// Weighted Human Disagreement Rate in percent. Predicted relation from
// patch-luminance ratios: "1" if R2/R1 > 1+delta, "2" if R1/R2 > 1+delta,
// else equal. Judgments whose endpoints fall outside the mask are skipped.
real whdr(const AlbedoMap& albedo, const Mask& mask,
          const std::vector<ReflectanceJudgment>& judgments, real delta = 0.10,
          int patch_radius = 1);

// Median over shared-valid pixels of the angle between unit normals, in
// degrees. Even counts take the mean of the two central values.
real median_angular_error(const NormalMap& pred, const NormalMap& gt);

// Masked (RMSE, MAD) over all channels.
std::pair<real, real> rmse_mad(const Image& pred, const Image& gt,
                               const Mask& mask);

// Solid-angle-weighted mean absolute deviation, averaged over channels.
real env_map_error(const EnvironmentMap& pred, const EnvironmentMap& gt);

// Masked MAD between the image and its direct-render reconstruction.
real image_recon_error(const ImageMap& image, const AlbedoMap& albedo,
                       const NormalMap& normal, const EnvironmentMap& env,
                       EnvWeighting weighting = EnvWeighting::kLiteralSum);

// Diffuse-probe lighting comparison: renders probes under both environment
// maps, aligns median intensities over the disk, and reports (RMSE, MAD).
std::pair<real, real> probe_error(const EnvironmentMap& pred,
                                  const EnvironmentMap& gt, int resolution = 64,
                                  EnvWeighting weighting =
                                      EnvWeighting::kLiteralSum);

}  // namespace invrender
