// invrender: single-image inverse rendering toolkit.
// SPDX-License-Identifier: Apache-2.0

#include "invrender/metrics.h"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "invrender/losses.h"

namespace invrender {

real whdr(const AlbedoMap& albedo, const Mask& mask,
          const std::vector<ReflectanceJudgment>& judgments, real delta,
          int patch_radius) {
  const Image& a = albedo.pixels;
  real weight_total = 0.0, weight_wrong = 0.0;
  for (const auto& j : judgments) {
    int y1 = coord_to_pixel(j.y1, a.height());
    int x1 = coord_to_pixel(j.x1, a.width());
    int y2 = coord_to_pixel(j.y2, a.height());
    int x2 = coord_to_pixel(j.x2, a.width());
    real r1 = 0, r2 = 0;
    if (!patch_mean_luminance(a, mask, y1, x1, patch_radius, &r1) ||
        !patch_mean_luminance(a, mask, y2, x2, patch_radius, &r2))
      continue;
    r1 = std::max(r1, 1e-4);
    r2 = std::max(r2, 1e-4);
    ReflectanceRelation predicted;
    if (r2 / r1 > 1.0 + delta)
      predicted = ReflectanceRelation::kPoint1Darker;
    else if (r1 / r2 > 1.0 + delta)
      predicted = ReflectanceRelation::kPoint2Darker;
    else
      predicted = ReflectanceRelation::kEqual;
    weight_total += j.weight;
    if (predicted != j.relation) weight_wrong += j.weight;
  }
  if (weight_total <= 0.0)
    throw ArgumentError("whdr: zero total judgment weight");
  return weight_wrong / weight_total * 100.0;
}

real median_angular_error(const NormalMap& pred, const NormalMap& gt) {
  const Image& p = pred.vectors;
  const Image& g = gt.vectors;
  if (p.height() != g.height() || p.width() != g.width())
    throw ArgumentError("median_angular_error: shape mismatch");
  std::vector<real> angles;
  for (int y = 0; y < p.height(); ++y) {
    for (int x = 0; x < p.width(); ++x) {
      if (!pred.valid.at(y, x) || !gt.valid.at(y, x)) continue;
      real dot = p.at(y, x, 0) * g.at(y, x, 0) + p.at(y, x, 1) * g.at(y, x, 1) +
                 p.at(y, x, 2) * g.at(y, x, 2);
      dot = std::clamp(dot, -1.0, 1.0);
      angles.push_back(std::acos(dot) * 180.0 / std::numbers::pi_v<real>);
    }
  }
  if (angles.empty())
    throw ArgumentError("median_angular_error: empty shared mask");
  std::sort(angles.begin(), angles.end());
  size_t n = angles.size();
  if (n % 2 == 1) return angles[n / 2];
  return 0.5 * (angles[n / 2 - 1] + angles[n / 2]);
}

std::pair<real, real> rmse_mad(const Image& pred, const Image& gt,
                               const Mask& mask) {
  if (!pred.same_shape(gt))
    throw ArgumentError("rmse_mad: shape mismatch");
  real sq = 0.0, ab = 0.0;
  size_t n = 0;
  for (int y = 0; y < pred.height(); ++y)
    for (int x = 0; x < pred.width(); ++x) {
      if (!mask.at(y, x)) continue;
      for (int c = 0; c < pred.channels(); ++c) {
        real d = pred.at(y, x, c) - gt.at(y, x, c);
        sq += d * d;
        ab += std::abs(d);
        ++n;
      }
    }
  if (n == 0) throw ArgumentError("rmse_mad: empty mask");
  return {std::sqrt(sq / n), ab / n};
}

real env_map_error(const EnvironmentMap& pred, const EnvironmentMap& gt) {
  if (!pred.same_grid(gt))
    throw ArgumentError("env_map_error: grid mismatch");
  real num = 0.0, den = 0.0;
  for (int i = 0; i < pred.cells(); ++i) {
    real w = pred.grid.solid_angles[i];
    den += w;
    real acc = 0.0;
    for (int k = 0; k < 3; ++k)
      acc += std::abs(pred.radiance[static_cast<size_t>(i) * 3 + k] -
                      gt.radiance[static_cast<size_t>(i) * 3 + k]);
    num += w * acc / 3.0;
  }
  return num / den;
}

real image_recon_error(const ImageMap& image, const AlbedoMap& albedo,
                       const NormalMap& normal, const EnvironmentMap& env,
                       EnvWeighting weighting) {
  ImageMap recon = shade_direct(albedo, normal, env, weighting);
  real ab = 0.0;
  size_t n = 0;
  for (int y = 0; y < image.pixels.height(); ++y)
    for (int x = 0; x < image.pixels.width(); ++x) {
      if (!normal.valid.at(y, x)) continue;
      for (int c = 0; c < 3; ++c) {
        ab += std::abs(image.pixels.at(y, x, c) - recon.pixels.at(y, x, c));
        ++n;
      }
    }
  if (n == 0) throw ArgumentError("image_recon_error: empty mask");
  return ab / n;
}

std::pair<real, real> probe_error(const EnvironmentMap& pred,
                                  const EnvironmentMap& gt, int resolution,
                                  EnvWeighting weighting) {
  ProbeRender rp = render_probe(pred, resolution, weighting);
  ProbeRender rg = render_probe(gt, resolution, weighting);
  // Median-intensity alignment stands in for unknown exposure.
  auto median_intensity = [](const ProbeRender& probe) {
    std::vector<real> vals;
    for (int y = 0; y < probe.image.pixels.height(); ++y)
      for (int x = 0; x < probe.image.pixels.width(); ++x) {
        if (!probe.normals.valid.at(y, x)) continue;
        real m = (probe.image.pixels.at(y, x, 0) +
                  probe.image.pixels.at(y, x, 1) +
                  probe.image.pixels.at(y, x, 2)) /
                 3.0;
        vals.push_back(m);
      }
    std::sort(vals.begin(), vals.end());
    size_t n = vals.size();
    return n % 2 == 1 ? vals[n / 2]
                      : 0.5 * (vals[n / 2 - 1] + vals[n / 2]);
  };
  real mp = median_intensity(rp);
  real mg = median_intensity(rg);
  Image aligned = rp.image.pixels;
  if (mp > 1e-12) {
    real scale = mg / mp;
    for (int y = 0; y < aligned.height(); ++y)
      for (int x = 0; x < aligned.width(); ++x)
        for (int c = 0; c < 3; ++c) aligned.at(y, x, c) *= scale;
  }
  return rmse_mad(aligned, rg.image.pixels, rg.normals.valid);
}

}  // namespace invrender
