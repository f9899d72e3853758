// invrender: single-image inverse rendering toolkit.
// SPDX-License-Identifier: Apache-2.0

#include "invrender/losses.h"

#include <algorithm>
#include <cmath>

namespace invrender {

void LossConfig::validate() const {
  auto nonneg = [](real v) { return std::isfinite(v) && v >= 0.0; };
  if (!nonneg(lambda1) || !nonneg(lambda2) || !nonneg(lambda3) ||
      !nonneg(iiw_albedo) || !nonneg(iiw_normal) || !nonneg(iiw_light) ||
      !nonneg(iiw_recon) || !nonneg(iiw_weak) || !nonneg(nyu_albedo) ||
      !nonneg(nyu_light) || !nonneg(nyu_recon) || !nonneg(nyu_weak))
    throw ValidationError("LossConfig: negative loss weight");
  if (!(delta > 0.0 && delta < 1.0))
    throw ValidationError("LossConfig: delta must be in (0,1)");
  if (patch_radius < 0) throw ValidationError("LossConfig: bad patch radius");
}

int coord_to_pixel(real coord, int extent) {
  int p = static_cast<int>(std::floor(coord * extent));
  return std::clamp(p, 0, extent - 1);
}

bool patch_mean_luminance(const Image& albedo, const Mask& mask, int py,
                          int px, int radius, real* out) {
  if (!mask.at(py, px)) return false;
  real acc = 0.0;
  int n = 0;
  for (int dy = -radius; dy <= radius; ++dy) {
    int y = py + dy;
    if (y < 0 || y >= albedo.height()) continue;
    for (int dx = -radius; dx <= radius; ++dx) {
      int x = px + dx;
      if (x < 0 || x >= albedo.width()) continue;
      if (!mask.at(y, x)) continue;
      acc += 0.299 * albedo.at(y, x, 0) + 0.587 * albedo.at(y, x, 1) +
             0.114 * albedo.at(y, x, 2);
      ++n;
    }
  }
  if (n == 0) return false;
  *out = acc / n;
  return true;
}

SupervisedLossResult supervised_loss(
    const Tensor& pred_albedo, const Tensor& pred_normal,
    const Tensor& pred_env, const Tensor& gt_albedo, const Tensor& gt_normal,
    const Tensor& target_env, const Tensor& mask, const DirectionGrid& grid,
    EnvWeighting weighting, const LossConfig& cfg) {
  if (!gt_albedo.defined() || !gt_normal.defined() || !target_env.defined())
    throw ArgumentError("supervised_loss: missing ground-truth component");
  cfg.validate();

  Tensor normal_term = masked_mean_abs(sub(pred_normal, gt_normal), mask);
  Tensor albedo_term = masked_mean_abs(sub(pred_albedo, gt_albedo), mask);
  // Lighting is compared through the renderer with ground-truth geometry
  // and reflectance, under predicted vs approximated-GT lighting.
  Tensor render_pred =
      shade_direct_t(gt_albedo, gt_normal, pred_env, grid, mask, weighting);
  Tensor render_target =
      shade_direct_t(gt_albedo, gt_normal, target_env, grid, mask, weighting);
  Tensor lighting_term =
      masked_mean_abs(sub(render_pred, render_target), mask);

  SupervisedLossResult result;
  result.normal_term = normal_term.item();
  result.albedo_term = albedo_term.item();
  result.lighting_term = lighting_term.item();
  result.total = add(add(mul_scalar(normal_term, cfg.lambda1),
                         mul_scalar(albedo_term, cfg.lambda2)),
                     mul_scalar(lighting_term, cfg.lambda3));
  return result;
}

Tensor reconstruction_loss(const Tensor& image, const Tensor& direct,
                           const Tensor& residual, const Tensor& mask) {
  if (image.shape() != direct.shape())
    throw ArgumentError("reconstruction_loss: shape mismatch");
  Tensor recon = residual.defined() ? add(direct, residual) : direct;
  if (residual.defined() && residual.shape() != image.shape())
    throw ArgumentError("reconstruction_loss: residual shape mismatch");
  return masked_mean_abs(sub(image, recon), mask);
}

namespace {

// Differentiable patch-mean luminance sampling: output[t] is the mean of
// lum(albedo) over the valid patch around entry t.
struct PatchEntry {
  int sample = 0;
  int py = 0, px = 0;
};

Tensor sample_patches(const Tensor& albedo, const std::vector<PatchEntry>& entries,
                      const std::vector<const Mask*>& masks, int radius) {
  const int n = albedo.dim(0), h = albedo.dim(2), w = albedo.dim(3);
  (void)n;
  const size_t plane = static_cast<size_t>(h) * w;
  static constexpr real kLum[3] = {0.299, 0.587, 0.114};

  std::vector<real> out(entries.size(), 0.0);
  // Flattened tap lists reused by the backward closure.
  struct Tap {
    size_t base;  // sample offset into the tensor
    int y, x;
    real coef;  // 1/patch_count
  };
  std::vector<std::vector<Tap>> taps(entries.size());
  for (size_t t = 0; t < entries.size(); ++t) {
    const auto& e = entries[t];
    const Mask& m = *masks[e.sample];
    std::vector<Tap>& list = taps[t];
    for (int dy = -radius; dy <= radius; ++dy) {
      int y = e.py + dy;
      if (y < 0 || y >= h) continue;
      for (int dx = -radius; dx <= radius; ++dx) {
        int x = e.px + dx;
        if (x < 0 || x >= w) continue;
        if (!m.at(y, x)) continue;
        list.push_back({static_cast<size_t>(e.sample) * 3 * plane, y, x, 0.0});
      }
    }
    real coef = list.empty() ? 0.0 : 1.0 / static_cast<real>(list.size());
    real acc = 0.0;
    for (auto& tap : list) {
      tap.coef = coef;
      for (int k = 0; k < 3; ++k)
        acc += kLum[k] *
               albedo.data()[tap.base + k * plane +
                             static_cast<size_t>(tap.y) * w + tap.x];
    }
    out[t] = acc * coef;
  }

  return make_op(
      {static_cast<int>(entries.size())}, std::move(out), {albedo.impl()},
      [ai = albedo.impl(), taps, plane, w](TensorImpl& self) {
        if (!ai->requires_grad) return;
        auto& ga = grad_buffer(*ai);
        for (size_t t = 0; t < taps.size(); ++t) {
          real g = self.grad[t];
          if (g == 0.0) continue;
          for (const auto& tap : taps[t])
            for (int k = 0; k < 3; ++k)
              ga[tap.base + k * plane + static_cast<size_t>(tap.y) * w +
                 tap.x] += g * tap.coef * kLum[k];
        }
      });
}

}  // namespace

WhdrHingeResult whdr_hinge_loss(const Tensor& albedo,
                                const std::vector<const SceneSample*>& samples,
                                const LossConfig& cfg) {
  cfg.validate();
  if (albedo.ndim() != 4 || albedo.dim(1) != 3)
    throw ArgumentError("whdr_hinge_loss: albedo must be [N,3,H,W]");
  if (static_cast<size_t>(albedo.dim(0)) != samples.size())
    throw ArgumentError("whdr_hinge_loss: batch size mismatch");
  const int h = albedo.dim(2), w = albedo.dim(3);

  std::vector<PatchEntry> p1, p2;
  std::vector<const Mask*> masks;
  masks.reserve(samples.size());
  for (const auto* s : samples) masks.push_back(&s->mask);

  // Per-used-judgment relation selectors scaled by w_t.
  std::vector<real> w_darker1, w_darker2, w_equal;
  int skipped = 0;
  for (size_t n = 0; n < samples.size(); ++n) {
    for (const auto& j : samples[n]->judgments) {
      int y1 = coord_to_pixel(j.y1, h), x1 = coord_to_pixel(j.x1, w);
      int y2 = coord_to_pixel(j.y2, h), x2 = coord_to_pixel(j.x2, w);
      if (!samples[n]->mask.at(y1, x1) || !samples[n]->mask.at(y2, x2)) {
        ++skipped;
        continue;
      }
      p1.push_back({static_cast<int>(n), y1, x1});
      p2.push_back({static_cast<int>(n), y2, x2});
      w_darker1.push_back(
          j.relation == ReflectanceRelation::kPoint1Darker ? j.weight : 0.0);
      w_darker2.push_back(
          j.relation == ReflectanceRelation::kPoint2Darker ? j.weight : 0.0);
      w_equal.push_back(
          j.relation == ReflectanceRelation::kEqual ? j.weight : 0.0);
    }
  }

  WhdrHingeResult result;
  result.skipped = skipped;
  result.used = static_cast<int>(p1.size());
  if (p1.empty()) {
    result.loss = Tensor::scalar(0.0);
    return result;
  }

  Tensor r1 = clamp_min(sample_patches(albedo, p1, masks, cfg.patch_radius),
                        cfg.albedo_floor);
  Tensor r2 = clamp_min(sample_patches(albedo, p2, masks, cfg.patch_radius),
                        cfg.albedo_floor);
  Tensor r21 = div(r2, r1);
  Tensor r12 = div(r1, r2);
  const real margin = 1.0 + cfg.delta;
  // darker == "1": w * max(1 + delta - R2/R1, 0); "2" mirrors; equal uses
  // the two-sided hinge.
  Tensor h1 = relu(add_scalar(mul_scalar(r21, -1.0), margin));
  Tensor h2 = relu(add_scalar(mul_scalar(r12, -1.0), margin));
  Tensor he = add(relu(add_scalar(r12, -margin)),
                  relu(add_scalar(r21, -margin)));

  int t_count = result.used;
  auto weight_tensor = [t_count](std::vector<real> v) {
    return Tensor::from_vector({t_count}, std::move(v));
  };
  Tensor total = add(
      add(sum(mul(h1, weight_tensor(std::move(w_darker1)))),
          sum(mul(h2, weight_tensor(std::move(w_darker2))))),
      sum(mul(he, weight_tensor(std::move(w_equal)))));
  result.loss = mul_scalar(total, 1.0 / static_cast<real>(t_count));
  return result;
}

Tensor normal_supervision_loss(const Tensor& pred_normal,
                               const Tensor& gt_normal, const Tensor& mask) {
  if (pred_normal.shape() != gt_normal.shape())
    throw ArgumentError("normal_supervision_loss: shape mismatch");
  return masked_mean_abs(sub(pred_normal, gt_normal), mask);
}

PseudoSupervisionResult pseudo_supervision_loss(
    const Tensor& pred_albedo, const Tensor& pred_normal,
    const Tensor& pred_env, const Tensor& pseudo_albedo,
    const Tensor& pseudo_normal, const Tensor& pseudo_env,
    const Tensor& mask) {
  PseudoSupervisionResult r;
  r.albedo = masked_mean_abs(sub(pred_albedo, pseudo_albedo), mask);
  r.normal = masked_mean_abs(sub(pred_normal, pseudo_normal), mask);
  r.env = mean_abs(sub(pred_env, pseudo_env));
  return r;
}

Tensor composite_real_loss(const CompositeTerms& terms, DatasetMode mode,
                           const LossConfig& cfg) {
  cfg.validate();
  auto require = [](const std::optional<Tensor>& t, const char* name) {
    if (!t || !t->defined())
      throw ArgumentError(std::string("composite_real_loss: missing term ") +
                          name);
    return *t;
  };
  if (mode == DatasetMode::kIiw) {
    Tensor out = mul_scalar(require(terms.pseudo_albedo, "L_a"), cfg.iiw_albedo);
    out = add(out, mul_scalar(require(terms.pseudo_normal, "L_n"),
                              cfg.iiw_normal));
    out = add(out, mul_scalar(require(terms.pseudo_env, "L_e"), cfg.iiw_light));
    out = add(out, mul_scalar(require(terms.reconstruction, "L_u"),
                              cfg.iiw_recon));
    out = add(out, mul_scalar(require(terms.weak, "L_w"), cfg.iiw_weak));
    return out;
  }
  Tensor out = mul_scalar(require(terms.pseudo_albedo, "L_a"), cfg.nyu_albedo);
  out = add(out, mul_scalar(require(terms.pseudo_env, "L_e"), cfg.nyu_light));
  out = add(out, mul_scalar(require(terms.reconstruction, "L_u"),
                            cfg.nyu_recon));
  out = add(out, mul_scalar(require(terms.weak, "L_w"), cfg.nyu_weak));
  return out;
}

}  // namespace invrender
