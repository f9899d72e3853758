// invrender: single-image inverse rendering toolkit.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <vector>

#include "invrender/renderer.h"
#include "invrender/scene.h"
#include "invrender/tensor.h"
#include "invrender/tensor_ops.h"

namespace invrender {

struct LossConfig {
  // Supervised synthetic loss weights.
  real lambda1 = 1.0;  // normal L1
  real lambda2 = 1.0;  // albedo L1
  real lambda3 = 0.5;  // rendered-lighting L1
  // Hinge margin shared by the weak-supervision loss and the WHDR metric.
  real delta = 0.10;
  // Composite real-data objectives.
  real iiw_albedo = 0.5, iiw_normal = 0.5, iiw_light = 0.1, iiw_recon = 1.0,
       iiw_weak = 30.0;
  real nyu_albedo = 0.2, nyu_light = 0.05, nyu_recon = 1.0, nyu_weak = 20.0;
  // Judgment sampling: square patch radius in pixels and ratio floor.
  int patch_radius = 1;
  real albedo_floor = 1e-4;

  void validate() const;
};

// L_s = l1*||N-N*||_1 + l2*||A-A*||_1
//     + l3*||f_d(A*,N*,L) - f_d(A*,N*,L*)||_1 (masked means).
struct SupervisedLossResult {
  Tensor total;
  real normal_term = 0, albedo_term = 0, lighting_term = 0;  // unweighted
};

SupervisedLossResult supervised_loss(
    const Tensor& pred_albedo, const Tensor& pred_normal,
    const Tensor& pred_env, const Tensor& gt_albedo, const Tensor& gt_normal,
    const Tensor& target_env, const Tensor& mask, const DirectionGrid& grid,
    EnvWeighting weighting, const LossConfig& cfg);

// L_u = ||I - (I_direct + I_residual)||_1 (masked mean). Pass an undefined
// residual tensor to score the direct-only reconstruction.
Tensor reconstruction_loss(const Tensor& image, const Tensor& direct,
                           const Tensor& residual, const Tensor& mask);

// Weak supervision from pairwise reflectance judgments (hinge on patch
// luminance ratios). Judgments whose center pixel is masked out are
// skipped and counted.
struct WhdrHingeResult {
  Tensor loss;
  int used = 0;
  int skipped = 0;
};

WhdrHingeResult whdr_hinge_loss(
    const Tensor& albedo, const std::vector<const SceneSample*>& samples,
    const LossConfig& cfg);

// Masked mean L1 over normal vector components.
Tensor normal_supervision_loss(const Tensor& pred_normal,
                               const Tensor& gt_normal, const Tensor& mask);

// L1 against frozen synthetic-model outputs; lighting compared directly on
// radiance.
struct PseudoSupervisionResult {
  Tensor albedo;
  Tensor normal;
  Tensor env;
};

PseudoSupervisionResult pseudo_supervision_loss(
    const Tensor& pred_albedo, const Tensor& pred_normal,
    const Tensor& pred_env, const Tensor& pseudo_albedo,
    const Tensor& pseudo_normal, const Tensor& pseudo_env, const Tensor& mask);

enum class DatasetMode { kIiw, kNyu };

struct CompositeTerms {
  std::optional<Tensor> pseudo_albedo;   // L_a
  std::optional<Tensor> pseudo_normal;   // L_n (IIW mode only)
  std::optional<Tensor> pseudo_env;      // L_e
  std::optional<Tensor> reconstruction;  // L_u
  std::optional<Tensor> weak;            // L_w
};

// IIW: 0.5*L_a + 0.5*L_n + 0.1*L_e + L_u + 30*L_w
// NYU: 0.2*L_a + 0.05*L_e + L_u + 20*L_w
Tensor composite_real_loss(const CompositeTerms& terms, DatasetMode mode,
                           const LossConfig& cfg);

// Shared sampling rule: mean albedo luminance (0.299R+0.587G+0.114B) over
// the (2r+1)^2 patch clipped to bounds and mask. Returns false when the
// center pixel is invalid.
bool patch_mean_luminance(const Image& albedo, const Mask& mask, int py,
                          int px, int radius, real* out);

// Normalized [0,1] coordinates -> pixel indices (floor(x*W) clamped).
int coord_to_pixel(real coord, int extent);

}  // namespace invrender
