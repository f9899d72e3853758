// invrender: single-image inverse rendering toolkit.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "invrender/envmap.h"
#include "invrender/image.h"
#include "invrender/scene.h"
#include "invrender/tensor.h"

namespace invrender {

// Interleaved HWC rasters <-> planar NCHW tensors.

Tensor image_to_tensor(const Image& img);                    // [1,C,H,W]
Tensor images_to_tensor(const std::vector<const Image*>&);   // [N,C,H,W]
Image tensor_to_image(const Tensor& t, int batch_index = 0);

Tensor mask_to_tensor(const Mask& mask);                     // [1,1,H,W]
Tensor masks_to_tensor(const std::vector<const Mask*>&);     // [N,1,H,W]

Tensor env_to_tensor(const EnvironmentMap& env);             // [1,3,cells]
Tensor envs_to_tensor(const std::vector<const EnvironmentMap*>&);
EnvironmentMap tensor_to_env(const Tensor& t, int batch_index, int rows,
                             int cols);

// Batched views of a list of samples (all must share H x W).
struct SampleBatch {
  Tensor image;    // [N,3,H,W]
  Tensor albedo;   // [N,3,H,W] (zeros where absent)
  Tensor normal;   // [N,3,H,W]
  Tensor mask;     // [N,1,H,W] sample mask intersected with normal validity
  Tensor env;      // [N,3,cells]
  std::vector<const SceneSample*> samples;
  bool has_albedo = false, has_normal = false, has_env = false;
};

SampleBatch make_batch(const std::vector<const SceneSample*>& samples);

}  // namespace invrender
