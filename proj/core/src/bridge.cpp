// invrender: single-image inverse rendering toolkit.
// SPDX-License-Identifier: Apache-2.0

#include "invrender/bridge.h"

namespace invrender {

namespace {

void copy_hwc_to_planar(const Image& img, real* dst) {
  const int h = img.height(), w = img.width(), c = img.channels();
  const size_t plane = static_cast<size_t>(h) * w;
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        dst[ch * plane + static_cast<size_t>(y) * w + x] = img.at(y, x, ch);
}

}  // namespace

Tensor image_to_tensor(const Image& img) {
  return images_to_tensor({&img});
}

Tensor images_to_tensor(const std::vector<const Image*>& imgs) {
  if (imgs.empty()) throw ArgumentError("images_to_tensor: empty batch");
  const int h = imgs[0]->height(), w = imgs[0]->width(),
            c = imgs[0]->channels();
  const size_t per = static_cast<size_t>(h) * w * c;
  std::vector<real> data(per * imgs.size());
  for (size_t i = 0; i < imgs.size(); ++i) {
    if (imgs[i]->height() != h || imgs[i]->width() != w ||
        imgs[i]->channels() != c)
      throw ArgumentError("images_to_tensor: shape mismatch in batch");
    copy_hwc_to_planar(*imgs[i], data.data() + i * per);
  }
  return Tensor::from_vector({static_cast<int>(imgs.size()), c, h, w},
                             std::move(data));
}

Image tensor_to_image(const Tensor& t, int batch_index) {
  if (t.ndim() != 4) throw ArgumentError("tensor_to_image: expected NCHW");
  const int c = t.dim(1), h = t.dim(2), w = t.dim(3);
  const size_t plane = static_cast<size_t>(h) * w;
  Image img(h, w, c);
  const real* src = t.data() + static_cast<size_t>(batch_index) * c * plane;
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        img.at(y, x, ch) = src[ch * plane + static_cast<size_t>(y) * w + x];
  return img;
}

Tensor mask_to_tensor(const Mask& mask) { return masks_to_tensor({&mask}); }

Tensor masks_to_tensor(const std::vector<const Mask*>& masks) {
  if (masks.empty()) throw ArgumentError("masks_to_tensor: empty batch");
  const int h = masks[0]->height(), w = masks[0]->width();
  const size_t plane = static_cast<size_t>(h) * w;
  std::vector<real> data(plane * masks.size());
  for (size_t i = 0; i < masks.size(); ++i) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        data[i * plane + static_cast<size_t>(y) * w + x] =
            masks[i]->at(y, x) ? 1.0 : 0.0;
  }
  return Tensor::from_vector({static_cast<int>(masks.size()), 1, h, w},
                             std::move(data));
}

Tensor env_to_tensor(const EnvironmentMap& env) {
  return envs_to_tensor({&env});
}

Tensor envs_to_tensor(const std::vector<const EnvironmentMap*>& envs) {
  if (envs.empty()) throw ArgumentError("envs_to_tensor: empty batch");
  const int cells = envs[0]->cells();
  std::vector<real> data(static_cast<size_t>(3) * cells * envs.size());
  for (size_t i = 0; i < envs.size(); ++i) {
    if (envs[i]->cells() != cells)
      throw ArgumentError("envs_to_tensor: grid mismatch in batch");
    for (int k = 0; k < 3; ++k)
      for (int c = 0; c < cells; ++c)
        data[(i * 3 + k) * cells + c] =
            envs[i]->radiance[static_cast<size_t>(c) * 3 + k];
  }
  return Tensor::from_vector(
      {static_cast<int>(envs.size()), 3, cells}, std::move(data));
}

EnvironmentMap tensor_to_env(const Tensor& t, int batch_index, int rows,
                             int cols) {
  const int cells = rows * cols;
  if (t.ndim() < 2 || t.size() < static_cast<int64_t>(3) * cells)
    throw ArgumentError("tensor_to_env: tensor too small");
  EnvironmentMap env(rows, cols);
  const real* src = t.data() + static_cast<size_t>(batch_index) * 3 * cells;
  for (int k = 0; k < 3; ++k)
    for (int c = 0; c < cells; ++c)
      env.radiance[static_cast<size_t>(c) * 3 + k] =
          src[static_cast<size_t>(k) * cells + c];
  return env;
}

SampleBatch make_batch(const std::vector<const SceneSample*>& samples) {
  if (samples.empty()) throw ArgumentError("make_batch: empty batch");
  SampleBatch batch;
  batch.samples = samples;
  std::vector<const Image*> images;
  std::vector<const Mask*> masks;
  std::vector<Mask> merged_masks;
  merged_masks.reserve(samples.size());
  for (const auto* s : samples) {
    images.push_back(&s->image.pixels);
    Mask m = s->mask;
    if (s->normal_gt) {
      for (int y = 0; y < m.height(); ++y)
        for (int x = 0; x < m.width(); ++x)
          if (!s->normal_gt->valid.at(y, x)) m.set(y, x, false);
    }
    merged_masks.push_back(std::move(m));
  }
  for (const auto& m : merged_masks) masks.push_back(&m);
  batch.image = images_to_tensor(images);
  batch.mask = masks_to_tensor(masks);

  batch.has_albedo = true;
  batch.has_normal = true;
  batch.has_env = true;
  for (const auto* s : samples) {
    if (!s->albedo_gt) batch.has_albedo = false;
    if (!s->normal_gt) batch.has_normal = false;
    if (!s->env_gt) batch.has_env = false;
  }
  if (batch.has_albedo) {
    std::vector<const Image*> maps;
    for (const auto* s : samples) maps.push_back(&s->albedo_gt->pixels);
    batch.albedo = images_to_tensor(maps);
  }
  if (batch.has_normal) {
    std::vector<const Image*> maps;
    for (const auto* s : samples) maps.push_back(&s->normal_gt->vectors);
    batch.normal = images_to_tensor(maps);
  }
  if (batch.has_env) {
    std::vector<const EnvironmentMap*> envs;
    for (const auto* s : samples) envs.push_back(&*s->env_gt);
    batch.env = envs_to_tensor(envs);
  }
  return batch;
}

}  // namespace invrender
