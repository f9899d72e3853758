// invrender: single-image inverse rendering toolkit.
// SPDX-License-Identifier: Apache-2.0

#include "invrender/models.h"

#include <nlohmann/json.hpp>

#include <cmath>

#include "invrender/tensor_ops.h"

namespace invrender {

using json = nlohmann::ordered_json;

namespace {

int ceil_half(int v) { return (v + 1) / 2; }

}  // namespace

void ModelConfig::validate() const {
  if (input_height % 4 != 0 || input_width % 4 != 0)
    throw ArgumentError("ModelConfig: input resolution must be divisible by 4");
  if (input_height < 32 || input_width < 32)
    throw ArgumentError("ModelConfig: input resolution too small");
  if (base_channels < 4)
    throw ArgumentError("ModelConfig: base_channels must be >= 4");
  if (rar_latent != 300)
    throw ArgumentError("ModelConfig: RAR latent width is fixed at 300");
  if (irn_resblocks < 1 || env_resblocks < 1)
    throw ArgumentError("ModelConfig: residual block count must be >= 1");
  if (env_rows < 1 || env_cols < 1)
    throw ArgumentError("ModelConfig: bad environment grid");
}

std::string ModelConfig::to_json() const {
  json j;
  j["input_height"] = input_height;
  j["input_width"] = input_width;
  j["env_rows"] = env_rows;
  j["env_cols"] = env_cols;
  j["base_channels"] = base_channels;
  j["irn_resblocks"] = irn_resblocks;
  j["env_resblocks"] = env_resblocks;
  j["rar_latent"] = rar_latent;
  j["bn_momentum"] = bn_momentum;
  j["bn_epsilon"] = bn_epsilon;
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("ModelConfig: ") + e.what());
  }
  ModelConfig cfg;
  cfg.input_height = j.value("input_height", cfg.input_height);
  cfg.input_width = j.value("input_width", cfg.input_width);
  cfg.env_rows = j.value("env_rows", cfg.env_rows);
  cfg.env_cols = j.value("env_cols", cfg.env_cols);
  cfg.base_channels = j.value("base_channels", cfg.base_channels);
  cfg.irn_resblocks = j.value("irn_resblocks", cfg.irn_resblocks);
  cfg.env_resblocks = j.value("env_resblocks", cfg.env_resblocks);
  cfg.rar_latent = j.value("rar_latent", cfg.rar_latent);
  cfg.bn_momentum = j.value("bn_momentum", cfg.bn_momentum);
  cfg.bn_epsilon = j.value("bn_epsilon", cfg.bn_epsilon);
  return cfg;
}

uint64_t ModelConfig::hash() const { return fnv1a64(to_json()); }

// ---------------------------------------------------------------------------
// IRN

Irn::Irn(const ModelConfig& cfg, uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng = Rng(seed).fork("irn");
  const int b = cfg.base_channels;
  enc1_ = ConvBnRelu(reg_, "enc1", 3, b, 7, 1, 3, rng);
  enc2_ = ConvBnRelu(reg_, "enc2", b, 2 * b, 3, 2, 1, rng);
  enc3_ = ConvBnRelu(reg_, "enc3", 2 * b, 4 * b, 3, 2, 1, rng);
  for (int i = 0; i < cfg.irn_resblocks; ++i) {
    normal_blocks_.emplace_back(reg_, "normal_blk" + std::to_string(i), 4 * b,
                                rng);
    albedo_blocks_.emplace_back(reg_, "albedo_blk" + std::to_string(i), 4 * b,
                                rng);
  }
  normal_up1_ = ConvTranspose2d(reg_, "normal_up1", 4 * b, 2 * b, 3, 2, 1, rng);
  normal_bn1_ = BatchNorm2d(reg_, "normal_up1.bn", 2 * b);
  normal_up2_ = ConvTranspose2d(reg_, "normal_up2", 2 * b, b, 3, 2, 1, rng);
  normal_bn2_ = BatchNorm2d(reg_, "normal_up2.bn", b);
  normal_out_ = Conv2d(reg_, "normal_out", b, 3, 7, 1, 3, rng);
  albedo_up1_ = ConvTranspose2d(reg_, "albedo_up1", 4 * b, 2 * b, 3, 2, 1, rng);
  albedo_bn1_ = BatchNorm2d(reg_, "albedo_up1.bn", 2 * b);
  albedo_up2_ = ConvTranspose2d(reg_, "albedo_up2", 2 * b, b, 3, 2, 1, rng);
  albedo_bn2_ = BatchNorm2d(reg_, "albedo_up2.bn", b);
  albedo_out_ = Conv2d(reg_, "albedo_out", b, 3, 7, 1, 3, rng);
  light1_ = ConvBnRelu(reg_, "light1", 12 * b, 4 * b, 1, 1, 0, rng);
  light2_ = ConvBnRelu(reg_, "light2", 4 * b, 4 * b, 3, 2, 1, rng);
  light3_ = ConvBnRelu(reg_, "light3", 4 * b, 2 * b, 3, 2, 1, rng);
  light_out_ = Conv2d(reg_, "light_out", 2 * b, 3, 3, 2, 1, rng);
}

Irn::Shapes Irn::shapes() const {
  Shapes s;
  s.enc_h = ceil_half(ceil_half(cfg_.input_height));
  s.enc_w = ceil_half(ceil_half(cfg_.input_width));
  s.enc_c = 4 * cfg_.base_channels;
  s.light_pre_h = ceil_half(ceil_half(ceil_half(s.enc_h)));
  s.light_pre_w = ceil_half(ceil_half(ceil_half(s.enc_w)));
  return s;
}

IrnOutputs Irn::forward(const Tensor& image, bool training) {
  if (image.ndim() != 4 || image.dim(1) != 3 ||
      image.dim(2) != cfg_.input_height || image.dim(3) != cfg_.input_width)
    throw ArgumentError("irn_forward: expected [N,3," +
                        std::to_string(cfg_.input_height) + "," +
                        std::to_string(cfg_.input_width) + "] input");
  Tensor f = enc1_.forward(image, training);
  f = enc2_.forward(f, training);
  Tensor enc = enc3_.forward(f, training);
  check_finite(enc, "irn.encoder");

  Tensor nf = enc;
  for (auto& blk : normal_blocks_) nf = blk.forward(nf, training);
  Tensor af = enc;
  for (auto& blk : albedo_blocks_) af = blk.forward(af, training);
  check_finite(nf, "irn.normal_trunk");
  check_finite(af, "irn.albedo_trunk");

  Tensor nd = relu(normal_bn1_.forward(normal_up1_.forward(nf), training));
  nd = relu(normal_bn2_.forward(normal_up2_.forward(nd), training));
  nd = tanh_op(normal_out_.forward(nd));
  Tensor normal = normalize3(nd);
  check_finite(normal, "irn.normal_decoder");

  Tensor ad = relu(albedo_bn1_.forward(albedo_up1_.forward(af), training));
  ad = relu(albedo_bn2_.forward(albedo_up2_.forward(ad), training));
  ad = tanh_op(albedo_out_.forward(ad));
  Tensor albedo = add_scalar(mul_scalar(ad, 0.5), 0.5);
  check_finite(albedo, "irn.albedo_decoder");

  Tensor lf = concat_channels({enc, nf, af});
  lf = light1_.forward(lf, training);
  lf = light2_.forward(lf, training);
  lf = light3_.forward(lf, training);
  lf = light_out_.forward(lf);
  lf = upsample_bilinear(lf, cfg_.env_rows, cfg_.env_cols);
  Tensor env = softplus(lf);
  check_finite(env, "irn.light_block");

  IrnOutputs out;
  out.albedo = albedo;
  out.normal = normal;
  out.env = reshape(env, {image.dim(0), 3, cfg_.env_rows * cfg_.env_cols});
  return out;
}

// ---------------------------------------------------------------------------
// RAR

Rar::Rar(const ModelConfig& cfg, uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng = Rng(seed).fork("rar");
  const int b = cfg.base_channels;
  unet_in_ = ConvBnRelu(reg_, "unet_in", 6, b, 3, 1, 1, rng);
  e1_ = ConvBnRelu(reg_, "e1", b, b, 3, 2, 1, rng);
  e2_ = ConvBnRelu(reg_, "e2", b, 2 * b, 3, 2, 1, rng);
  e3_ = ConvBnRelu(reg_, "e3", 2 * b, 4 * b, 3, 2, 1, rng);
  e4_ = ConvBnRelu(reg_, "e4", 4 * b, 8 * b, 3, 2, 1, rng);

  const int c6 = std::max(b / 2, 2);
  const int c7 = std::max(b / 4, 2);
  img1_ = ConvBnRelu(reg_, "img1", 3, b, 7, 1, 3, rng);
  img2_ = ConvBnRelu(reg_, "img2", b, 2 * b, 3, 2, 1, rng);
  img3_ = ConvBnRelu(reg_, "img3", 2 * b, 4 * b, 3, 2, 1, rng);
  img4_ = ConvBnRelu(reg_, "img4", 4 * b, 2 * b, 1, 1, 0, rng);
  img5_ = ConvBnRelu(reg_, "img5", 2 * b, b, 3, 1, 1, rng);
  img6_ = ConvBnRelu(reg_, "img6", b, c6, 3, 2, 1, rng);
  img7_ = ConvBnRelu(reg_, "img7", c6, c7, 3, 2, 1, rng);
  const int h16 = ceil_half(ceil_half(ceil_half(ceil_half(cfg.input_height))));
  const int w16 = ceil_half(ceil_half(ceil_half(ceil_half(cfg.input_width))));
  img_fc_in_ = c7 * h16 * w16;
  img_fc_ = Linear(reg_, "img_fc", img_fc_in_, cfg.rar_latent, rng);

  d1_ = ConvBnRelu(reg_, "d1", 8 * b + cfg.rar_latent + 4 * b, 8 * b, 3, 1, 1,
                   rng);
  d2_ = ConvBnRelu(reg_, "d2", 8 * b + 2 * b, 4 * b, 3, 1, 1, rng);
  d3_ = ConvBnRelu(reg_, "d3", 4 * b + b, 2 * b, 3, 1, 1, rng);
  d4_ = ConvBnRelu(reg_, "d4", 2 * b, b, 3, 1, 1, rng);
  out_ = Conv2d(reg_, "out", b, 3, 1, 1, 0, rng);
}

Tensor Rar::forward(const Tensor& image, const Tensor& albedo,
                    const Tensor& normal, bool training) {
  if (image.ndim() != 4 || image.dim(2) != cfg_.input_height ||
      image.dim(3) != cfg_.input_width)
    throw ArgumentError("rar_forward: input resolution mismatch");
  if (albedo.shape() != image.shape() || normal.shape() != image.shape())
    throw ArgumentError("rar_forward: map shape mismatch");

  Tensor x0 = unet_in_.forward(concat_channels({normal, albedo}), training);
  Tensor x1 = e1_.forward(x0, training);
  Tensor x2 = e2_.forward(x1, training);
  Tensor x3 = e3_.forward(x2, training);
  Tensor x4 = e4_.forward(x3, training);
  check_finite(x4, "rar.unet_encoder");

  Tensor f = img1_.forward(image, training);
  f = img2_.forward(f, training);
  f = img3_.forward(f, training);
  f = img4_.forward(f, training);
  f = img5_.forward(f, training);
  f = img6_.forward(f, training);
  f = img7_.forward(f, training);
  Tensor latent = img_fc_.forward(
      reshape(f, {image.dim(0), img_fc_in_}));
  check_finite(latent, "rar.image_encoder");

  stats_.latent_dim = latent.dim(1);
  stats_.bottleneck_h = x4.dim(2);
  stats_.bottleneck_w = x4.dim(3);

  Tensor lat_map = broadcast_spatial(latent, x4.dim(2), x4.dim(3));
  Tensor bott = concat_channels({x4, lat_map});

  Tensor y = upsample_bilinear(bott, x3.dim(2), x3.dim(3));
  y = d1_.forward(concat_channels({y, x3}), training);
  y = upsample_bilinear(y, x2.dim(2), x2.dim(3));
  y = d2_.forward(concat_channels({y, x2}), training);
  y = upsample_bilinear(y, x1.dim(2), x1.dim(3));
  y = d3_.forward(concat_channels({y, x1}), training);
  y = upsample_bilinear(y, x0.dim(2), x0.dim(3));
  y = d4_.forward(y, training);
  Tensor residual = out_.forward(y);
  check_finite(residual, "rar.decoder");
  return residual;
}

// ---------------------------------------------------------------------------
// Environment estimator

EnvEstimator::EnvEstimator(const ModelConfig& cfg, uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng = Rng(seed).fork("env_estimator");
  const int b = cfg.base_channels;
  c1_ = ConvBnRelu(reg_, "c1", 9, b, 7, 1, 3, rng);
  c2_ = ConvBnRelu(reg_, "c2", b, 2 * b, 3, 2, 1, rng);
  c3_ = ConvBnRelu(reg_, "c3", 2 * b, 4 * b, 3, 2, 1, rng);
  for (int i = 0; i < cfg.env_resblocks; ++i)
    blocks_.emplace_back(reg_, "blk" + std::to_string(i), 4 * b, rng);
  c4_ = ConvBnRelu(reg_, "c4", 4 * b, 4 * b, 1, 1, 0, rng);
  c5_ = ConvBnRelu(reg_, "c5", 4 * b, 4 * b, 3, 2, 1, rng);
  c6_ = ConvBnRelu(reg_, "c6", 4 * b, 2 * b, 3, 2, 1, rng);
  out_ = Conv2d(reg_, "out", 2 * b, 3, 3, 2, 1, rng);
}

Tensor EnvEstimator::forward(const Tensor& image, const Tensor& albedo,
                             const Tensor& normal, bool training) {
  if (image.shape() != albedo.shape() || image.shape() != normal.shape())
    throw ArgumentError("env_estimator_forward: map shape mismatch");
  Tensor x = concat_channels({image, albedo, normal});
  x = c1_.forward(x, training);
  x = c2_.forward(x, training);
  x = c3_.forward(x, training);
  for (auto& blk : blocks_) x = blk.forward(x, training);
  x = c4_.forward(x, training);
  x = c5_.forward(x, training);
  x = c6_.forward(x, training);
  x = out_.forward(x);
  x = upsample_bilinear(x, cfg_.env_rows, cfg_.env_cols);
  Tensor env = softplus(x);
  check_finite(env, "env_estimator");
  return reshape(env, {image.dim(0), 3, cfg_.env_rows * cfg_.env_cols});
}

ModelBundle ModelBundle::create(const ModelConfig& cfg, uint64_t seed) {
  ModelBundle b;
  b.config = cfg;
  b.irn = std::make_unique<Irn>(cfg, seed);
  b.rar = std::make_unique<Rar>(cfg, seed);
  b.env_estimator = std::make_unique<EnvEstimator>(cfg, seed);
  b.stage_tag = "init";
  return b;
}

}  // namespace invrender
