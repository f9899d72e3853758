// invrender: single-image inverse rendering toolkit.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <memory>
#include <string>
#include <vector>

#include "invrender/envmap.h"
#include "invrender/nn.h"
#include "invrender/tensor.h"

namespace invrender {

// Layer hyperparameters shared by the three networks. The defaults are the
// paper-scale architecture (240x320 input, 64-base channels); tests scale
// base_channels and the resolution down while keeping the topology.
struct ModelConfig {
  int input_height = kNetworkHeight;
  int input_width = kNetworkWidth;
  int env_rows = kEnvRows;
  int env_cols = kEnvCols;
  int base_channels = 64;
  int irn_resblocks = 9;
  int env_resblocks = 4;
  int rar_latent = 300;  // contract: exactly 300
  real bn_momentum = 0.1;
  real bn_epsilon = 1e-5;

  void validate() const;
  uint64_t hash() const;
  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
};

struct IrnOutputs {
  Tensor albedo;  // [N,3,H,W] in [0,1]
  Tensor normal;  // [N,3,H,W] unit per pixel
  Tensor env;     // [N,3,rows*cells] nonnegative
};

// Encoder + two unshared residual trunks + decoders, with a lighting block
// conditioned on encoder and both trunk outputs.
class Irn {
 public:
  Irn(const ModelConfig& cfg, uint64_t seed);

  IrnOutputs forward(const Tensor& image, bool training);

  struct Shapes {
    int enc_h = 0, enc_w = 0, enc_c = 0;
    int light_pre_h = 0, light_pre_w = 0;
  };
  Shapes shapes() const;

  std::vector<NamedTensor>& parameters() { return reg_.params; }
  std::vector<NamedTensor>& buffers() { return reg_.buffers; }
  const ModelConfig& config() const { return cfg_; }

 private:
  ModelConfig cfg_;
  ParamRegistry reg_;
  ConvBnRelu enc1_, enc2_, enc3_;
  std::vector<ResBlock> normal_blocks_, albedo_blocks_;
  ConvTranspose2d normal_up1_, normal_up2_, albedo_up1_, albedo_up2_;
  BatchNorm2d normal_bn1_, normal_bn2_, albedo_bn1_, albedo_bn2_;
  Conv2d normal_out_, albedo_out_;
  ConvBnRelu light1_, light2_, light3_;
  Conv2d light_out_;
};

// U-Net over (normal, albedo) conditioned on a 300-d latent code from a
// convolutional image encoder appended at the bottleneck; emits the
// residual image (unbounded sign).
class Rar {
 public:
  Rar(const ModelConfig& cfg, uint64_t seed);

  Tensor forward(const Tensor& image, const Tensor& albedo,
                 const Tensor& normal, bool training);

  struct Stats {
    int latent_dim = 0;
    int bottleneck_h = 0, bottleneck_w = 0;
  };
  // Stats describing the most recent forward pass.
  const Stats& last_stats() const { return stats_; }
  int latent_dim() const { return cfg_.rar_latent; }

  std::vector<NamedTensor>& parameters() { return reg_.params; }
  std::vector<NamedTensor>& buffers() { return reg_.buffers; }
  const ModelConfig& config() const { return cfg_; }

 private:
  ModelConfig cfg_;
  ParamRegistry reg_;
  ConvBnRelu unet_in_, e1_, e2_, e3_, e4_;
  ConvBnRelu img1_, img2_, img3_, img4_, img5_, img6_, img7_;
  Linear img_fc_;
  int img_fc_in_ = 0;
  ConvBnRelu d1_, d2_, d3_, d4_;
  Conv2d out_;
  Stats stats_;
};

// Residual-block network regressing the environment map from image,
// albedo and normals.
class EnvEstimator {
 public:
  EnvEstimator(const ModelConfig& cfg, uint64_t seed);

  Tensor forward(const Tensor& image, const Tensor& albedo,
                 const Tensor& normal, bool training);

  std::vector<NamedTensor>& parameters() { return reg_.params; }
  std::vector<NamedTensor>& buffers() { return reg_.buffers; }
  const ModelConfig& config() const { return cfg_; }

 private:
  ModelConfig cfg_;
  ParamRegistry reg_;
  ConvBnRelu c1_, c2_, c3_;
  std::vector<ResBlock> blocks_;
  ConvBnRelu c4_, c5_, c6_;
  Conv2d out_;
};

// The three parameter sets plus their shared config and stage tag.
struct ModelBundle {
  ModelConfig config;
  std::unique_ptr<Irn> irn;
  std::unique_ptr<Rar> rar;
  std::unique_ptr<EnvEstimator> env_estimator;
  std::string stage_tag;

  static ModelBundle create(const ModelConfig& cfg, uint64_t seed);
};

}  // namespace invrender
