// invrender: single-image inverse rendering toolkit.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "invrender/tensor.h"

namespace invrender {

// Deterministic, platform-independent RNG (splitmix64 core). All training
// randomness flows through explicit seeds so reruns are bitwise identical.
class Rng {
 public:
  explicit Rng(uint64_t seed);
  uint64_t next_u64();
  real uniform();  // [0,1)
  real uniform(real lo, real hi);
  real normal();   // standard normal (Box-Muller)
  int uniform_int(int lo, int hi);  // inclusive bounds
  // Derives an independent stream for a named component.
  Rng fork(const std::string& tag) const;

 private:
  uint64_t state_;
  bool have_cached_ = false;
  real cached_ = 0.0;
};

uint64_t fnv1a64(const void* data, size_t len, uint64_t seed = 1469598103934665603ull);
uint64_t fnv1a64(const std::string& s, uint64_t seed = 1469598103934665603ull);

struct NamedTensor {
  std::string name;
  Tensor value;
};

// Ordered registry of trainable parameters and non-trainable buffers
// (batch-norm running statistics). Order is construction order and defines
// checkpoint and optimizer layout.
struct ParamRegistry {
  std::vector<NamedTensor> params;
  std::vector<NamedTensor> buffers;

  Tensor add_param(const std::string& name, std::vector<int> shape,
                   std::vector<real> init);
  Tensor add_buffer(const std::string& name, std::vector<int> shape,
                    real fill);
};

std::vector<real> fan_in_normal_init(int64_t count, int fan_in, Rng& rng);

// Stateless kernels ------------------------------------------------------

// x: [N,C,H,W], weight: [outC, inC*k*k], bias: [outC].
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
              int in_ch, int kernel, int stride, int pad);

// weight: [inC, outC*k*k]; output spatial size = input * stride exactly.
Tensor conv_transpose2d(const Tensor& x, const Tensor& weight,
                        const Tensor& bias, int out_ch, int kernel, int stride,
                        int pad);

// Training mode normalizes with batch statistics and updates running
// buffers in place; eval mode uses the running buffers.
Tensor batch_norm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                    Tensor& running_mean, Tensor& running_var, bool training,
                    real momentum, real eps);

// x: [N,in] -> [N,out]; weight: [out,in].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

// Half-pixel-center bilinear resampling of [N,C,H,W].
Tensor upsample_bilinear(const Tensor& x, int out_h, int out_w);

// Layers ------------------------------------------------------------------

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ParamRegistry& reg, const std::string& name, int in_ch, int out_ch,
         int kernel, int stride, int pad, Rng& rng);
  Tensor forward(const Tensor& x) const;
  int out_size(int in) const { return (in + 2 * pad_ - kernel_) / stride_ + 1; }
  int out_channels() const { return out_ch_; }

 private:
  Tensor weight_, bias_;
  int in_ch_ = 0, out_ch_ = 0, kernel_ = 0, stride_ = 1, pad_ = 0;
};

class ConvTranspose2d {
 public:
  ConvTranspose2d() = default;
  ConvTranspose2d(ParamRegistry& reg, const std::string& name, int in_ch,
                  int out_ch, int kernel, int stride, int pad, Rng& rng);
  Tensor forward(const Tensor& x) const;
  int out_channels() const { return out_ch_; }

 private:
  Tensor weight_, bias_;
  int in_ch_ = 0, out_ch_ = 0, kernel_ = 0, stride_ = 2, pad_ = 1;
};

class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  BatchNorm2d(ParamRegistry& reg, const std::string& name, int channels,
              real momentum = 0.1, real eps = 1e-5);
  Tensor forward(const Tensor& x, bool training);

 private:
  Tensor gamma_, beta_;
  Tensor running_mean_, running_var_;
  real momentum_ = 0.1, eps_ = 1e-5;
};

class Linear {
 public:
  Linear() = default;
  Linear(ParamRegistry& reg, const std::string& name, int in_dim, int out_dim,
         Rng& rng);
  Tensor forward(const Tensor& x) const;

 private:
  Tensor weight_, bias_;
};

// Conv + BatchNorm + ReLU, the workhorse block of every network here.
class ConvBnRelu {
 public:
  ConvBnRelu() = default;
  ConvBnRelu(ParamRegistry& reg, const std::string& name, int in_ch,
             int out_ch, int kernel, int stride, int pad, Rng& rng);
  Tensor forward(const Tensor& x, bool training);
  int out_channels() const { return conv_out_; }

 private:
  Conv2d conv_;
  BatchNorm2d bn_;
  int conv_out_ = 0;
};

// Conv-BN-ReLU-Conv-BN with identity shortcut.
class ResBlock {
 public:
  ResBlock() = default;
  ResBlock(ParamRegistry& reg, const std::string& name, int channels,
           Rng& rng);
  Tensor forward(const Tensor& x, bool training);

 private:
  Conv2d conv1_, conv2_;
  BatchNorm2d bn1_, bn2_;
};

// Optimizer ----------------------------------------------------------------

class AdamOptimizer {
 public:
  AdamOptimizer(std::vector<NamedTensor>& params, real lr, real beta1 = 0.9,
                real beta2 = 0.999, real eps = 1e-8);
  void zero_grad();
  void step();
  real learning_rate() const { return lr_; }

 private:
  std::vector<NamedTensor>* params_;
  std::vector<std::vector<real>> m_, v_;
  real lr_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
};

// Throws NumericError naming `where` if any entry is not finite.
void check_finite(const Tensor& t, const std::string& where);

// FNV-1a hash over the raw parameter bytes; used for freeze verification.
uint64_t parameters_hash(const std::vector<NamedTensor>& params);

}  // namespace invrender
