// invrender: single-image inverse rendering toolkit.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "invrender/tensor.h"

namespace invrender {

// Elementwise; shapes must match exactly (no implicit broadcasting).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor add_scalar(const Tensor& a, real s);
Tensor mul_scalar(const Tensor& a, real s);

Tensor relu(const Tensor& a);
Tensor tanh_op(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor abs_op(const Tensor& a);
// max(a, floor): gradient passes only where a > floor.
Tensor clamp_min(const Tensor& a, real floor);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

// a: [m,k], b: [k,n] -> [m,n]; row-major GEMM.
Tensor matmul(const Tensor& a, const Tensor& b);

// NCHW channel concatenation.
Tensor concat_channels(const std::vector<Tensor>& parts);

Tensor reshape(const Tensor& a, std::vector<int> shape);

// [N,C] -> [N,C,H,W], replicating each feature spatially.
Tensor broadcast_spatial(const Tensor& a, int height, int width);

// Renormalizes each 3-vector along the channel axis of an [N,3,H,W] map;
// norms below `eps` are clamped so the op stays finite.
Tensor normalize3(const Tensor& a, real eps = 1e-8);

// Masked mean of |x| over all channels and valid pixels. x: [N,C,H,W],
// mask: [N,1,H,W] of {0,1} (constant). Divides by C * count(mask).
Tensor masked_mean_abs(const Tensor& x, const Tensor& mask);

// mean over the batch of |x|, no mask.
Tensor mean_abs(const Tensor& x);

}  // namespace invrender
