// invrender: single-image inverse rendering toolkit.
// SPDX-License-Identifier: Apache-2.0

#include "invrender/tensor_ops.h"

#include <Eigen/Dense>

#include <cmath>

namespace invrender {

namespace {

using RowMat = Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic,
                             Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using MapConstMat = Eigen::Map<const RowMat>;

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ArgumentError(std::string(op) + ": shape mismatch");
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  std::vector<real> out(a.values());
  const real* pb = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] += pb[i];
  return make_op(a.shape(), std::move(out), {a.impl(), b.impl()},
                 [ai = a.impl(), bi = b.impl()](TensorImpl& self) {
                   const auto& g = self.grad;
                   if (ai->requires_grad) {
                     auto& ga = grad_buffer(*ai);
                     for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                   }
                   if (bi->requires_grad) {
                     auto& gb = grad_buffer(*bi);
                     for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
                   }
                 });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  std::vector<real> out(a.values());
  const real* pb = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] -= pb[i];
  return make_op(a.shape(), std::move(out), {a.impl(), b.impl()},
                 [ai = a.impl(), bi = b.impl()](TensorImpl& self) {
                   const auto& g = self.grad;
                   if (ai->requires_grad) {
                     auto& ga = grad_buffer(*ai);
                     for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                   }
                   if (bi->requires_grad) {
                     auto& gb = grad_buffer(*bi);
                     for (size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                   }
                 });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  std::vector<real> out(a.size());
  const real* pa = a.data();
  const real* pb = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = pa[i] * pb[i];
  return make_op(a.shape(), std::move(out), {a.impl(), b.impl()},
                 [ai = a.impl(), bi = b.impl()](TensorImpl& self) {
                   const auto& g = self.grad;
                   if (ai->requires_grad) {
                     auto& ga = grad_buffer(*ai);
                     for (size_t i = 0; i < g.size(); ++i)
                       ga[i] += g[i] * bi->values[i];
                   }
                   if (bi->requires_grad) {
                     auto& gb = grad_buffer(*bi);
                     for (size_t i = 0; i < g.size(); ++i)
                       gb[i] += g[i] * ai->values[i];
                   }
                 });
}

Tensor div(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "div");
  std::vector<real> out(a.size());
  const real* pa = a.data();
  const real* pb = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = pa[i] / pb[i];
  return make_op(a.shape(), std::move(out), {a.impl(), b.impl()},
                 [ai = a.impl(), bi = b.impl()](TensorImpl& self) {
                   const auto& g = self.grad;
                   if (ai->requires_grad) {
                     auto& ga = grad_buffer(*ai);
                     for (size_t i = 0; i < g.size(); ++i)
                       ga[i] += g[i] / bi->values[i];
                   }
                   if (bi->requires_grad) {
                     auto& gb = grad_buffer(*bi);
                     for (size_t i = 0; i < g.size(); ++i) {
                       real d = bi->values[i];
                       gb[i] -= g[i] * ai->values[i] / (d * d);
                     }
                   }
                 });
}

Tensor add_scalar(const Tensor& a, real s) {
  std::vector<real> out(a.values());
  for (real& v : out) v += s;
  return make_op(a.shape(), std::move(out), {a.impl()},
                 [ai = a.impl()](TensorImpl& self) {
                   if (!ai->requires_grad) return;
                   auto& ga = grad_buffer(*ai);
                   for (size_t i = 0; i < self.grad.size(); ++i)
                     ga[i] += self.grad[i];
                 });
}

Tensor mul_scalar(const Tensor& a, real s) {
  std::vector<real> out(a.values());
  for (real& v : out) v *= s;
  return make_op(a.shape(), std::move(out), {a.impl()},
                 [ai = a.impl(), s](TensorImpl& self) {
                   if (!ai->requires_grad) return;
                   auto& ga = grad_buffer(*ai);
                   for (size_t i = 0; i < self.grad.size(); ++i)
                     ga[i] += self.grad[i] * s;
                 });
}

Tensor relu(const Tensor& a) {
  std::vector<real> out(a.values());
  for (real& v : out) v = v > 0.0 ? v : 0.0;
  return make_op(a.shape(), std::move(out), {a.impl()},
                 [ai = a.impl()](TensorImpl& self) {
                   if (!ai->requires_grad) return;
                   auto& ga = grad_buffer(*ai);
                   for (size_t i = 0; i < self.grad.size(); ++i)
                     if (ai->values[i] > 0.0) ga[i] += self.grad[i];
                 });
}

Tensor tanh_op(const Tensor& a) {
  std::vector<real> out(a.size());
  const real* pa = a.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(pa[i]);
  return make_op(a.shape(), std::move(out), {a.impl()},
                 [ai = a.impl()](TensorImpl& self) {
                   if (!ai->requires_grad) return;
                   auto& ga = grad_buffer(*ai);
                   for (size_t i = 0; i < self.grad.size(); ++i) {
                     real t = self.values[i];
                     ga[i] += self.grad[i] * (1.0 - t * t);
                   }
                 });
}

Tensor softplus(const Tensor& a) {
  std::vector<real> out(a.size());
  const real* pa = a.data();
  for (size_t i = 0; i < out.size(); ++i) {
    real x = pa[i];
    out[i] = x > 30.0 ? x : std::log1p(std::exp(std::min(x, 30.0)));
  }
  return make_op(a.shape(), std::move(out), {a.impl()},
                 [ai = a.impl()](TensorImpl& self) {
                   if (!ai->requires_grad) return;
                   auto& ga = grad_buffer(*ai);
                   for (size_t i = 0; i < self.grad.size(); ++i) {
                     real x = ai->values[i];
                     real sig = 1.0 / (1.0 + std::exp(-x));
                     ga[i] += self.grad[i] * sig;
                   }
                 });
}

Tensor abs_op(const Tensor& a) {
  std::vector<real> out(a.size());
  const real* pa = a.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = std::abs(pa[i]);
  return make_op(a.shape(), std::move(out), {a.impl()},
                 [ai = a.impl()](TensorImpl& self) {
                   if (!ai->requires_grad) return;
                   auto& ga = grad_buffer(*ai);
                   for (size_t i = 0; i < self.grad.size(); ++i) {
                     real x = ai->values[i];
                     real s = x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
                     ga[i] += self.grad[i] * s;
                   }
                 });
}

Tensor clamp_min(const Tensor& a, real floor) {
  std::vector<real> out(a.values());
  for (real& v : out) v = v > floor ? v : floor;
  return make_op(a.shape(), std::move(out), {a.impl()},
                 [ai = a.impl(), floor](TensorImpl& self) {
                   if (!ai->requires_grad) return;
                   auto& ga = grad_buffer(*ai);
                   for (size_t i = 0; i < self.grad.size(); ++i)
                     if (ai->values[i] > floor) ga[i] += self.grad[i];
                 });
}

Tensor sum(const Tensor& a) {
  real acc = 0.0;
  const real* pa = a.data();
  for (int64_t i = 0; i < a.size(); ++i) acc += pa[i];
  return make_op({1}, {acc}, {a.impl()},
                 [ai = a.impl()](TensorImpl& self) {
                   if (!ai->requires_grad) return;
                   auto& ga = grad_buffer(*ai);
                   real g = self.grad[0];
                   for (real& v : ga) v += g;
                 });
}

Tensor mean(const Tensor& a) {
  return mul_scalar(sum(a), 1.0 / static_cast<real>(a.size()));
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
    throw ArgumentError("matmul: incompatible shapes");
  int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<real> out(static_cast<size_t>(m) * n);
  {
    MapConstMat ma(a.data(), m, k);
    MapConstMat mb(b.data(), k, n);
    MapMat mo(out.data(), m, n);
    mo.noalias() = ma * mb;
  }
  return make_op({m, n}, std::move(out), {a.impl(), b.impl()},
                 [ai = a.impl(), bi = b.impl(), m, k, n](TensorImpl& self) {
                   MapConstMat g(self.grad.data(), m, n);
                   if (ai->requires_grad) {
                     MapMat ga(grad_buffer(*ai).data(), m, k);
                     MapConstMat mb(bi->values.data(), k, n);
                     ga.noalias() += g * mb.transpose();
                   }
                   if (bi->requires_grad) {
                     MapMat gb(grad_buffer(*bi).data(), k, n);
                     MapConstMat ma(ai->values.data(), m, k);
                     gb.noalias() += ma.transpose() * g;
                   }
                 });
}

Tensor concat_channels(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ArgumentError("concat_channels: empty input");
  int n = parts[0].dim(0), h = parts[0].dim(2), w = parts[0].dim(3);
  int total_c = 0;
  for (const auto& p : parts) {
    if (p.ndim() != 4 || p.dim(0) != n || p.dim(2) != h || p.dim(3) != w)
      throw ArgumentError("concat_channels: shape mismatch");
    total_c += p.dim(1);
  }
  const size_t plane = static_cast<size_t>(h) * w;
  std::vector<real> out(static_cast<size_t>(n) * total_c * plane);
  std::vector<TensorImplPtr> parents;
  size_t c_off = 0;
  for (const auto& p : parts) {
    int pc = p.dim(1);
    for (int bn = 0; bn < n; ++bn) {
      const real* src = p.data() + static_cast<size_t>(bn) * pc * plane;
      real* dst = out.data() +
                  (static_cast<size_t>(bn) * total_c + c_off) * plane;
      std::copy(src, src + static_cast<size_t>(pc) * plane, dst);
    }
    c_off += pc;
    parents.push_back(p.impl());
  }
  std::vector<int> chans;
  for (const auto& p : parts) chans.push_back(p.dim(1));
  return make_op(
      {n, total_c, h, w}, std::move(out), parents,
      [parents_copy = parents, chans, n, total_c, plane](TensorImpl& self) {
        size_t c_off = 0;
        for (size_t pi = 0; pi < parents_copy.size(); ++pi) {
          auto& p = parents_copy[pi];
          int pc = chans[pi];
          if (p->requires_grad) {
            auto& gp = grad_buffer(*p);
            for (int bn = 0; bn < n; ++bn) {
              const real* src =
                  self.grad.data() +
                  (static_cast<size_t>(bn) * total_c + c_off) * plane;
              real* dst = gp.data() + static_cast<size_t>(bn) * pc * plane;
              for (size_t i = 0; i < static_cast<size_t>(pc) * plane; ++i)
                dst[i] += src[i];
            }
          }
          c_off += pc;
        }
      });
}

Tensor reshape(const Tensor& a, std::vector<int> shape) {
  int64_t total = 1;
  for (int d : shape) total *= d;
  if (total != a.size()) throw ArgumentError("reshape: size mismatch");
  return make_op(std::move(shape), a.values(), {a.impl()},
                 [ai = a.impl()](TensorImpl& self) {
                   if (!ai->requires_grad) return;
                   auto& ga = grad_buffer(*ai);
                   for (size_t i = 0; i < self.grad.size(); ++i)
                     ga[i] += self.grad[i];
                 });
}

Tensor broadcast_spatial(const Tensor& a, int height, int width) {
  if (a.ndim() != 2) throw ArgumentError("broadcast_spatial: expected [N,C]");
  int n = a.dim(0), c = a.dim(1);
  const size_t plane = static_cast<size_t>(height) * width;
  std::vector<real> out(static_cast<size_t>(n) * c * plane);
  for (int bn = 0; bn < n; ++bn)
    for (int ch = 0; ch < c; ++ch) {
      real v = a.data()[static_cast<size_t>(bn) * c + ch];
      real* dst = out.data() + (static_cast<size_t>(bn) * c + ch) * plane;
      std::fill(dst, dst + plane, v);
    }
  return make_op({n, c, height, width}, std::move(out), {a.impl()},
                 [ai = a.impl(), n, c, plane](TensorImpl& self) {
                   if (!ai->requires_grad) return;
                   auto& ga = grad_buffer(*ai);
                   for (int bn = 0; bn < n; ++bn)
                     for (int ch = 0; ch < c; ++ch) {
                       const real* src =
                           self.grad.data() +
                           (static_cast<size_t>(bn) * c + ch) * plane;
                       real acc = 0.0;
                       for (size_t i = 0; i < plane; ++i) acc += src[i];
                       ga[static_cast<size_t>(bn) * c + ch] += acc;
                     }
                 });
}

Tensor normalize3(const Tensor& a, real eps) {
  if (a.ndim() != 4 || a.dim(1) != 3)
    throw ArgumentError("normalize3: expected [N,3,H,W]");
  int n = a.dim(0), h = a.dim(2), w = a.dim(3);
  const size_t plane = static_cast<size_t>(h) * w;
  std::vector<real> out(a.size());
  const real* pa = a.data();
  for (int bn = 0; bn < n; ++bn) {
    const real* x = pa + static_cast<size_t>(bn) * 3 * plane;
    real* y = out.data() + static_cast<size_t>(bn) * 3 * plane;
    for (size_t p = 0; p < plane; ++p) {
      real vx = x[p], vy = x[plane + p], vz = x[2 * plane + p];
      real norm = std::sqrt(vx * vx + vy * vy + vz * vz);
      real d = norm > eps ? norm : eps;
      y[p] = vx / d;
      y[plane + p] = vy / d;
      y[2 * plane + p] = vz / d;
    }
  }
  return make_op(
      {n, 3, h, w}, std::move(out), {a.impl()},
      [ai = a.impl(), n, plane, eps](TensorImpl& self) {
        if (!ai->requires_grad) return;
        auto& ga = grad_buffer(*ai);
        for (int bn = 0; bn < n; ++bn) {
          const real* x = ai->values.data() + static_cast<size_t>(bn) * 3 * plane;
          const real* g = self.grad.data() + static_cast<size_t>(bn) * 3 * plane;
          real* gx = ga.data() + static_cast<size_t>(bn) * 3 * plane;
          for (size_t p = 0; p < plane; ++p) {
            real vx = x[p], vy = x[plane + p], vz = x[2 * plane + p];
            real norm = std::sqrt(vx * vx + vy * vy + vz * vz);
            real d = norm > eps ? norm : eps;
            real nx = vx / d, ny = vy / d, nz = vz / d;
            real g0 = g[p], g1 = g[plane + p], g2 = g[2 * plane + p];
            // d(x/|x|) = (I - n n^T) / |x|; projection dropped if clamped.
            real dot = nx * g0 + ny * g1 + nz * g2;
            bool clamped = norm <= eps;
            gx[p] += (g0 - (clamped ? 0.0 : nx * dot)) / d;
            gx[plane + p] += (g1 - (clamped ? 0.0 : ny * dot)) / d;
            gx[2 * plane + p] += (g2 - (clamped ? 0.0 : nz * dot)) / d;
          }
        }
      });
}

Tensor masked_mean_abs(const Tensor& x, const Tensor& mask) {
  if (x.ndim() != 4 || mask.ndim() != 4 || mask.dim(1) != 1 ||
      mask.dim(0) != x.dim(0) || mask.dim(2) != x.dim(2) ||
      mask.dim(3) != x.dim(3))
    throw ArgumentError("masked_mean_abs: shape mismatch");
  int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const size_t plane = static_cast<size_t>(h) * w;
  real count = 0.0;
  const real* pm = mask.data();
  for (int64_t i = 0; i < mask.size(); ++i) count += pm[i] != 0.0 ? 1.0 : 0.0;
  if (count == 0.0) throw ArgumentError("masked_mean_abs: empty mask");
  const real denom = count * c;
  real acc = 0.0;
  const real* px = x.data();
  for (int bn = 0; bn < n; ++bn)
    for (int ch = 0; ch < c; ++ch) {
      const real* xp = px + (static_cast<size_t>(bn) * c + ch) * plane;
      const real* mp = pm + static_cast<size_t>(bn) * plane;
      for (size_t p = 0; p < plane; ++p)
        if (mp[p] != 0.0) acc += std::abs(xp[p]);
    }
  return make_op(
      {1}, {acc / denom}, {x.impl(), mask.impl()},
      [xi = x.impl(), mi = mask.impl(), n, c, plane, denom](TensorImpl& self) {
        if (!xi->requires_grad) return;
        auto& gx = grad_buffer(*xi);
        real g = self.grad[0] / denom;
        for (int bn = 0; bn < n; ++bn)
          for (int ch = 0; ch < c; ++ch) {
            const real* xp =
                xi->values.data() + (static_cast<size_t>(bn) * c + ch) * plane;
            const real* mp = mi->values.data() + static_cast<size_t>(bn) * plane;
            real* gp = gx.data() + (static_cast<size_t>(bn) * c + ch) * plane;
            for (size_t p = 0; p < plane; ++p) {
              if (mp[p] == 0.0) continue;
              real v = xp[p];
              gp[p] += g * (v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0));
            }
          }
      });
}

Tensor mean_abs(const Tensor& x) { return mean(abs_op(x)); }

}  // namespace invrender
