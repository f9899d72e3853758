// invrender: single-image inverse rendering toolkit.
// SPDX-License-Identifier: Apache-2.0

#include "invrender/nn.h"

#include <Eigen/Dense>

#include "invrender/tensor_ops.h"

#include <cmath>
#include <numbers>

namespace invrender {

namespace {

using RowMat = Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic,
                             Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using MapConstMat = Eigen::Map<const RowMat>;

uint64_t splitmix64(uint64_t& state) {
  state += 0x9e3779b97f4a7c15ull;
  uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

}  // namespace

Rng::Rng(uint64_t seed) : state_(seed ^ 0x5851f42d4c957f2dull) {}

uint64_t Rng::next_u64() { return splitmix64(state_); }

real Rng::uniform() {
  return static_cast<real>(next_u64() >> 11) * 0x1.0p-53;
}

real Rng::uniform(real lo, real hi) { return lo + (hi - lo) * uniform(); }

real Rng::normal() {
  if (have_cached_) {
    have_cached_ = false;
    return cached_;
  }
  real u1 = uniform();
  real u2 = uniform();
  while (u1 <= 1e-300) u1 = uniform();
  real r = std::sqrt(-2.0 * std::log(u1));
  real theta = 2.0 * std::numbers::pi_v<real> * u2;
  cached_ = r * std::sin(theta);
  have_cached_ = true;
  return r * std::cos(theta);
}

int Rng::uniform_int(int lo, int hi) {
  return lo + static_cast<int>(next_u64() % static_cast<uint64_t>(hi - lo + 1));
}

Rng Rng::fork(const std::string& tag) const {
  return Rng(fnv1a64(tag, state_));
}

uint64_t fnv1a64(const void* data, size_t len, uint64_t seed) {
  const auto* p = static_cast<const unsigned char*>(data);
  uint64_t h = seed;
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

uint64_t fnv1a64(const std::string& s, uint64_t seed) {
  return fnv1a64(s.data(), s.size(), seed);
}

Tensor ParamRegistry::add_param(const std::string& name,
                                std::vector<int> shape,
                                std::vector<real> init) {
  Tensor t = Tensor::from_vector(std::move(shape), std::move(init), true);
  params.push_back({name, t});
  return t;
}

Tensor ParamRegistry::add_buffer(const std::string& name,
                                 std::vector<int> shape, real fill) {
  Tensor t = Tensor::full(std::move(shape), fill, false);
  buffers.push_back({name, t});
  return t;
}

std::vector<real> fan_in_normal_init(int64_t count, int fan_in, Rng& rng) {
  std::vector<real> v(static_cast<size_t>(count));
  real std_dev = std::sqrt(2.0 / std::max<int>(fan_in, 1));
  for (real& x : v) x = std_dev * rng.normal();
  return v;
}

// ---------------------------------------------------------------------------
// im2col / col2im

namespace {

void im2col(const real* x, int channels, int h, int w, int k, int stride,
            int pad, int oh, int ow, real* cols) {
  const size_t out_plane = static_cast<size_t>(oh) * ow;
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        real* dst = cols + ((static_cast<size_t>(c) * k + ky) * k + kx) *
                               out_plane;
        for (int oy = 0; oy < oh; ++oy) {
          int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) {
            std::fill(dst + static_cast<size_t>(oy) * ow,
                      dst + static_cast<size_t>(oy + 1) * ow, 0.0);
            continue;
          }
          const real* src = x + (static_cast<size_t>(c) * h + iy) * w;
          for (int ox = 0; ox < ow; ++ox) {
            int ix = ox * stride - pad + kx;
            dst[static_cast<size_t>(oy) * ow + ox] =
                (ix >= 0 && ix < w) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const real* cols, int channels, int h, int w, int k, int stride,
            int pad, int oh, int ow, real* x_accum) {
  const size_t out_plane = static_cast<size_t>(oh) * ow;
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const real* src = cols + ((static_cast<size_t>(c) * k + ky) * k + kx) *
                                     out_plane;
        for (int oy = 0; oy < oh; ++oy) {
          int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          real* dst = x_accum + (static_cast<size_t>(c) * h + iy) * w;
          for (int ox = 0; ox < ow; ++ox) {
            int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w)
              dst[ix] += src[static_cast<size_t>(oy) * ow + ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
              int in_ch, int kernel, int stride, int pad) {
  if (x.ndim() != 4 || x.dim(1) != in_ch)
    throw ArgumentError("conv2d: input shape mismatch");
  const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
  const int out_ch = weight.dim(0);
  const int kk = in_ch * kernel * kernel;
  if (weight.dim(1) != kk) throw ArgumentError("conv2d: weight shape mismatch");
  const int oh = (h + 2 * pad - kernel) / stride + 1;
  const int ow = (w + 2 * pad - kernel) / stride + 1;
  if (oh <= 0 || ow <= 0) throw ArgumentError("conv2d: empty output");
  const size_t out_plane = static_cast<size_t>(oh) * ow;
  const size_t in_plane = static_cast<size_t>(h) * w;

  std::vector<real> out(static_cast<size_t>(n) * out_ch * out_plane);
  std::vector<real> cols(static_cast<size_t>(kk) * out_plane);
  for (int bn = 0; bn < n; ++bn) {
    im2col(x.data() + static_cast<size_t>(bn) * in_ch * in_plane, in_ch, h, w,
           kernel, stride, pad, oh, ow, cols.data());
    MapConstMat mw(weight.data(), out_ch, kk);
    MapConstMat mc(cols.data(), kk, static_cast<int>(out_plane));
    MapMat mo(out.data() + static_cast<size_t>(bn) * out_ch * out_plane,
              out_ch, static_cast<int>(out_plane));
    mo.noalias() = mw * mc;
    for (int oc = 0; oc < out_ch; ++oc) {
      real b = bias.data()[oc];
      real* row = out.data() +
                  (static_cast<size_t>(bn) * out_ch + oc) * out_plane;
      for (size_t i = 0; i < out_plane; ++i) row[i] += b;
    }
  }

  return make_op(
      {n, out_ch, oh, ow}, std::move(out),
      {x.impl(), weight.impl(), bias.impl()},
      [xi = x.impl(), wi = weight.impl(), bi = bias.impl(), n, in_ch, h, w,
       kernel, stride, pad, oh, ow, out_ch, kk, out_plane,
       in_plane](TensorImpl& self) {
        std::vector<real> cols(static_cast<size_t>(kk) * out_plane);
        for (int bn = 0; bn < n; ++bn) {
          const real* gy = self.grad.data() +
                           static_cast<size_t>(bn) * out_ch * out_plane;
          MapConstMat mg(gy, out_ch, static_cast<int>(out_plane));
          if (wi->requires_grad || xi->requires_grad) {
            im2col(xi->values.data() + static_cast<size_t>(bn) * in_ch *
                                           in_plane,
                   in_ch, h, w, kernel, stride, pad, oh, ow, cols.data());
          }
          if (wi->requires_grad) {
            MapMat gw(grad_buffer(*wi).data(), out_ch, kk);
            MapConstMat mc(cols.data(), kk, static_cast<int>(out_plane));
            gw.noalias() += mg * mc.transpose();
          }
          if (bi->requires_grad) {
            auto& gb = grad_buffer(*bi);
            for (int oc = 0; oc < out_ch; ++oc) {
              const real* row = gy + static_cast<size_t>(oc) * out_plane;
              real acc = 0.0;
              for (size_t i = 0; i < out_plane; ++i) acc += row[i];
              gb[oc] += acc;
            }
          }
          if (xi->requires_grad) {
            std::vector<real> gcols(static_cast<size_t>(kk) * out_plane);
            MapMat mgc(gcols.data(), kk, static_cast<int>(out_plane));
            MapConstMat mw(wi->values.data(), out_ch, kk);
            mgc.noalias() = mw.transpose() * mg;
            col2im(gcols.data(), in_ch, h, w, kernel, stride, pad, oh, ow,
                   grad_buffer(*xi).data() +
                       static_cast<size_t>(bn) * in_ch * in_plane);
          }
        }
      });
}

Tensor conv_transpose2d(const Tensor& x, const Tensor& weight,
                        const Tensor& bias, int out_ch, int kernel, int stride,
                        int pad) {
  if (x.ndim() != 4) throw ArgumentError("conv_transpose2d: expected NCHW");
  const int n = x.dim(0), in_ch = x.dim(1), ih = x.dim(2), iw = x.dim(3);
  const int kk = out_ch * kernel * kernel;
  if (weight.dim(0) != in_ch || weight.dim(1) != kk)
    throw ArgumentError("conv_transpose2d: weight shape mismatch");
  // Exact stride-fold upsampling; output padding chosen so oh == ih*stride.
  const int oh = ih * stride;
  const int ow = iw * stride;
  const int base_h = (ih - 1) * stride - 2 * pad + kernel;
  if (base_h > oh || base_h + stride <= oh)
    throw ArgumentError("conv_transpose2d: geometry unsupported");
  const size_t in_plane = static_cast<size_t>(ih) * iw;
  const size_t out_plane = static_cast<size_t>(oh) * ow;

  std::vector<real> out(static_cast<size_t>(n) * out_ch * out_plane, 0.0);
  std::vector<real> cols(static_cast<size_t>(kk) * in_plane);
  for (int bn = 0; bn < n; ++bn) {
    MapConstMat mw(weight.data(), in_ch, kk);
    MapConstMat mx(x.data() + static_cast<size_t>(bn) * in_ch * in_plane,
                   in_ch, static_cast<int>(in_plane));
    MapMat mc(cols.data(), kk, static_cast<int>(in_plane));
    mc.noalias() = mw.transpose() * mx;
    col2im(cols.data(), out_ch, oh, ow, kernel, stride, pad, ih, iw,
           out.data() + static_cast<size_t>(bn) * out_ch * out_plane);
    for (int oc = 0; oc < out_ch; ++oc) {
      real b = bias.data()[oc];
      real* row = out.data() +
                  (static_cast<size_t>(bn) * out_ch + oc) * out_plane;
      for (size_t i = 0; i < out_plane; ++i) row[i] += b;
    }
  }

  return make_op(
      {n, out_ch, oh, ow}, std::move(out),
      {x.impl(), weight.impl(), bias.impl()},
      [xi = x.impl(), wi = weight.impl(), bi = bias.impl(), n, in_ch, ih, iw,
       kernel, stride, pad, oh, ow, out_ch, kk, in_plane,
       out_plane](TensorImpl& self) {
        std::vector<real> gcols(static_cast<size_t>(kk) * in_plane);
        for (int bn = 0; bn < n; ++bn) {
          const real* gy = self.grad.data() +
                           static_cast<size_t>(bn) * out_ch * out_plane;
          if (xi->requires_grad || wi->requires_grad) {
            im2col(gy, out_ch, oh, ow, kernel, stride, pad, ih, iw,
                   gcols.data());
          }
          if (xi->requires_grad) {
            MapMat gx(grad_buffer(*xi).data() +
                          static_cast<size_t>(bn) * in_ch * in_plane,
                      in_ch, static_cast<int>(in_plane));
            MapConstMat mw(wi->values.data(), in_ch, kk);
            MapConstMat mgc(gcols.data(), kk, static_cast<int>(in_plane));
            gx.noalias() += mw * mgc;
          }
          if (wi->requires_grad) {
            MapMat gw(grad_buffer(*wi).data(), in_ch, kk);
            MapConstMat mx(xi->values.data() +
                               static_cast<size_t>(bn) * in_ch * in_plane,
                           in_ch, static_cast<int>(in_plane));
            MapConstMat mgc(gcols.data(), kk, static_cast<int>(in_plane));
            gw.noalias() += mx * mgc.transpose();
          }
          if (bi->requires_grad) {
            auto& gb = grad_buffer(*bi);
            for (int oc = 0; oc < out_ch; ++oc) {
              const real* row = gy + static_cast<size_t>(oc) * out_plane;
              real acc = 0.0;
              for (size_t i = 0; i < out_plane; ++i) acc += row[i];
              gb[oc] += acc;
            }
          }
        }
      });
}

Tensor batch_norm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                    Tensor& running_mean, Tensor& running_var, bool training,
                    real momentum, real eps) {
  if (x.ndim() != 4) throw ArgumentError("batch_norm2d: expected NCHW");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const size_t plane = static_cast<size_t>(h) * w;
  const size_t cnt = static_cast<size_t>(n) * plane;

  std::vector<real> mean_v(c), inv_std(c);
  if (training) {
    for (int ch = 0; ch < c; ++ch) {
      real m = 0.0;
      for (int bn = 0; bn < n; ++bn) {
        const real* p = x.data() + (static_cast<size_t>(bn) * c + ch) * plane;
        for (size_t i = 0; i < plane; ++i) m += p[i];
      }
      m /= static_cast<real>(cnt);
      real var = 0.0;
      for (int bn = 0; bn < n; ++bn) {
        const real* p = x.data() + (static_cast<size_t>(bn) * c + ch) * plane;
        for (size_t i = 0; i < plane; ++i) {
          real d = p[i] - m;
          var += d * d;
        }
      }
      var /= static_cast<real>(cnt);
      mean_v[ch] = m;
      inv_std[ch] = 1.0 / std::sqrt(var + eps);
      // Unbiased variance in the running buffer (standard convention).
      real unbiased = cnt > 1 ? var * static_cast<real>(cnt) /
                                    static_cast<real>(cnt - 1)
                              : var;
      running_mean.data()[ch] =
          (1.0 - momentum) * running_mean.data()[ch] + momentum * m;
      running_var.data()[ch] =
          (1.0 - momentum) * running_var.data()[ch] + momentum * unbiased;
    }
  } else {
    for (int ch = 0; ch < c; ++ch) {
      mean_v[ch] = running_mean.data()[ch];
      inv_std[ch] = 1.0 / std::sqrt(running_var.data()[ch] + eps);
    }
  }

  std::vector<real> out(x.size());
  for (int bn = 0; bn < n; ++bn)
    for (int ch = 0; ch < c; ++ch) {
      const real* p = x.data() + (static_cast<size_t>(bn) * c + ch) * plane;
      real* q = out.data() + (static_cast<size_t>(bn) * c + ch) * plane;
      real g = gamma.data()[ch], b = beta.data()[ch];
      real m = mean_v[ch], is = inv_std[ch];
      for (size_t i = 0; i < plane; ++i) q[i] = g * (p[i] - m) * is + b;
    }

  return make_op(
      {n, c, h, w}, std::move(out),
      {x.impl(), gamma.impl(), beta.impl()},
      [xi = x.impl(), gi = gamma.impl(), bi = beta.impl(), n, c, plane, cnt,
       mean_v, inv_std, training](TensorImpl& self) {
        for (int ch = 0; ch < c; ++ch) {
          real m = mean_v[ch], is = inv_std[ch];
          real gam = gi->values[ch];
          // Accumulate the three per-channel reductions.
          real sum_g = 0.0, sum_gx = 0.0;
          for (int bn = 0; bn < n; ++bn) {
            const real* gp = self.grad.data() +
                             (static_cast<size_t>(bn) * c + ch) * plane;
            const real* xp = xi->values.data() +
                             (static_cast<size_t>(bn) * c + ch) * plane;
            for (size_t i = 0; i < plane; ++i) {
              sum_g += gp[i];
              sum_gx += gp[i] * (xp[i] - m) * is;
            }
          }
          if (gi->requires_grad) grad_buffer(*gi)[ch] += sum_gx;
          if (bi->requires_grad) grad_buffer(*bi)[ch] += sum_g;
          if (xi->requires_grad) {
            auto& gx = grad_buffer(*xi);
            for (int bn = 0; bn < n; ++bn) {
              const real* gp = self.grad.data() +
                               (static_cast<size_t>(bn) * c + ch) * plane;
              const real* xp = xi->values.data() +
                               (static_cast<size_t>(bn) * c + ch) * plane;
              real* dst = gx.data() + (static_cast<size_t>(bn) * c + ch) * plane;
              if (training) {
                real inv_cnt = 1.0 / static_cast<real>(cnt);
                for (size_t i = 0; i < plane; ++i) {
                  real xhat = (xp[i] - m) * is;
                  dst[i] += gam * is *
                            (gp[i] - inv_cnt * (sum_g + xhat * sum_gx));
                }
              } else {
                for (size_t i = 0; i < plane; ++i) dst[i] += gam * is * gp[i];
              }
            }
          }
        }
      });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.ndim() != 2) throw ArgumentError("linear: expected [N,in]");
  const int n = x.dim(0), in_dim = x.dim(1), out_dim = weight.dim(0);
  if (weight.dim(1) != in_dim) throw ArgumentError("linear: weight mismatch");
  std::vector<real> out(static_cast<size_t>(n) * out_dim);
  {
    MapConstMat mx(x.data(), n, in_dim);
    MapConstMat mw(weight.data(), out_dim, in_dim);
    MapMat mo(out.data(), n, out_dim);
    mo.noalias() = mx * mw.transpose();
    for (int bn = 0; bn < n; ++bn)
      for (int o = 0; o < out_dim; ++o)
        out[static_cast<size_t>(bn) * out_dim + o] += bias.data()[o];
  }
  return make_op(
      {n, out_dim}, std::move(out), {x.impl(), weight.impl(), bias.impl()},
      [xi = x.impl(), wi = weight.impl(), bi = bias.impl(), n, in_dim,
       out_dim](TensorImpl& self) {
        MapConstMat mg(self.grad.data(), n, out_dim);
        if (xi->requires_grad) {
          MapMat gx(grad_buffer(*xi).data(), n, in_dim);
          MapConstMat mw(wi->values.data(), out_dim, in_dim);
          gx.noalias() += mg * mw;
        }
        if (wi->requires_grad) {
          MapMat gw(grad_buffer(*wi).data(), out_dim, in_dim);
          MapConstMat mx(xi->values.data(), n, in_dim);
          gw.noalias() += mg.transpose() * mx;
        }
        if (bi->requires_grad) {
          auto& gb = grad_buffer(*bi);
          for (int bn = 0; bn < n; ++bn)
            for (int o = 0; o < out_dim; ++o)
              gb[o] += self.grad[static_cast<size_t>(bn) * out_dim + o];
        }
      });
}

Tensor upsample_bilinear(const Tensor& x, int out_h, int out_w) {
  if (x.ndim() != 4) throw ArgumentError("upsample_bilinear: expected NCHW");
  const int n = x.dim(0), c = x.dim(1), ih = x.dim(2), iw = x.dim(3);
  if (out_h <= 0 || out_w <= 0)
    throw ArgumentError("upsample_bilinear: bad output size");
  struct Taps {
    int i0, i1;
    real w1;  // weight of i1; i0 gets (1-w1)
  };
  std::vector<Taps> ty(out_h), tx(out_w);
  for (int y = 0; y < out_h; ++y) {
    real sy = (y + 0.5) * static_cast<real>(ih) / out_h - 0.5;
    int y0 = static_cast<int>(std::floor(sy));
    real wy = sy - y0;
    ty[y] = {std::clamp(y0, 0, ih - 1), std::clamp(y0 + 1, 0, ih - 1), wy};
  }
  for (int xo = 0; xo < out_w; ++xo) {
    real sx = (xo + 0.5) * static_cast<real>(iw) / out_w - 0.5;
    int x0 = static_cast<int>(std::floor(sx));
    real wx = sx - x0;
    tx[xo] = {std::clamp(x0, 0, iw - 1), std::clamp(x0 + 1, 0, iw - 1), wx};
  }
  const size_t in_plane = static_cast<size_t>(ih) * iw;
  const size_t out_plane = static_cast<size_t>(out_h) * out_w;
  std::vector<real> out(static_cast<size_t>(n) * c * out_plane);
  for (int bn = 0; bn < n; ++bn)
    for (int ch = 0; ch < c; ++ch) {
      const real* p = x.data() + (static_cast<size_t>(bn) * c + ch) * in_plane;
      real* q = out.data() + (static_cast<size_t>(bn) * c + ch) * out_plane;
      for (int y = 0; y < out_h; ++y)
        for (int xo = 0; xo < out_w; ++xo) {
          const Taps& a = ty[y];
          const Taps& b = tx[xo];
          real v00 = p[static_cast<size_t>(a.i0) * iw + b.i0];
          real v01 = p[static_cast<size_t>(a.i0) * iw + b.i1];
          real v10 = p[static_cast<size_t>(a.i1) * iw + b.i0];
          real v11 = p[static_cast<size_t>(a.i1) * iw + b.i1];
          q[static_cast<size_t>(y) * out_w + xo] =
              (1 - a.w1) * ((1 - b.w1) * v00 + b.w1 * v01) +
              a.w1 * ((1 - b.w1) * v10 + b.w1 * v11);
        }
    }
  return make_op(
      {n, c, out_h, out_w}, std::move(out), {x.impl()},
      [xi = x.impl(), n, c, ih, iw, out_h, out_w, ty, tx, in_plane,
       out_plane](TensorImpl& self) {
        if (!xi->requires_grad) return;
        auto& gx = grad_buffer(*xi);
        for (int bn = 0; bn < n; ++bn)
          for (int ch = 0; ch < c; ++ch) {
            real* gp = gx.data() + (static_cast<size_t>(bn) * c + ch) * in_plane;
            const real* gq = self.grad.data() +
                             (static_cast<size_t>(bn) * c + ch) * out_plane;
            for (int y = 0; y < out_h; ++y)
              for (int xo = 0; xo < out_w; ++xo) {
                const auto& a = ty[y];
                const auto& b = tx[xo];
                real g = gq[static_cast<size_t>(y) * out_w + xo];
                gp[static_cast<size_t>(a.i0) * iw + b.i0] +=
                    (1 - a.w1) * (1 - b.w1) * g;
                gp[static_cast<size_t>(a.i0) * iw + b.i1] +=
                    (1 - a.w1) * b.w1 * g;
                gp[static_cast<size_t>(a.i1) * iw + b.i0] +=
                    a.w1 * (1 - b.w1) * g;
                gp[static_cast<size_t>(a.i1) * iw + b.i1] += a.w1 * b.w1 * g;
              }
          }
      });
}

// ---------------------------------------------------------------------------
// Layers

Conv2d::Conv2d(ParamRegistry& reg, const std::string& name, int in_ch,
               int out_ch, int kernel, int stride, int pad, Rng& rng)
    : in_ch_(in_ch), out_ch_(out_ch), kernel_(kernel), stride_(stride),
      pad_(pad) {
  int kk = in_ch * kernel * kernel;
  weight_ = reg.add_param(name + ".weight", {out_ch, kk},
                          fan_in_normal_init(static_cast<int64_t>(out_ch) * kk,
                                             kk, rng));
  bias_ = reg.add_param(name + ".bias", {out_ch},
                        std::vector<real>(out_ch, 0.0));
}

Tensor Conv2d::forward(const Tensor& x) const {
  return conv2d(x, weight_, bias_, in_ch_, kernel_, stride_, pad_);
}

ConvTranspose2d::ConvTranspose2d(ParamRegistry& reg, const std::string& name,
                                 int in_ch, int out_ch, int kernel, int stride,
                                 int pad, Rng& rng)
    : in_ch_(in_ch), out_ch_(out_ch), kernel_(kernel), stride_(stride),
      pad_(pad) {
  int kk = out_ch * kernel * kernel;
  weight_ = reg.add_param(name + ".weight", {in_ch, kk},
                          fan_in_normal_init(static_cast<int64_t>(in_ch) * kk,
                                             in_ch * kernel * kernel, rng));
  bias_ = reg.add_param(name + ".bias", {out_ch},
                        std::vector<real>(out_ch, 0.0));
}

Tensor ConvTranspose2d::forward(const Tensor& x) const {
  return conv_transpose2d(x, weight_, bias_, out_ch_, kernel_, stride_, pad_);
}

BatchNorm2d::BatchNorm2d(ParamRegistry& reg, const std::string& name,
                         int channels, real momentum, real eps)
    : momentum_(momentum), eps_(eps) {
  gamma_ = reg.add_param(name + ".gamma", {channels},
                         std::vector<real>(channels, 1.0));
  beta_ = reg.add_param(name + ".beta", {channels},
                        std::vector<real>(channels, 0.0));
  running_mean_ = reg.add_buffer(name + ".running_mean", {channels}, 0.0);
  running_var_ = reg.add_buffer(name + ".running_var", {channels}, 1.0);
}

Tensor BatchNorm2d::forward(const Tensor& x, bool training) {
  return batch_norm2d(x, gamma_, beta_, running_mean_, running_var_, training,
                      momentum_, eps_);
}

Linear::Linear(ParamRegistry& reg, const std::string& name, int in_dim,
               int out_dim, Rng& rng) {
  weight_ = reg.add_param(
      name + ".weight", {out_dim, in_dim},
      fan_in_normal_init(static_cast<int64_t>(out_dim) * in_dim, in_dim, rng));
  bias_ = reg.add_param(name + ".bias", {out_dim},
                        std::vector<real>(out_dim, 0.0));
}

Tensor Linear::forward(const Tensor& x) const {
  return linear(x, weight_, bias_);
}

ConvBnRelu::ConvBnRelu(ParamRegistry& reg, const std::string& name, int in_ch,
                       int out_ch, int kernel, int stride, int pad, Rng& rng)
    : conv_(reg, name + ".conv", in_ch, out_ch, kernel, stride, pad, rng),
      bn_(reg, name + ".bn", out_ch), conv_out_(out_ch) {}

Tensor ConvBnRelu::forward(const Tensor& x, bool training) {
  return relu(bn_.forward(conv_.forward(x), training));
}

ResBlock::ResBlock(ParamRegistry& reg, const std::string& name, int channels,
                   Rng& rng)
    : conv1_(reg, name + ".conv1", channels, channels, 3, 1, 1, rng),
      conv2_(reg, name + ".conv2", channels, channels, 3, 1, 1, rng),
      bn1_(reg, name + ".bn1", channels), bn2_(reg, name + ".bn2", channels) {}

Tensor ResBlock::forward(const Tensor& x, bool training) {
  Tensor y = relu(bn1_.forward(conv1_.forward(x), training));
  y = bn2_.forward(conv2_.forward(y), training);
  return add(x, y);
}

// ---------------------------------------------------------------------------

AdamOptimizer::AdamOptimizer(std::vector<NamedTensor>& params, real lr,
                             real beta1, real beta2, real eps)
    : params_(&params), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  m_.resize(params.size());
  v_.resize(params.size());
  for (size_t i = 0; i < params.size(); ++i) {
    m_[i].assign(static_cast<size_t>(params[i].value.size()), 0.0);
    v_[i].assign(static_cast<size_t>(params[i].value.size()), 0.0);
  }
}

void AdamOptimizer::zero_grad() {
  for (auto& p : *params_) p.value.zero_grad();
}

void AdamOptimizer::step() {
  ++t_;
  const real bc1 = 1.0 - std::pow(beta1_, static_cast<real>(t_));
  const real bc2 = 1.0 - std::pow(beta2_, static_cast<real>(t_));
  for (size_t i = 0; i < params_->size(); ++i) {
    auto& p = (*params_)[i].value;
    if (!p.has_grad()) continue;
    const auto& g = p.grad();
    real* theta = p.data();
    auto& m = m_[i];
    auto& v = v_[i];
    for (size_t j = 0; j < g.size(); ++j) {
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
      real mh = m[j] / bc1;
      real vh = v[j] / bc2;
      theta[j] -= lr_ * mh / (std::sqrt(vh) + eps_);
    }
  }
}

void check_finite(const Tensor& t, const std::string& where) {
  const real* p = t.data();
  for (int64_t i = 0; i < t.size(); ++i)
    if (!std::isfinite(p[i]))
      throw NumericError("non-finite activation in " + where);
}

uint64_t parameters_hash(const std::vector<NamedTensor>& params) {
  uint64_t h = 1469598103934665603ull;
  for (const auto& p : params) {
    h = fnv1a64(p.name, h);
    h = fnv1a64(p.value.data(),
                static_cast<size_t>(p.value.size()) * sizeof(real), h);
  }
  return h;
}

}  // namespace invrender
