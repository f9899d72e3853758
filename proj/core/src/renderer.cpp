// invrender: single-image inverse rendering toolkit.
// SPDX-License-Identifier: Apache-2.0

#include "invrender/renderer.h"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

#include "invrender/tensor_ops.h"

namespace invrender {

namespace {

using RowMat = Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic,
                             Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using MapConstMat = Eigen::Map<const RowMat>;
using Vec = Eigen::Matrix<real, Eigen::Dynamic, 1>;

std::vector<real> cell_weights(const DirectionGrid& grid,
                               EnvWeighting weighting) {
  if (weighting == EnvWeighting::kSolidAngle) return grid.solid_angles;
  return std::vector<real>(static_cast<size_t>(grid.cells()), 1.0);
}

}  // namespace

ImageMap shade_direct(const AlbedoMap& albedo, const NormalMap& normal,
                      const EnvironmentMap& env, EnvWeighting weighting) {
  const Image& a = albedo.pixels;
  const Image& nv = normal.vectors;
  if (!a.same_shape(nv))
    throw ArgumentError("shade_direct: albedo/normal shape mismatch");
  if (nv.channels() != 3)
    throw ArgumentError("shade_direct: normals must have 3 channels");
  const int h = a.height(), w = a.width();
  const int cells = env.cells();
  const auto weights = cell_weights(env.grid, weighting);

  ImageMap out{Image(h, w, 3, 0.0)};
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!normal.valid.at(y, x)) continue;
      real nx = nv.at(y, x, 0), ny = nv.at(y, x, 1), nz = nv.at(y, x, 2);
      real norm = std::sqrt(nx * nx + ny * ny + nz * nz);
      if (std::abs(norm - 1.0) > 1e-3)
        throw ValidationError("shade_direct: non-unit normal at valid pixel");
      nx /= norm;
      ny /= norm;
      nz /= norm;
      real s0 = 0.0, s1 = 0.0, s2 = 0.0;
      for (int i = 0; i < cells; ++i) {
        const auto& d = env.grid.directions[i];
        real dot = nx * d[0] + ny * d[1] + nz * d[2];
        if (dot <= 0.0) continue;
        real f = weights[i] * dot;
        s0 += f * env.radiance[static_cast<size_t>(i) * 3 + 0];
        s1 += f * env.radiance[static_cast<size_t>(i) * 3 + 1];
        s2 += f * env.radiance[static_cast<size_t>(i) * 3 + 2];
      }
      out.pixels.at(y, x, 0) = a.at(y, x, 0) * s0;
      out.pixels.at(y, x, 1) = a.at(y, x, 1) * s1;
      out.pixels.at(y, x, 2) = a.at(y, x, 2) * s2;
    }
  }
  return out;
}

Tensor shade_direct_t(const Tensor& albedo, const Tensor& normal,
                      const Tensor& env, const DirectionGrid& grid,
                      const Tensor& mask, EnvWeighting weighting) {
  if (albedo.ndim() != 4 || albedo.dim(1) != 3 ||
      albedo.shape() != normal.shape())
    throw ArgumentError("shade_direct_t: albedo/normal must be [N,3,H,W]");
  const int n = albedo.dim(0), h = albedo.dim(2), w = albedo.dim(3);
  const int cells = grid.cells();
  if (env.ndim() != 3 || env.dim(0) != n || env.dim(1) != 3 ||
      env.dim(2) != cells)
    throw ArgumentError("shade_direct_t: env must be [N,3,cells]");
  if (mask.ndim() != 4 || mask.dim(0) != n || mask.dim(1) != 1 ||
      mask.dim(2) != h || mask.dim(3) != w)
    throw ArgumentError("shade_direct_t: mask must be [N,1,H,W]");

  Tensor nrm = normalize3(normal);

  const auto weights = cell_weights(grid, weighting);
  // dirs_w[i, c] = d_i[c]; applied as N_mat * dirs^T.
  std::vector<real> dirs(static_cast<size_t>(cells) * 3);
  for (int i = 0; i < cells; ++i)
    for (int c = 0; c < 3; ++c) dirs[static_cast<size_t>(i) * 3 + c] =
        grid.directions[i][c];

  const size_t plane = static_cast<size_t>(h) * w;
  std::vector<real> out(static_cast<size_t>(n) * 3 * plane, 0.0);

  // Shared forward kernel; reused by the backward closure.
  auto compute_sample =
      [cells, plane](const real* nrm_p, const real* env_p,
                     const real* dirs_p, const std::vector<real>& weights,
                     std::vector<real>& t_relu, std::vector<real>& shading) {
        const int p_count = static_cast<int>(plane);
        // T[p,i] = max(0, n_p . d_i)
        {
          MapConstMat nm(nrm_p, 3, p_count);  // planar: channel-major
          MapConstMat dm(dirs_p, cells, 3);
          MapMat tm(t_relu.data(), p_count, cells);
          tm.noalias() = nm.transpose() * dm.transpose();
        }
        for (real& v : t_relu) v = v > 0.0 ? v : 0.0;
        // shading[k,p] = sum_i w_i * T[p,i] * env[k,i]
        std::vector<real> env_w(static_cast<size_t>(3) * cells);
        for (int k = 0; k < 3; ++k)
          for (int i = 0; i < cells; ++i)
            env_w[static_cast<size_t>(k) * cells + i] =
                env_p[static_cast<size_t>(k) * cells + i] * weights[i];
        MapConstMat ew(env_w.data(), 3, cells);
        MapConstMat tm(t_relu.data(), p_count, cells);
        MapMat sh(shading.data(), 3, p_count);
        sh.noalias() = ew * tm.transpose();
      };

  std::vector<real> t_relu(plane * static_cast<size_t>(cells));
  std::vector<real> shading(3 * plane);
  for (int bn = 0; bn < n; ++bn) {
    const real* nrm_p = nrm.data() + static_cast<size_t>(bn) * 3 * plane;
    const real* env_p = env.data() + static_cast<size_t>(bn) * 3 * cells;
    const real* alb_p = albedo.data() + static_cast<size_t>(bn) * 3 * plane;
    const real* msk_p = mask.data() + static_cast<size_t>(bn) * plane;
    compute_sample(nrm_p, env_p, dirs.data(), weights, t_relu, shading);
    real* out_p = out.data() + static_cast<size_t>(bn) * 3 * plane;
    for (int k = 0; k < 3; ++k)
      for (size_t p = 0; p < plane; ++p)
        out_p[static_cast<size_t>(k) * plane + p] =
            msk_p[p] != 0.0
                ? alb_p[static_cast<size_t>(k) * plane + p] *
                      shading[static_cast<size_t>(k) * plane + p]
                : 0.0;
  }

  return make_op(
      {n, 3, h, w}, std::move(out),
      {albedo.impl(), nrm.impl(), env.impl(), mask.impl()},
      [ai = albedo.impl(), ni = nrm.impl(), ei = env.impl(),
       mi = mask.impl(), n, cells, plane, weights, dirs,
       compute_sample](TensorImpl& self) {
        std::vector<real> t_relu(plane * static_cast<size_t>(cells));
        std::vector<real> shading(3 * plane);
        const int p_count = static_cast<int>(plane);
        for (int bn = 0; bn < n; ++bn) {
          const real* nrm_p = ni->values.data() +
                              static_cast<size_t>(bn) * 3 * plane;
          const real* env_p = ei->values.data() +
                              static_cast<size_t>(bn) * 3 * cells;
          const real* alb_p = ai->values.data() +
                              static_cast<size_t>(bn) * 3 * plane;
          const real* msk_p = mi->values.data() + static_cast<size_t>(bn) * plane;
          const real* g_p = self.grad.data() +
                            static_cast<size_t>(bn) * 3 * plane;
          compute_sample(nrm_p, env_p, dirs.data(), weights, t_relu, shading);

          // dSh[k,p] = g * albedo * mask;  dA = g * Sh * mask
          std::vector<real> g_sh(3 * plane);
          for (int k = 0; k < 3; ++k)
            for (size_t p = 0; p < plane; ++p) {
              size_t idx = static_cast<size_t>(k) * plane + p;
              real m = msk_p[p] != 0.0 ? 1.0 : 0.0;
              g_sh[idx] = g_p[idx] * alb_p[idx] * m;
            }
          if (ai->requires_grad) {
            auto& ga = grad_buffer(*ai);
            real* ga_p = ga.data() + static_cast<size_t>(bn) * 3 * plane;
            for (int k = 0; k < 3; ++k)
              for (size_t p = 0; p < plane; ++p) {
                size_t idx = static_cast<size_t>(k) * plane + p;
                real m = msk_p[p] != 0.0 ? 1.0 : 0.0;
                ga_p[idx] += g_p[idx] * shading[idx] * m;
              }
          }
          if (ei->requires_grad) {
            // dEnvW[k,i] = sum_p dSh[k,p] T[p,i]; dEnv = dEnvW * w_i
            auto& ge = grad_buffer(*ei);
            std::vector<real> g_envw(static_cast<size_t>(3) * cells);
            MapConstMat mgsh(g_sh.data(), 3, p_count);
            MapConstMat tm(t_relu.data(), p_count, cells);
            MapMat mge(g_envw.data(), 3, cells);
            mge.noalias() = mgsh * tm;
            real* ge_p = ge.data() + static_cast<size_t>(bn) * 3 * cells;
            for (int k = 0; k < 3; ++k)
              for (int i = 0; i < cells; ++i)
                ge_p[static_cast<size_t>(k) * cells + i] +=
                    g_envw[static_cast<size_t>(k) * cells + i] * weights[i];
          }
          if (ni->requires_grad) {
            // dT[p,i] = sum_k dSh[k,p] * w_i * env[k,i], gated by T > 0.
            std::vector<real> g_t(plane * static_cast<size_t>(cells));
            std::vector<real> env_w(static_cast<size_t>(3) * cells);
            for (int k = 0; k < 3; ++k)
              for (int i = 0; i < cells; ++i)
                env_w[static_cast<size_t>(k) * cells + i] =
                    env_p[static_cast<size_t>(k) * cells + i] * weights[i];
            MapConstMat mgsh(g_sh.data(), 3, p_count);
            MapConstMat ew(env_w.data(), 3, cells);
            MapMat mgt(g_t.data(), p_count, cells);
            mgt.noalias() = mgsh.transpose() * ew;
            for (size_t p = 0; p < plane; ++p)
              for (int i = 0; i < cells; ++i)
                if (t_relu[p * cells + i] <= 0.0) g_t[p * cells + i] = 0.0;
            // dN[c,p] += sum_i dT[p,i] d_i[c]
            auto& gn = grad_buffer(*ni);
            MapMat mgn(gn.data() + static_cast<size_t>(bn) * 3 * plane, 3,
                       p_count);
            MapConstMat dm(dirs.data(), cells, 3);
            MapConstMat mgt2(g_t.data(), p_count, cells);
            mgn.noalias() += (mgt2 * dm).transpose();
          }
        }
      });
}

ProbeRender render_probe(const EnvironmentMap& env, int resolution,
                         EnvWeighting weighting) {
  if (resolution < 8)
    throw ArgumentError("render_probe: resolution must be >= 8");
  NormalMap normals;
  normals.vectors = Image(resolution, resolution, 3, 0.0);
  normals.valid = Mask(resolution, resolution, false);
  for (int y = 0; y < resolution; ++y) {
    for (int x = 0; x < resolution; ++x) {
      real u = (x + 0.5) / resolution * 2.0 - 1.0;
      real v = 1.0 - (y + 0.5) / resolution * 2.0;  // image y runs down
      real rr = u * u + v * v;
      if (rr >= 1.0) continue;
      normals.valid.set(y, x, true);
      normals.vectors.at(y, x, 0) = u;
      normals.vectors.at(y, x, 1) = v;
      normals.vectors.at(y, x, 2) = std::sqrt(1.0 - rr);
    }
  }
  AlbedoMap unit{Image(resolution, resolution, 3, 1.0)};
  ProbeRender probe;
  probe.image = shade_direct(unit, normals, env, weighting);
  probe.normals = std::move(normals);
  return probe;
}

EnvFitResult fit_env_least_squares(const ImageMap& image,
                                   const AlbedoMap& albedo,
                                   const NormalMap& normal,
                                   const EnvFitOptions& options) {
  const Image& img = image.pixels;
  if (!img.same_shape(albedo.pixels) ||
      img.height() != normal.vectors.height() ||
      img.width() != normal.vectors.width())
    throw ArgumentError("fit_env_least_squares: shape mismatch");

  const DirectionGrid grid = direction_grid(options.rows, options.cols);
  const int cells = grid.cells();
  const auto weights = cell_weights(grid, options.weighting);

  // Collect valid pixels.
  std::vector<int> ys, xs;
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      if (normal.valid.at(y, x)) {
        ys.push_back(y);
        xs.push_back(x);
      }
  const int p_total = static_cast<int>(ys.size());
  if (p_total < cells)
    throw ArgumentError(
        "fit_env_least_squares: fewer valid pixels than env cells");

  // Per-channel normal equations accumulated in pixel blocks:
  //   G_k = sum_p a_pk^2 s_p s_p^T,  c_k = sum_p a_pk I_pk s_p,
  // where s_p[i] = w_i * max(0, n_p . d_i).
  const int block = 1024;
  std::vector<RowMat> gram(3, RowMat::Zero(cells, cells));
  std::vector<Vec> rhs(3, Vec::Zero(cells));
  std::vector<real> col_support(cells, 0.0);
  real img_sumsq[3] = {0.0, 0.0, 0.0};

  RowMat s_block(block, cells);
  RowMat s_scaled(block, cells);
  for (int start = 0; start < p_total; start += block) {
    int bsz = std::min(block, p_total - start);
    for (int r = 0; r < bsz; ++r) {
      int y = ys[start + r], x = xs[start + r];
      real nx = normal.vectors.at(y, x, 0);
      real ny = normal.vectors.at(y, x, 1);
      real nz = normal.vectors.at(y, x, 2);
      real norm = std::sqrt(nx * nx + ny * ny + nz * nz);
      if (norm > 0) {
        nx /= norm;
        ny /= norm;
        nz /= norm;
      }
      for (int i = 0; i < cells; ++i) {
        const auto& d = grid.directions[i];
        real dot = nx * d[0] + ny * d[1] + nz * d[2];
        real s = dot > 0.0 ? weights[i] * dot : 0.0;
        s_block(r, i) = s;
        col_support[i] += s;
      }
    }
    for (int k = 0; k < 3; ++k) {
      for (int r = 0; r < bsz; ++r) {
        int y = ys[start + r], x = xs[start + r];
        real a = albedo.pixels.at(y, x, k);
        s_scaled.row(r) = s_block.row(r) * a;
        real iv = img.at(y, x, k);
        img_sumsq[k] += iv * iv;
        rhs[k].noalias() += s_scaled.row(r).transpose() * iv;
      }
      gram[k].noalias() += s_scaled.topRows(bsz).transpose() *
                           s_scaled.topRows(bsz);
    }
  }

  EnvFitResult result;
  result.uncovered.assign(cells, 0);
  for (int i = 0; i < cells; ++i)
    if (col_support[i] <= 0.0) result.uncovered[i] = 1;

  EnvironmentMap fitted(options.rows, options.cols);
  int total_iters = 0;
  for (int k = 0; k < 3; ++k) {
    RowMat& g = gram[k];
    Vec& c = rhs[k];
    // Pin unconstrained cells to zero.
    for (int i = 0; i < cells; ++i)
      if (result.uncovered[i]) {
        g.row(i).setZero();
        g.col(i).setZero();
        g(i, i) = 1.0;
        c(i) = 0.0;
      }
    const real ridge = 1e-12 * g.trace() / cells + 1e-300;

    auto solve_restricted = [&](const std::vector<int>& support) {
      const int m = static_cast<int>(support.size());
      RowMat gs(m, m);
      Vec cs(m);
      for (int a = 0; a < m; ++a) {
        cs(a) = c(support[a]);
        for (int b = 0; b < m; ++b) gs(a, b) = g(support[a], support[b]);
        gs(a, a) += ridge;
      }
      Vec zs = gs.ldlt().solve(cs);
      return zs;
    };
    auto objective = [&](const Vec& l) {
      return (l.transpose() * g * l)(0, 0) - 2.0 * c.dot(l) + img_sumsq[k];
    };

    // Warm start: clamped ridge solution seeds the passive set.
    RowMat g_reg = g;
    for (int i = 0; i < cells; ++i) g_reg(i, i) += ridge;
    Vec warm = g_reg.ldlt().solve(c).cwiseMax(0.0);

    std::vector<char> passive(cells, 0);
    Vec l = Vec::Zero(cells);
    for (int i = 0; i < cells; ++i)
      if (!result.uncovered[i] && warm(i) > 0.0) {
        passive[i] = 1;
        l(i) = warm(i);
      }

    // Lawson-Hanson style active-set iteration, warm-started. KKT and step
    // tolerances follow options.tolerance scaled by the data.
    const real kkt_tol =
        options.tolerance * (1.0 + c.cwiseAbs().maxCoeff());
    int it = 0;
    for (; it < options.max_iterations; ++it) {
      std::vector<int> support;
      for (int i = 0; i < cells; ++i)
        if (passive[i]) support.push_back(i);
      if (!support.empty()) {
        Vec z = solve_restricted(support);
        real zmin = z.minCoeff();
        if (zmin <= 0.0) {
          // Step toward z until the first coordinate hits zero.
          real alpha = 1.0;
          for (size_t a = 0; a < support.size(); ++a) {
            if (z(a) <= 0.0) {
              real li = l(support[a]);
              real denom = li - z(a);
              if (denom > 0.0) alpha = std::min(alpha, li / denom);
            }
          }
          for (size_t a = 0; a < support.size(); ++a) {
            int i = support[a];
            l(i) = l(i) + alpha * (z(a) - l(i));
            if (l(i) <= options.tolerance) {
              l(i) = 0.0;
              passive[i] = 0;
            }
          }
          continue;
        }
        l.setZero();
        for (size_t a = 0; a < support.size(); ++a) l(support[a]) = z(a);
      }
      // KKT check: largest positive gradient of the objective decrease
      // among clamped, covered cells.
      Vec w = c - g * l;
      int best = -1;
      real best_w = kkt_tol;
      for (int i = 0; i < cells; ++i) {
        if (passive[i] || result.uncovered[i]) continue;
        if (w(i) > best_w) {
          best_w = w(i);
          best = i;
        }
      }
      if (best < 0) break;
      passive[best] = 1;
    }

    // Monotone projected-gradient polish; also guarantees the result is
    // never worse than the zero environment.
    Vec zero_v = Vec::Zero(cells);
    if (objective(zero_v) < objective(l)) l = zero_v;
    Vec pw = Vec::Ones(cells);
    real lam = 1.0;
    for (int p = 0; p < 50; ++p) {
      Vec next = g * pw;
      lam = next.norm();
      if (lam <= 0.0) break;
      pw = next / lam;
    }
    if (lam > 0.0) {
      real step = 1.0 / (lam * 1.01);
      for (int p = 0; p < 100 && it < options.max_iterations; ++p, ++it) {
        Vec grad_v = g * l - c;
        Vec next = (l - step * grad_v).cwiseMax(0.0);
        real delta = (next - l).cwiseAbs().maxCoeff();
        l = next;
        if (delta < options.tolerance) break;
      }
    }
    total_iters += it;
    for (int i = 0; i < cells; ++i)
      fitted.radiance[static_cast<size_t>(i) * 3 + k] = std::max(l(i), 0.0);
  }
  result.iterations = total_iters;

  ImageMap recon = shade_direct(albedo, normal, fitted, options.weighting);
  real mad = 0.0, sumsq = 0.0;
  size_t count = 0;
  for (int idx = 0; idx < p_total; ++idx) {
    int y = ys[idx], x = xs[idx];
    for (int k = 0; k < 3; ++k) {
      real d = img.at(y, x, k) - recon.pixels.at(y, x, k);
      mad += std::abs(d);
      sumsq += d * d;
      ++count;
    }
  }
  result.residual_mad = count ? mad / count : 0.0;
  result.residual_sumsq = sumsq;
  result.env = std::move(fitted);
  return result;
}

}  // namespace invrender
