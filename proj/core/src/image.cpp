// invrender: single-image inverse rendering toolkit.
// SPDX-License-Identifier: Apache-2.0

#include "invrender/image.h"

#include <algorithm>
#include <cmath>

namespace invrender {

void validate(const ImageMap& m) {
  const real* p = m.pixels.data();
  for (size_t i = 0; i < m.pixels.size(); ++i) {
    if (!std::isfinite(p[i]) || p[i] < 0.0)
      throw ValidationError("ImageMap: non-finite or negative radiance");
  }
}

void validate(const AlbedoMap& m) {
  const real* p = m.pixels.data();
  for (size_t i = 0; i < m.pixels.size(); ++i) {
    if (!std::isfinite(p[i]) || p[i] < 0.0 || p[i] > 1.0)
      throw ValidationError("AlbedoMap: entry outside [0,1]");
  }
}

void validate(const NormalMap& m, real tol) {
  if (m.vectors.channels() != 3)
    throw ValidationError("NormalMap: expected 3 channels");
  if (m.valid.height() != m.vectors.height() ||
      m.valid.width() != m.vectors.width())
    throw ValidationError("NormalMap: mask shape mismatch");
  for (int y = 0; y < m.vectors.height(); ++y) {
    for (int x = 0; x < m.vectors.width(); ++x) {
      if (!m.valid.at(y, x)) continue;
      real nx = m.vectors.at(y, x, 0);
      real ny = m.vectors.at(y, x, 1);
      real nz = m.vectors.at(y, x, 2);
      real norm = std::sqrt(nx * nx + ny * ny + nz * nz);
      if (!std::isfinite(norm) || std::abs(norm - 1.0) > tol)
        throw ValidationError("NormalMap: non-unit normal at valid pixel");
    }
  }
}

Image resize_bilinear(const Image& src, int out_height, int out_width) {
  if (out_height <= 0 || out_width <= 0)
    throw ArgumentError("resize_bilinear: non-positive output size");
  if (src.height() == out_height && src.width() == out_width) return src;
  Image dst(out_height, out_width, src.channels());
  const real sy_scale = static_cast<real>(src.height()) / out_height;
  const real sx_scale = static_cast<real>(src.width()) / out_width;
  for (int y = 0; y < out_height; ++y) {
    real sy = (y + 0.5) * sy_scale - 0.5;
    int y0 = static_cast<int>(std::floor(sy));
    real wy = sy - y0;
    int y0c = std::clamp(y0, 0, src.height() - 1);
    int y1c = std::clamp(y0 + 1, 0, src.height() - 1);
    for (int x = 0; x < out_width; ++x) {
      real sx = (x + 0.5) * sx_scale - 0.5;
      int x0 = static_cast<int>(std::floor(sx));
      real wx = sx - x0;
      int x0c = std::clamp(x0, 0, src.width() - 1);
      int x1c = std::clamp(x0 + 1, 0, src.width() - 1);
      for (int c = 0; c < src.channels(); ++c) {
        real v00 = src.at(y0c, x0c, c);
        real v01 = src.at(y0c, x1c, c);
        real v10 = src.at(y1c, x0c, c);
        real v11 = src.at(y1c, x1c, c);
        dst.at(y, x, c) = (1 - wy) * ((1 - wx) * v00 + wx * v01) +
                          wy * ((1 - wx) * v10 + wx * v11);
      }
    }
  }
  return dst;
}

Image resize_nearest(const Image& src, int out_height, int out_width) {
  if (out_height <= 0 || out_width <= 0)
    throw ArgumentError("resize_nearest: non-positive output size");
  if (src.height() == out_height && src.width() == out_width) return src;
  Image dst(out_height, out_width, src.channels());
  for (int y = 0; y < out_height; ++y) {
    int sy = std::min(static_cast<int>((y + 0.5) * src.height() / out_height),
                      src.height() - 1);
    for (int x = 0; x < out_width; ++x) {
      int sx = std::min(static_cast<int>((x + 0.5) * src.width() / out_width),
                        src.width() - 1);
      for (int c = 0; c < src.channels(); ++c)
        dst.at(y, x, c) = src.at(sy, sx, c);
    }
  }
  return dst;
}

Mask resize_mask(const Mask& src, int out_height, int out_width) {
  if (src.height() == out_height && src.width() == out_width) return src;
  Mask dst(out_height, out_width, false);
  for (int y = 0; y < out_height; ++y) {
    int sy = std::min(static_cast<int>((y + 0.5) * src.height() / out_height),
                      src.height() - 1);
    for (int x = 0; x < out_width; ++x) {
      int sx = std::min(static_cast<int>((x + 0.5) * src.width() / out_width),
                        src.width() - 1);
      dst.set(y, x, src.at(sy, sx));
    }
  }
  return dst;
}

NormalMap resize_normals(const NormalMap& src, int out_height, int out_width) {
  NormalMap dst;
  dst.vectors = resize_nearest(src.vectors, out_height, out_width);
  dst.valid = resize_mask(src.valid, out_height, out_width);
  for (int y = 0; y < out_height; ++y) {
    for (int x = 0; x < out_width; ++x) {
      if (!dst.valid.at(y, x)) continue;
      real nx = dst.vectors.at(y, x, 0);
      real ny = dst.vectors.at(y, x, 1);
      real nz = dst.vectors.at(y, x, 2);
      real norm = std::sqrt(nx * nx + ny * ny + nz * nz);
      if (norm > 0) {
        dst.vectors.at(y, x, 0) = nx / norm;
        dst.vectors.at(y, x, 1) = ny / norm;
        dst.vectors.at(y, x, 2) = nz / norm;
      }
    }
  }
  return dst;
}

real srgb_to_linear(real v) { return v <= 0.0 ? 0.0 : std::pow(v, 2.2); }

real linear_to_srgb(real v) {
  return v <= 0.0 ? 0.0 : std::pow(v, 1.0 / 2.2);
}

std::array<real, 3> decode_normal(const std::array<real, 3>& stored) {
  std::array<real, 3> n{2.0 * stored[0] - 1.0, 2.0 * stored[1] - 1.0,
                        2.0 * stored[2] - 1.0};
  real norm = std::sqrt(n[0] * n[0] + n[1] * n[1] + n[2] * n[2]);
  if (norm > 0) {
    n[0] /= norm;
    n[1] /= norm;
    n[2] /= norm;
  }
  return n;
}

std::array<real, 3> encode_normal(const std::array<real, 3>& n) {
  return {(n[0] + 1.0) / 2.0, (n[1] + 1.0) / 2.0, (n[2] + 1.0) / 2.0};
}

}  // namespace invrender
