// invrender: single-image inverse rendering toolkit.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "invrender/errors.h"

namespace invrender {

using real = double;

inline constexpr int kNetworkHeight = 240;
inline constexpr int kNetworkWidth = 320;

// Dense row-major interleaved raster, indexed (y, x, c).
class Image {
 public:
  Image() = default;
  Image(int height, int width, int channels, real fill = 0.0)
      : height_(height), width_(width), channels_(channels) {
    if (height <= 0 || width <= 0 || channels <= 0)
      throw ArgumentError("Image: non-positive dimensions");
    data_.assign(static_cast<size_t>(height) * width * channels, fill);
  }

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return channels_; }
  bool empty() const { return data_.empty(); }
  size_t size() const { return data_.size(); }

  real& at(int y, int x, int c) {
    return data_[(static_cast<size_t>(y) * width_ + x) * channels_ + c];
  }
  real at(int y, int x, int c) const {
    return data_[(static_cast<size_t>(y) * width_ + x) * channels_ + c];
  }

  real* data() { return data_.data(); }
  const real* data() const { return data_.data(); }

  bool same_shape(const Image& other) const {
    return height_ == other.height_ && width_ == other.width_ &&
           channels_ == other.channels_;
  }

 private:
  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  std::vector<real> data_;
};

// Per-pixel validity; pixels with undefined geometry (background, windows)
// are excluded from losses and metrics.
class Mask {
 public:
  Mask() = default;
  Mask(int height, int width, bool fill = true)
      : height_(height), width_(width),
        valid_(static_cast<size_t>(height) * width, fill ? 1 : 0) {}

  int height() const { return height_; }
  int width() const { return width_; }
  bool empty() const { return valid_.empty(); }

  bool at(int y, int x) const {
    return valid_[static_cast<size_t>(y) * width_ + x] != 0;
  }
  void set(int y, int x, bool v) {
    valid_[static_cast<size_t>(y) * width_ + x] = v ? 1 : 0;
  }

  size_t count() const {
    size_t n = 0;
    for (uint8_t v : valid_) n += v;
    return n;
  }

  const std::vector<uint8_t>& raw() const { return valid_; }
  std::vector<uint8_t>& raw() { return valid_; }

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<uint8_t> valid_;
};

// Linear radiance, entries finite and >= 0.
struct ImageMap {
  Image pixels;
};

// Diffuse reflectance, entries in [0, 1].
struct AlbedoMap {
  Image pixels;
};

// Unit vectors on valid pixels; invalid pixels carry no geometry.
struct NormalMap {
  Image vectors;  // 3 channels
  Mask valid;
};

void validate(const ImageMap& m);
void validate(const AlbedoMap& m);
// Valid vectors must be unit norm within `tol`.
void validate(const NormalMap& m, real tol = 1e-5);

// Bilinear resize with half-pixel centers; for radiance-like maps.
Image resize_bilinear(const Image& src, int out_height, int out_width);
// Nearest-neighbour resize; for masks and as the first step of normal
// resizing (interpolated normals would lose unit norm).
Image resize_nearest(const Image& src, int out_height, int out_width);
Mask resize_mask(const Mask& src, int out_height, int out_width);
// Nearest resize followed by renormalization of each 3-vector.
NormalMap resize_normals(const NormalMap& src, int out_height, int out_width);

// sRGB <-> linear with fixed exponent 2.2 (shading is done in linear space).
real srgb_to_linear(real v);
real linear_to_srgb(real v);

// (n+1)/2 channel encoding used by normal ground-truth files.
std::array<real, 3> decode_normal(const std::array<real, 3>& stored);
std::array<real, 3> encode_normal(const std::array<real, 3>& n);

}  // namespace invrender
