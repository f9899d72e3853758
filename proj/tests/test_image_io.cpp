// invrender: single-image inverse rendering toolkit.
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "invrender/image_io.h"

using namespace invrender;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  fs::path dir = fs::temp_directory_path() / "invrender_io_test";
  fs::create_directories(dir);
  return dir;
}

Image gradient_image(int h, int w) {
  Image img(h, w, 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      img.at(y, x, 0) = static_cast<real>(x) / (w - 1);
      img.at(y, x, 1) = static_cast<real>(y) / (h - 1);
      img.at(y, x, 2) = 0.25;
    }
  return img;
}

}  // namespace

TEST_CASE("png 8-bit round trip within quantization") {
  fs::path p = temp_dir() / "rt8.png";
  Image img = gradient_image(16, 20);
  write_png8(p, img);
  Image back = read_png(p);
  REQUIRE(back.height() == 16);
  REQUIRE(back.width() == 20);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 20; ++x)
      for (int c = 0; c < 3; ++c)
        CHECK(std::abs(back.at(y, x, c) - img.at(y, x, c)) < 1.0 / 255.0);
}

TEST_CASE("png 16-bit round trip within quantization") {
  fs::path p = temp_dir() / "rt16.png";
  Image img = gradient_image(12, 9);
  write_png16(p, img);
  int depth = 0;
  Image back = read_png(p, &depth);
  CHECK(depth == 16);
  for (int y = 0; y < 12; ++y)
    for (int x = 0; x < 9; ++x)
      for (int c = 0; c < 3; ++c)
        CHECK(std::abs(back.at(y, x, c) - img.at(y, x, c)) < 1.0 / 65535.0);
}

TEST_CASE("pfm round trips through float32 exactly") {
  fs::path p = temp_dir() / "rt.pfm";
  Image img = gradient_image(7, 5);
  img.at(3, 2, 0) = 123.456;
  img.at(0, 0, 1) = -0.75;  // PFM holds signed values
  write_pfm(p, img);
  Image back = read_pfm(p);
  for (int y = 0; y < 7; ++y)
    for (int x = 0; x < 5; ++x)
      for (int c = 0; c < 3; ++c)
        CHECK(back.at(y, x, c) ==
              doctest::Approx(static_cast<float>(img.at(y, x, c)))
                  .epsilon(1e-12));
}

TEST_CASE("radiance hdr round trip within rgbe quantization") {
  fs::path p = temp_dir() / "rt.hdr";
  Image img(18, 36, 3, 0.0);
  img.at(2, 3, 0) = 3.5;
  img.at(2, 3, 1) = 0.25;
  img.at(2, 3, 2) = 0.03;
  img.at(9, 30, 0) = 150.0;
  img.at(9, 30, 1) = 80.0;
  img.at(9, 30, 2) = 10.0;
  write_hdr(p, img);
  Image back = read_hdr(p);
  REQUIRE(back.height() == 18);
  REQUIRE(back.width() == 36);
  for (int y = 0; y < 18; ++y)
    for (int x = 0; x < 36; ++x) {
      // RGBE shares one exponent per pixel: absolute error is bounded by
      // the pixel's max channel over the 8-bit mantissa.
      real pixel_max = std::max(
          {img.at(y, x, 0), img.at(y, x, 1), img.at(y, x, 2)});
      for (int c = 0; c < 3; ++c) {
        real a = img.at(y, x, c), b = back.at(y, x, c);
        CHECK(std::abs(a - b) <= std::max(pixel_max / 128.0, 1e-6));
      }
    }
}

TEST_CASE("env hdr ingestion downsamples larger panoramas") {
  fs::path p = temp_dir() / "pano.hdr";
  Image pano(90, 180, 3, 1.25);
  write_hdr(p, pano);
  EnvironmentMap env = read_env_hdr(p);
  REQUIRE(env.rows == kEnvRows);
  REQUIRE(env.cols == kEnvCols);
  for (real v : env.radiance) CHECK(v == doctest::Approx(1.25).epsilon(0.02));
}

TEST_CASE("mask png round trip") {
  fs::path p = temp_dir() / "mask.png";
  Mask m(8, 10, false);
  m.set(2, 3, true);
  m.set(7, 9, true);
  write_mask_png(p, m);
  Mask back = read_mask_png(p);
  REQUIRE(back.height() == 8);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 10; ++x) CHECK(back.at(y, x) == m.at(y, x));
}

TEST_CASE("missing files raise I/O errors") {
  CHECK_THROWS_AS(read_png(temp_dir() / "absent.png"), IoError);
  CHECK_THROWS_AS(read_pfm(temp_dir() / "absent.pfm"), IoError);
  CHECK_THROWS_AS(read_hdr(temp_dir() / "absent.hdr"), IoError);
}

TEST_CASE("srgb decode matches exponent-2.2 closed form") {
  CHECK(srgb_to_linear(0.0) == 0.0);
  // 8-bit value 188 -> (188/255)^2.2 ~= 0.51
  real lin = srgb_to_linear(188.0 / 255.0);
  CHECK(lin == doctest::Approx(std::pow(188.0 / 255.0, 2.2)).epsilon(1e-12));
  CHECK(lin == doctest::Approx(0.51).epsilon(0.01));
  CHECK(linear_to_srgb(srgb_to_linear(0.42)) == doctest::Approx(0.42));
}
