// invrender: single-image inverse rendering toolkit.
// SPDX-License-Identifier: Apache-2.0

#include "invrender/image_io.h"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>
#include <vector>

namespace invrender {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.string().c_str(), mode));
  if (!f) throw IoError("cannot open file: " + path.string());
  return f;
}

struct PngReader {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngReader() {
    if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
  }
};

struct PngWriter {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngWriter() {
    if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
  }
};

void read_png_raw(const std::filesystem::path& path, Image& out,
                  int& bit_depth) {
  FilePtr f = open_file(path, "rb");
  png_byte header[8];
  if (std::fread(header, 1, 8, f.get()) != 8 ||
      png_sig_cmp(header, 0, 8) != 0)
    throw IoError("not a PNG file: " + path.string());

  PngReader r;
  r.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr,
                                 nullptr);
  if (!r.png) throw IoError("libpng init failure");
  r.info = png_create_info_struct(r.png);
  if (!r.info) throw IoError("libpng init failure");
  if (setjmp(png_jmpbuf(r.png)))
    throw IoError("PNG decode failure: " + path.string());

  png_init_io(r.png, f.get());
  png_set_sig_bytes(r.png, 8);
  png_read_info(r.png, r.info);

  png_uint_32 w = png_get_image_width(r.png, r.info);
  png_uint_32 h = png_get_image_height(r.png, r.info);
  bit_depth = png_get_bit_depth(r.png, r.info);
  int color_type = png_get_color_type(r.png, r.info);

  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(r.png);
  if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8)
    png_set_expand_gray_1_2_4_to_8(r.png);
  if (png_get_valid(r.png, r.info, PNG_INFO_tRNS))
    png_set_tRNS_to_alpha(r.png);
  if (color_type == PNG_COLOR_TYPE_GRAY ||
      color_type == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(r.png);
  png_set_strip_alpha(r.png);
  if (bit_depth == 16) png_set_swap(r.png);  // little-endian host
  png_read_update_info(r.png, r.info);
  bit_depth = png_get_bit_depth(r.png, r.info);

  out = Image(static_cast<int>(h), static_cast<int>(w), 3);
  size_t rowbytes = png_get_rowbytes(r.png, r.info);
  std::vector<png_byte> row(rowbytes);
  const real scale = bit_depth == 16 ? 65535.0 : 255.0;
  for (png_uint_32 y = 0; y < h; ++y) {
    png_read_row(r.png, row.data(), nullptr);
    if (bit_depth == 16) {
      auto* p16 = reinterpret_cast<uint16_t*>(row.data());
      for (png_uint_32 x = 0; x < w; ++x)
        for (int c = 0; c < 3; ++c)
          out.at(y, x, c) = p16[x * 3 + c] / scale;
    } else {
      for (png_uint_32 x = 0; x < w; ++x)
        for (int c = 0; c < 3; ++c)
          out.at(y, x, c) = row[x * 3 + c] / scale;
    }
  }
  png_read_end(r.png, nullptr);
}

void write_png_raw(const std::filesystem::path& path, const Image& img,
                   int bit_depth) {
  if (img.channels() != 3) throw ArgumentError("write_png: expected 3 channels");
  FilePtr f = open_file(path, "wb");
  PngWriter w;
  w.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr,
                                  nullptr);
  if (!w.png) throw IoError("libpng init failure");
  w.info = png_create_info_struct(w.png);
  if (!w.info) throw IoError("libpng init failure");
  if (setjmp(png_jmpbuf(w.png)))
    throw IoError("PNG encode failure: " + path.string());

  png_init_io(w.png, f.get());
  png_set_IHDR(w.png, w.info, img.width(), img.height(), bit_depth,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(w.png, w.info);
  if (bit_depth == 16) png_set_swap(w.png);

  const real scale = bit_depth == 16 ? 65535.0 : 255.0;
  if (bit_depth == 16) {
    std::vector<uint16_t> row(static_cast<size_t>(img.width()) * 3);
    for (int y = 0; y < img.height(); ++y) {
      for (int x = 0; x < img.width(); ++x)
        for (int c = 0; c < 3; ++c) {
          real v = std::clamp(img.at(y, x, c), 0.0, 1.0);
          row[x * 3 + c] = static_cast<uint16_t>(std::lround(v * scale));
        }
      png_write_row(w.png, reinterpret_cast<png_bytep>(row.data()));
    }
  } else {
    std::vector<png_byte> row(static_cast<size_t>(img.width()) * 3);
    for (int y = 0; y < img.height(); ++y) {
      for (int x = 0; x < img.width(); ++x)
        for (int c = 0; c < 3; ++c) {
          real v = std::clamp(img.at(y, x, c), 0.0, 1.0);
          row[x * 3 + c] = static_cast<png_byte>(std::lround(v * scale));
        }
      png_write_row(w.png, row.data());
    }
  }
  png_write_end(w.png, nullptr);
}

}  // namespace

Image read_png(const std::filesystem::path& path, int* bit_depth) {
  Image img;
  int depth = 0;
  read_png_raw(path, img, depth);
  if (bit_depth) *bit_depth = depth;
  return img;
}

void write_png8(const std::filesystem::path& path, const Image& img) {
  write_png_raw(path, img, 8);
}

void write_png16(const std::filesystem::path& path, const Image& img) {
  write_png_raw(path, img, 16);
}

Mask read_mask_png(const std::filesystem::path& path) {
  Image img = read_png(path);
  Mask mask(img.height(), img.width(), false);
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      mask.set(y, x, img.at(y, x, 0) > 0.5);
  return mask;
}

void write_mask_png(const std::filesystem::path& path, const Mask& mask) {
  Image img(mask.height(), mask.width(), 3);
  for (int y = 0; y < mask.height(); ++y)
    for (int x = 0; x < mask.width(); ++x)
      for (int c = 0; c < 3; ++c)
        img.at(y, x, c) = mask.at(y, x) ? 1.0 : 0.0;
  write_png8(path, img);
}

// ---------------------------------------------------------------------------
// PFM

Image read_pfm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open file: " + path.string());
  std::string magic;
  in >> magic;
  if (magic != "PF" && magic != "Pf")
    throw IoError("not a PFM file: " + path.string());
  int w = 0, h = 0;
  real scale = 0;
  in >> w >> h >> scale;
  in.get();  // single whitespace after header
  if (w <= 0 || h <= 0) throw IoError("PFM: bad dimensions");
  if (scale >= 0) throw IoError("PFM: big-endian files unsupported");
  int channels = magic == "PF" ? 3 : 1;
  Image img(h, w, channels == 1 ? 3 : 3);
  std::vector<float> row(static_cast<size_t>(w) * channels);
  // PFM scanlines run bottom-to-top.
  for (int y = h - 1; y >= 0; --y) {
    in.read(reinterpret_cast<char*>(row.data()),
            static_cast<std::streamsize>(row.size() * sizeof(float)));
    if (!in) throw IoError("PFM: truncated file: " + path.string());
    for (int x = 0; x < w; ++x) {
      if (channels == 3) {
        for (int c = 0; c < 3; ++c) img.at(y, x, c) = row[x * 3 + c];
      } else {
        for (int c = 0; c < 3; ++c) img.at(y, x, c) = row[x];
      }
    }
  }
  return img;
}

void write_pfm(const std::filesystem::path& path, const Image& img) {
  if (img.channels() != 3) throw ArgumentError("write_pfm: expected 3 channels");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open file: " + path.string());
  out << "PF\n" << img.width() << " " << img.height() << "\n-1.0\n";
  std::vector<float> row(static_cast<size_t>(img.width()) * 3);
  for (int y = img.height() - 1; y >= 0; --y) {
    for (int x = 0; x < img.width(); ++x)
      for (int c = 0; c < 3; ++c)
        row[x * 3 + c] = static_cast<float>(img.at(y, x, c));
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size() * sizeof(float)));
  }
  if (!out) throw IoError("PFM: write failure: " + path.string());
}

// ---------------------------------------------------------------------------
// Radiance RGBE

namespace {

void rgbe_encode(real r, real g, real b, unsigned char out[4]) {
  real v = std::max({r, g, b});
  if (v < 1e-32) {
    out[0] = out[1] = out[2] = out[3] = 0;
    return;
  }
  int e;
  real m = std::frexp(v, &e);
  real scale = m * 256.0 / v;
  out[0] = static_cast<unsigned char>(std::min(255.0, r * scale));
  out[1] = static_cast<unsigned char>(std::min(255.0, g * scale));
  out[2] = static_cast<unsigned char>(std::min(255.0, b * scale));
  out[3] = static_cast<unsigned char>(e + 128);
}

void rgbe_decode(const unsigned char in[4], real* r, real* g, real* b) {
  if (in[3] == 0) {
    *r = *g = *b = 0.0;
    return;
  }
  real scale = std::ldexp(1.0, static_cast<int>(in[3]) - (128 + 8));
  *r = in[0] * scale;
  *g = in[1] * scale;
  *b = in[2] * scale;
}

void read_hdr_scanline(std::ifstream& in, unsigned char* rgbe, int width) {
  unsigned char head[4];
  in.read(reinterpret_cast<char*>(head), 4);
  if (!in) throw IoError("HDR: truncated scanline");
  if (head[0] == 2 && head[1] == 2 && (head[2] << 8 | head[3]) == width &&
      width >= 8 && width <= 0x7fff) {
    // New-style RLE: four separated component streams.
    for (int c = 0; c < 4; ++c) {
      int x = 0;
      while (x < width) {
        unsigned char code = 0, value = 0;
        in.read(reinterpret_cast<char*>(&code), 1);
        if (!in) throw IoError("HDR: truncated RLE stream");
        if (code > 128) {
          in.read(reinterpret_cast<char*>(&value), 1);
          int run = code - 128;
          if (x + run > width) throw IoError("HDR: RLE overrun");
          for (int i = 0; i < run; ++i) rgbe[(x + i) * 4 + c] = value;
          x += run;
        } else {
          int run = code;
          if (run == 0 || x + run > width) throw IoError("HDR: RLE overrun");
          for (int i = 0; i < run; ++i) {
            in.read(reinterpret_cast<char*>(&value), 1);
            rgbe[(x + i) * 4 + c] = value;
          }
          x += run;
        }
      }
    }
  } else {
    // Flat (old-style) scanline; first pixel already consumed.
    std::memcpy(rgbe, head, 4);
    if (width > 1) {
      in.read(reinterpret_cast<char*>(rgbe + 4),
              static_cast<std::streamsize>(4) * (width - 1));
      if (!in) throw IoError("HDR: truncated scanline");
    }
  }
}

}  // namespace

Image read_hdr(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open file: " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("#?", 0) != 0)
    throw IoError("not a Radiance HDR file: " + path.string());
  while (std::getline(in, line) && !line.empty()) {
    // header lines until the blank separator; FORMAT is assumed rgbe
  }
  if (!std::getline(in, line)) throw IoError("HDR: missing resolution line");
  int w = 0, h = 0;
  if (std::sscanf(line.c_str(), "-Y %d +X %d", &h, &w) != 2 || w <= 0 || h <= 0)
    throw IoError("HDR: unsupported resolution line: " + line);
  Image img(h, w, 3);
  std::vector<unsigned char> rgbe(static_cast<size_t>(w) * 4);
  for (int y = 0; y < h; ++y) {
    read_hdr_scanline(in, rgbe.data(), w);
    for (int x = 0; x < w; ++x) {
      real r, g, b;
      rgbe_decode(&rgbe[x * 4], &r, &g, &b);
      img.at(y, x, 0) = r;
      img.at(y, x, 1) = g;
      img.at(y, x, 2) = b;
    }
  }
  return img;
}

void write_hdr(const std::filesystem::path& path, const Image& img) {
  if (img.channels() != 3) throw ArgumentError("write_hdr: expected 3 channels");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open file: " + path.string());
  out << "#?RADIANCE\nFORMAT=32-bit_rle_rgbe\n\n";
  out << "-Y " << img.height() << " +X " << img.width() << "\n";
  std::vector<unsigned char> row(static_cast<size_t>(img.width()) * 4);
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x)
      rgbe_encode(img.at(y, x, 0), img.at(y, x, 1), img.at(y, x, 2),
                  &row[x * 4]);
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size()));
  }
  if (!out) throw IoError("HDR: write failure: " + path.string());
}

EnvironmentMap read_env_hdr(const std::filesystem::path& path, int rows,
                            int cols) {
  Image img = read_hdr(path);
  if (img.height() == rows && img.width() == cols) {
    EnvironmentMap env(rows, cols);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c)
        for (int k = 0; k < 3; ++k) env.at(r, c, k) = img.at(r, c, k);
    return env;
  }
  return downsample_to_env(img, rows, cols);
}

void write_env_hdr(const std::filesystem::path& path,
                   const EnvironmentMap& env) {
  Image img(env.rows, env.cols, 3);
  for (int r = 0; r < env.rows; ++r)
    for (int c = 0; c < env.cols; ++c)
      for (int k = 0; k < 3; ++k) img.at(r, c, k) = env.at(r, c, k);
  write_hdr(path, img);
}

// ---------------------------------------------------------------------------

Image read_float_map(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
  if (ext == ".pfm") return read_pfm(path);
  if (ext == ".hdr") return read_hdr(path);
  if (ext == ".png") return read_png(path);
  throw ArgumentError("read_float_map: unsupported extension: " + ext);
}

void write_float_map(const std::filesystem::path& path, const Image& img) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
  if (ext == ".pfm") return write_pfm(path, img);
  if (ext == ".hdr") return write_hdr(path, img);
  if (ext == ".png") return write_png16(path, img);
  throw ArgumentError("write_float_map: unsupported extension: " + ext);
}

}  // namespace invrender
