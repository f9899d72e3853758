// invrender: single-image inverse rendering toolkit.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>

#include "invrender/envmap.h"
#include "invrender/image.h"

namespace invrender {

// PNG. Reads expand to RGB; 8-bit and 16-bit depths are preserved as
// values in [0,1] (v/255 or v/65535). No color transform is applied here;
// callers decide whether values are sRGB-encoded or linear.
Image read_png(const std::filesystem::path& path,
               int* bit_depth = nullptr);
void write_png8(const std::filesystem::path& path, const Image& img);
void write_png16(const std::filesystem::path& path, const Image& img);

// Grayscale mask PNG; nonzero = valid.
Mask read_mask_png(const std::filesystem::path& path);
void write_mask_png(const std::filesystem::path& path, const Mask& mask);

// Portable FloatMap (PF, little-endian), the 32-bit float container for
// ground-truth maps. Values round-trip through float32.
Image read_pfm(const std::filesystem::path& path);
void write_pfm(const std::filesystem::path& path, const Image& img);

// Radiance RGBE (.hdr). The writer emits flat scanlines; the reader handles
// both flat and RLE-compressed files.
Image read_hdr(const std::filesystem::path& path);
void write_hdr(const std::filesystem::path& path, const Image& img);

EnvironmentMap read_env_hdr(const std::filesystem::path& path,
                            int rows = kEnvRows, int cols = kEnvCols);
void write_env_hdr(const std::filesystem::path& path,
                   const EnvironmentMap& env);

// Extension-driven load/store for float maps: .pfm, .hdr, .png (16-bit,
// linear). Used by the CLI for ground-truth and probe outputs.
Image read_float_map(const std::filesystem::path& path);
void write_float_map(const std::filesystem::path& path, const Image& img);

}  // namespace invrender
