// SPDX-License-Identifier: Apache-2.0
//
// Image containers, PPM/PGM I/O, patchification, bicubic resampling and
// reconstruction-target normalization.

#pragma once

#include <string>
#include <vector>

#include "lsmae/specs.hpp"
#include "lsmae/tensor.hpp"

namespace lsmae {

// Row-major HWC float image, 3 channels, values in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  std::vector<float> pixels;  // height * width * 3

  static Image filled(int height, int width, float value);
  float& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  float at(int y, int x, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
};

// Patch sequence in raster order: patch k covers grid cell
// (k div g, k mod g) with g = I/p; within a patch, pixels are row-major HWC.
struct PatchGrid {
  ImageSpec spec;
  Tensor patches;  // [L, p*p*3]
};

// Exact rearrangement of a square image into p x p patches; lossless inverse.
PatchGrid patchify(const Image& img, int patch_size);
Image unpatchify(const PatchGrid& grid);

// Separable cubic convolution (Keys kernel, a = -0.5), edge-clamped sampling,
// align-corners-false mapping src = (dst + 0.5) * scale - 0.5, applied
// independently per channel. Input is a [H, W, C] tensor.
Tensor bicubic_resample(const Tensor& grid, int out_height, int out_width);
Image bicubic_resample(const Image& img, int out_height, int out_width);

// Proportional resize so the longer side equals `target`; the short side is
// rounded to the nearest integer, floored at 1.
Image resize_long_side(const Image& img, int target);

// Per-patch standardization over all p*p*3 values: (x - mean) / sqrt(var + eps).
std::vector<float> normalize_target(const std::vector<float>& patch, float eps = 1e-6f);

// Row-wise normalize_target over a [L, P] patch tensor.
Tensor normalize_patches(const Tensor& patches, float eps = 1e-6f);

// Binary PPM (P6) and PGM (P5), maxval 255, mapped to [0, 1] by /255.
Image read_ppm(const std::string& path);
void write_ppm(const Image& img, const std::string& path);
void write_pgm(const std::vector<float>& gray, int height, int width, const std::string& path);

}  // namespace lsmae
