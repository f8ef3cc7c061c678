// SPDX-License-Identifier: Apache-2.0

#include "lsmae/imaging.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "lsmae/errors.hpp"

namespace lsmae {

Image Image::filled(int height, int width, float value) {
  Image img;
  img.height = height;
  img.width = width;
  img.pixels.assign(static_cast<std::size_t>(height) * width * 3, value);
  return img;
}

PatchGrid patchify(const Image& img, int patch_size) {
  if (img.height != img.width) {
    throw GeometryError("patchify requires a square image, got " + std::to_string(img.height) +
                        "x" + std::to_string(img.width));
  }
  ImageSpec spec = derive_input_spec(img.height, patch_size);
  const int g = spec.grid_side();
  const int p = patch_size;
  const std::size_t patch_len = static_cast<std::size_t>(p) * p * 3;
  std::vector<float> out(static_cast<std::size_t>(spec.seq_len) * patch_len);
  for (int gr = 0; gr < g; ++gr) {
    for (int gc = 0; gc < g; ++gc) {
      float* dst = out.data() + (static_cast<std::size_t>(gr) * g + gc) * patch_len;
      for (int py = 0; py < p; ++py) {
        const float* src = &img.pixels[((static_cast<std::size_t>(gr) * p + py) * img.width +
                                        static_cast<std::size_t>(gc) * p) *
                                       3];
        std::copy_n(src, static_cast<std::size_t>(p) * 3, dst + static_cast<std::size_t>(py) * p * 3);
      }
    }
  }
  return PatchGrid{spec, Tensor({static_cast<std::size_t>(spec.seq_len), patch_len}, std::move(out))};
}

Image unpatchify(const PatchGrid& grid) {
  const int g = grid.spec.grid_side();
  const int p = grid.spec.patch_size;
  const std::size_t patch_len = static_cast<std::size_t>(p) * p * 3;
  if (grid.patches.rank() != 2 || grid.patches.dim(0) != static_cast<std::size_t>(grid.spec.seq_len) ||
      grid.patches.dim(1) != patch_len) {
    throw GeometryError("unpatchify: patch tensor " + shape_str(grid.patches.shape()) +
                        " does not match spec");
  }
  Image img = Image::filled(grid.spec.image_size, grid.spec.image_size, 0.0f);
  const auto& data = grid.patches.value();
  for (int gr = 0; gr < g; ++gr) {
    for (int gc = 0; gc < g; ++gc) {
      const float* src = data.data() + (static_cast<std::size_t>(gr) * g + gc) * patch_len;
      for (int py = 0; py < p; ++py) {
        float* dst = &img.pixels[((static_cast<std::size_t>(gr) * p + py) * img.width +
                                  static_cast<std::size_t>(gc) * p) *
                                 3];
        std::copy_n(src + static_cast<std::size_t>(py) * p * 3, static_cast<std::size_t>(p) * 3, dst);
      }
    }
  }
  return img;
}

namespace {

// Keys cubic convolution kernel with a = -0.5 (Catmull-Rom).
double cubic_weight(double t) {
  constexpr double a = -0.5;
  t = std::fabs(t);
  if (t <= 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
  if (t < 2.0) return ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a;
  return 0.0;
}

struct AxisTaps {
  std::vector<int> base;       // floor(src) per output coordinate
  std::vector<double> weight;  // 4 taps per output coordinate
};

AxisTaps make_taps(int in_size, int out_size) {
  AxisTaps taps;
  taps.base.resize(out_size);
  taps.weight.resize(static_cast<std::size_t>(out_size) * 4);
  const double scale = static_cast<double>(in_size) / out_size;
  for (int o = 0; o < out_size; ++o) {
    const double src = (o + 0.5) * scale - 0.5;
    const int base = static_cast<int>(std::floor(src));
    const double frac = src - base;
    taps.base[o] = base;
    taps.weight[o * 4 + 0] = cubic_weight(frac + 1.0);
    taps.weight[o * 4 + 1] = cubic_weight(frac);
    taps.weight[o * 4 + 2] = cubic_weight(1.0 - frac);
    taps.weight[o * 4 + 3] = cubic_weight(2.0 - frac);
  }
  return taps;
}

int clamp_index(int i, int size) { return std::clamp(i, 0, size - 1); }

}  // namespace

Tensor bicubic_resample(const Tensor& grid, int out_height, int out_width) {
  if (grid.rank() != 3) throw ShapeError("bicubic_resample expects a [H, W, C] tensor");
  if (out_height < 1 || out_width < 1) {
    throw ContractError("bicubic_resample: target size must be positive");
  }
  const int H = static_cast<int>(grid.dim(0));
  const int W = static_cast<int>(grid.dim(1));
  const int C = static_cast<int>(grid.dim(2));
  const auto& in = grid.value();

  // Horizontal pass into [H, W', C], double precision throughout.
  const AxisTaps xt = make_taps(W, out_width);
  std::vector<double> tmp(static_cast<std::size_t>(H) * out_width * C);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < out_width; ++x) {
      for (int c = 0; c < C; ++c) {
        double acc = 0.0;
        for (int t = 0; t < 4; ++t) {
          const int sx = clamp_index(xt.base[x] - 1 + t, W);
          acc += xt.weight[x * 4 + t] *
                 in[(static_cast<std::size_t>(y) * W + sx) * C + c];
        }
        tmp[(static_cast<std::size_t>(y) * out_width + x) * C + c] = acc;
      }
    }
  }

  // Vertical pass into [H', W', C].
  const AxisTaps yt = make_taps(H, out_height);
  std::vector<float> out(static_cast<std::size_t>(out_height) * out_width * C);
  for (int y = 0; y < out_height; ++y) {
    for (int x = 0; x < out_width; ++x) {
      for (int c = 0; c < C; ++c) {
        double acc = 0.0;
        for (int t = 0; t < 4; ++t) {
          const int sy = clamp_index(yt.base[y] - 1 + t, H);
          acc += yt.weight[y * 4 + t] *
                 tmp[(static_cast<std::size_t>(sy) * out_width + x) * C + c];
        }
        out[(static_cast<std::size_t>(y) * out_width + x) * C + c] = static_cast<float>(acc);
      }
    }
  }
  return Tensor({static_cast<std::size_t>(out_height), static_cast<std::size_t>(out_width),
                 static_cast<std::size_t>(C)},
                std::move(out));
}

Image bicubic_resample(const Image& img, int out_height, int out_width) {
  Tensor grid({static_cast<std::size_t>(img.height), static_cast<std::size_t>(img.width), 3},
              img.pixels);
  Tensor res = bicubic_resample(grid, out_height, out_width);
  Image out;
  out.height = out_height;
  out.width = out_width;
  out.pixels = res.value();
  return out;
}

Image resize_long_side(const Image& img, int target) {
  if (target < 1) throw ContractError("resize_long_side: target must be >= 1");
  const int long_side = std::max(img.height, img.width);
  const double s = static_cast<double>(target) / long_side;
  int out_h, out_w;
  if (img.height >= img.width) {
    out_h = target;
    out_w = std::max(1, static_cast<int>(std::lround(img.width * s)));
  } else {
    out_w = target;
    out_h = std::max(1, static_cast<int>(std::lround(img.height * s)));
  }
  if (out_h == img.height && out_w == img.width) return img;
  return bicubic_resample(img, out_h, out_w);
}

std::vector<float> normalize_target(const std::vector<float>& patch, float eps) {
  double mean = 0.0;
  for (float v : patch) mean += v;
  mean /= static_cast<double>(patch.size());
  double var = 0.0;
  for (float v : patch) {
    const double d = v - mean;
    var += d * d;
  }
  var /= static_cast<double>(patch.size());
  const double inv = 1.0 / std::sqrt(var + eps);
  std::vector<float> out(patch.size());
  for (std::size_t i = 0; i < patch.size(); ++i) {
    out[i] = static_cast<float>((patch[i] - mean) * inv);
  }
  return out;
}

Tensor normalize_patches(const Tensor& patches, float eps) {
  if (patches.rank() != 2) throw ShapeError("normalize_patches expects a [L, P] tensor");
  const std::size_t L = patches.dim(0), P = patches.dim(1);
  const auto& in = patches.value();
  std::vector<float> out(in.size());
  std::vector<float> row(P);
  for (std::size_t r = 0; r < L; ++r) {
    std::copy_n(in.data() + r * P, P, row.data());
    const std::vector<float> n = normalize_target(row, eps);
    std::copy_n(n.data(), P, out.data() + r * P);
  }
  return Tensor({L, P}, std::move(out));
}

// --------------------------------------------------------------------------
// PPM / PGM
// --------------------------------------------------------------------------

namespace {

// Skips whitespace and '#' comment lines between header tokens.
int next_header_int(std::istream& in, const std::string& path) {
  int ch = in.get();
  while (ch != EOF) {
    if (ch == '#') {
      while (ch != EOF && ch != '\n') ch = in.get();
    } else if (!std::isspace(ch)) {
      break;
    }
    ch = in.get();
  }
  if (ch == EOF || !std::isdigit(ch)) throw IoError("malformed PNM header in " + path);
  int value = 0;
  while (ch != EOF && std::isdigit(ch)) {
    value = value * 10 + (ch - '0');
    ch = in.get();
  }
  return value;
}

}  // namespace

Image read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  char m0 = 0, m1 = 0;
  in.get(m0);
  in.get(m1);
  if (m0 != 'P' || m1 != '6') throw IoError(path + " is not a binary PPM (P6) file");
  const int width = next_header_int(in, path);
  const int height = next_header_int(in, path);
  const int maxval = next_header_int(in, path);
  if (width < 1 || height < 1) throw IoError(path + " has non-positive dimensions");
  if (maxval != 255) {
    throw IoError(path + " has maxval " + std::to_string(maxval) + "; only 255 is supported");
  }
  const std::size_t n = static_cast<std::size_t>(width) * height * 3;
  std::vector<unsigned char> raw(n);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n) {
    throw IoError(path + " is truncated: expected " + std::to_string(n) + " pixel bytes");
  }
  Image img;
  img.height = height;
  img.width = width;
  img.pixels.resize(n);
  for (std::size_t i = 0; i < n; ++i) img.pixels[i] = raw[i] / 255.0f;
  return img;
}

namespace {

unsigned char to_byte(float v) {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<unsigned char>(std::lround(c * 255.0f));
}

void write_binary(const std::string& path, const std::string& header,
                  const std::vector<unsigned char>& payload) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << header;
  out.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size()));
  if (!out) throw IoError("write failed for " + path);
}

}  // namespace

void write_ppm(const Image& img, const std::string& path) {
  std::vector<unsigned char> raw(img.pixels.size());
  for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = to_byte(img.pixels[i]);
  write_binary(path,
               "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n",
               raw);
}

void write_pgm(const std::vector<float>& gray, int height, int width, const std::string& path) {
  if (gray.size() != static_cast<std::size_t>(height) * width) {
    throw ShapeError("write_pgm: buffer size does not match dimensions");
  }
  std::vector<unsigned char> raw(gray.size());
  for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = to_byte(gray[i]);
  write_binary(path, "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n",
               raw);
}

}  // namespace lsmae
