// SPDX-License-Identifier: Apache-2.0

#include "lsmae/model.hpp"

#include <cmath>

#include "lsmae/rng.hpp"

namespace lsmae {

void validate_config(const ViTMAEConfig& cfg) {
  auto fail = [](const std::string& msg) { throw ConfigError(msg); };
  if (cfg.image_size < 1 || cfg.patch_size < 1) fail("image and patch size must be positive");
  if (cfg.image_size % cfg.patch_size != 0) {
    fail("patch size " + std::to_string(cfg.patch_size) + " does not divide image size " +
         std::to_string(cfg.image_size));
  }
  if (cfg.enc_depth < 0 || cfg.dec_depth < 0) fail("depths must be non-negative");
  if (cfg.enc_width < 4 || cfg.dec_width < 4) fail("widths must be at least 4");
  if (cfg.enc_heads < 1 || cfg.dec_heads < 1) fail("head counts must be positive");
  if (cfg.enc_width % cfg.enc_heads != 0 || cfg.dec_width % cfg.dec_heads != 0) {
    fail("widths must be divisible by head counts");
  }
  if (cfg.enc_width % 4 != 0 || cfg.dec_width % 4 != 0) {
    fail("widths must be divisible by 4 for sin-cos positions");
  }
  if (cfg.mlp_ratio < 1) fail("mlp_ratio must be positive");
  if (cfg.decoder_downsample && cfg.grid_side() % 2 != 0) {
    fail("decoder_downsample needs an even patch grid, got side " +
         std::to_string(cfg.grid_side()));
  }
}

ViTMAEConfig make_preset(const std::string& name, int image_size, int patch_size) {
  ViTMAEConfig cfg;
  cfg.image_size = image_size;
  cfg.patch_size = patch_size;
  if (name == "tiny") {
    cfg.enc_depth = 2;
    cfg.enc_width = 32;
    cfg.enc_heads = 4;
    cfg.dec_depth = 1;
    cfg.dec_width = 16;
    cfg.dec_heads = 4;
  } else if (name == "vit-b" || name == "b") {
    cfg.enc_depth = 12;
    cfg.enc_width = 768;
    cfg.enc_heads = 12;
    cfg.dec_depth = 4;
    cfg.dec_width = 384;
    cfg.dec_heads = 12;
  } else if (name == "vit-l" || name == "l") {
    cfg.enc_depth = 24;
    cfg.enc_width = 1024;
    cfg.enc_heads = 16;
    cfg.dec_depth = 8;
    cfg.dec_width = 512;
    cfg.dec_heads = 16;
  } else {
    throw ConfigError("unknown preset '" + name + "' (expected tiny, vit-b or vit-l)");
  }
  validate_config(cfg);
  return cfg;
}

namespace {

void block_schema(std::vector<std::pair<std::string, Shape>>& out, const std::string& prefix,
                  std::size_t width, int mlp_ratio) {
  const std::size_t hidden = width * static_cast<std::size_t>(mlp_ratio);
  out.emplace_back(prefix + ".norm1.gamma", Shape{width});
  out.emplace_back(prefix + ".norm1.beta", Shape{width});
  for (const char* which : {"q", "k", "v", "out"}) {
    out.emplace_back(prefix + ".attn." + which + ".weight", Shape{width, width});
    out.emplace_back(prefix + ".attn." + which + ".bias", Shape{width});
  }
  out.emplace_back(prefix + ".norm2.gamma", Shape{width});
  out.emplace_back(prefix + ".norm2.beta", Shape{width});
  out.emplace_back(prefix + ".mlp.fc1.weight", Shape{width, hidden});
  out.emplace_back(prefix + ".mlp.fc1.bias", Shape{hidden});
  out.emplace_back(prefix + ".mlp.fc2.weight", Shape{hidden, width});
  out.emplace_back(prefix + ".mlp.fc2.bias", Shape{width});
}

}  // namespace

std::vector<std::pair<std::string, Shape>> param_schema(const ViTMAEConfig& cfg) {
  validate_config(cfg);
  const auto E = static_cast<std::size_t>(cfg.enc_width);
  const auto D = static_cast<std::size_t>(cfg.dec_width);
  const auto p = static_cast<std::size_t>(cfg.patch_size);
  std::vector<std::pair<std::string, Shape>> schema;
  // Patch-embedding weights kept in 2D-convolution filter layout; geometry
  // transfer resamples them as p x p planes.
  schema.emplace_back("patch_embed.weight", Shape{E, 3, p, p});
  schema.emplace_back("patch_embed.bias", Shape{E});
  schema.emplace_back("cls_token", Shape{1, E});
  for (int i = 0; i < cfg.enc_depth; ++i) {
    block_schema(schema, "enc.block" + std::to_string(i), E, cfg.mlp_ratio);
  }
  schema.emplace_back("enc.norm.gamma", Shape{E});
  schema.emplace_back("enc.norm.beta", Shape{E});
  schema.emplace_back("enc_to_dec.weight", Shape{E, D});
  schema.emplace_back("enc_to_dec.bias", Shape{D});
  schema.emplace_back("mask_token", Shape{1, D});
  if (cfg.decoder_downsample) {
    schema.emplace_back("dec_downsample.weight", Shape{D, D, 2, 2});
    schema.emplace_back("dec_downsample.bias", Shape{D});
  }
  for (int i = 0; i < cfg.dec_depth; ++i) {
    block_schema(schema, "dec.block" + std::to_string(i), D, cfg.mlp_ratio);
  }
  schema.emplace_back("dec.norm.gamma", Shape{D});
  schema.emplace_back("dec.norm.beta", Shape{D});
  schema.emplace_back("pixel_head.weight", Shape{D, static_cast<std::size_t>(cfg.out_patch_dim())});
  schema.emplace_back("pixel_head.bias", Shape{static_cast<std::size_t>(cfg.out_patch_dim())});
  return schema;
}

std::size_t param_count(const ViTMAEConfig& cfg) {
  std::size_t n = 0;
  for (const auto& [name, shape] : param_schema(cfg)) n += shape_numel(shape);
  return n;
}

namespace {

bool is_unit_gain(const std::string& name) {
  return name.ends_with(".gamma");
}

bool is_zero_init(const std::string& name) {
  return name.ends_with(".beta") || name.ends_with(".bias");
}

}  // namespace

ParamStore init_params(const ViTMAEConfig& cfg, std::uint64_t seed) {
  CounterRng rng(seed, 0x696e6974ULL /* "init" */);
  ParamStore store;
  for (const auto& [name, shape] : param_schema(cfg)) {
    const std::size_t n = shape_numel(shape);
    std::vector<float> data(n);
    if (is_unit_gain(name)) {
      std::fill(data.begin(), data.end(), 1.0f);
    } else if (is_zero_init(name)) {
      std::fill(data.begin(), data.end(), 0.0f);
    } else {
      for (auto& v : data) v = static_cast<float>(rng.next_normal() * 0.02);
    }
    store.add(name, Tensor(shape, std::move(data), /*requires_grad=*/true));
  }
  return store;
}

std::vector<bool> masked_target_tokens(const MaskAssignment& assignment,
                                       bool decoder_downsample) {
  const int L = assignment.plan.spec.seq_len;
  std::vector<bool> patch_masked(static_cast<std::size_t>(L), false);
  for (std::size_t idx : assignment.masked_patch_indices) patch_masked[idx] = true;
  if (!decoder_downsample) return patch_masked;

  const int g = assignment.plan.spec.grid_side();
  const int h = g / 2;
  std::vector<bool> out(static_cast<std::size_t>(h) * h, false);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < h; ++c) {
      bool all = true;
      for (int i = 0; i < 2 && all; ++i) {
        for (int j = 0; j < 2 && all; ++j) {
          all = patch_masked[static_cast<std::size_t>(2 * r + i) * g + (2 * c + j)];
        }
      }
      out[static_cast<std::size_t>(r) * h + c] = all;
    }
  }
  return out;
}

}  // namespace lsmae
