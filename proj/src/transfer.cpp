// SPDX-License-Identifier: Apache-2.0

#include "lsmae/transfer.hpp"

#include <cmath>
#include <set>

#include "lsmae/errors.hpp"
#include "lsmae/imaging.hpp"

namespace lsmae {

Tensor resample_pos_grid(const Tensor& pos, int new_side) {
  if (pos.rank() != 2) throw GeometryError("resample_pos_grid expects a [L, d] tensor");
  const std::size_t L = pos.dim(0), d = pos.dim(1);
  const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(L))));
  if (side * side != L) {
    throw GeometryError("position grid length " + std::to_string(L) + " is not a perfect square");
  }
  if (new_side < 1) throw GeometryError("resample_pos_grid: target side must be positive");
  Tensor grid = Tensor({side, side, d}, pos.value());
  Tensor out = bicubic_resample(grid, new_side, new_side);
  return Tensor({static_cast<std::size_t>(new_side) * new_side, d}, out.value());
}

Tensor resample_patch_filters(const Tensor& filters, int new_patch) {
  if (filters.rank() != 4) throw GeometryError("resample_patch_filters expects [out, in, p, p]");
  const std::size_t out_ch = filters.dim(0), in_ch = filters.dim(1);
  const std::size_t p = filters.dim(2);
  if (filters.dim(3) != p) throw GeometryError("resample_patch_filters: filters must be square");
  if (new_patch < 1) throw GeometryError("resample_patch_filters: target size must be positive");
  const auto np = static_cast<std::size_t>(new_patch);
  std::vector<float> out(out_ch * in_ch * np * np);
  std::vector<float> plane(p * p);
  for (std::size_t o = 0; o < out_ch; ++o) {
    for (std::size_t c = 0; c < in_ch; ++c) {
      const float* src = filters.value().data() + (o * in_ch + c) * p * p;
      std::copy_n(src, p * p, plane.data());
      Tensor res = bicubic_resample(Tensor({p, p, 1}, plane), new_patch, new_patch);
      std::copy_n(res.value().data(), np * np, out.data() + (o * in_ch + c) * np * np);
    }
  }
  return Tensor({out_ch, in_ch, np, np}, std::move(out));
}

namespace {

// Rows of a [D, s*s*3] pixel-head weight are s x s x 3 patch planes; the
// bias is one such plane. Resample each to s' x s' x 3.
std::vector<float> resample_patch_planes(const std::vector<float>& data, std::size_t rows,
                                         int side, int new_side) {
  const auto s = static_cast<std::size_t>(side);
  const auto ns = static_cast<std::size_t>(new_side);
  std::vector<float> out(rows * ns * ns * 3);
  std::vector<float> plane(s * s * 3);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(data.data() + r * s * s * 3, s * s * 3, plane.data());
    Tensor res = bicubic_resample(Tensor({s, s, 3}, plane), new_side, new_side);
    std::copy_n(res.value().data(), ns * ns * 3, out.data() + r * ns * ns * 3);
  }
  return out;
}

}  // namespace

Checkpoint resample_checkpoint(const Checkpoint& ckpt, const ImageSpec& from_spec,
                               const ImageSpec& to_spec) {
  const auto meta = ckpt.metadata_map();
  const ViTMAEConfig from_cfg = config_from_metadata(meta);
  if (from_cfg.image_size != from_spec.image_size || from_cfg.patch_size != from_spec.patch_size) {
    throw ConfigError("checkpoint metadata geometry (I=" + std::to_string(from_cfg.image_size) +
                      ", p=" + std::to_string(from_cfg.patch_size) +
                      ") does not match the requested source spec");
  }

  // Validate entry names against the schema before touching anything.
  std::set<std::string> known;
  for (const auto& [name, shape] : param_schema(from_cfg)) known.insert(name);
  known.insert("enc_pos");
  known.insert("dec_pos");
  std::string offenders;
  for (const auto& e : ckpt.entries) {
    std::string base = e.name;
    if (base.starts_with("opt/m/") || base.starts_with("opt/v/")) base = base.substr(6);
    if (!known.count(base)) offenders += (offenders.empty() ? "" : ", ") + e.name;
  }
  if (!offenders.empty()) {
    throw ConfigError("checkpoint entries not in the parameter schema: " + offenders);
  }

  if (to_spec == from_spec) return ckpt;

  ViTMAEConfig to_cfg = from_cfg;
  to_cfg.image_size = to_spec.image_size;
  to_cfg.patch_size = to_spec.patch_size;
  validate_config(to_cfg);

  const bool patch_changed = from_spec.patch_size != to_spec.patch_size;
  const bool grid_changed = from_spec.grid_side() != to_spec.grid_side();
  std::set<std::string> geometry_changed;
  if (patch_changed) {
    geometry_changed.insert("patch_embed.weight");
    geometry_changed.insert("pixel_head.weight");
    geometry_changed.insert("pixel_head.bias");
  }
  if (grid_changed) {
    geometry_changed.insert("enc_pos");
    geometry_changed.insert("dec_pos");
  }

  Checkpoint out;
  for (const auto& e : ckpt.entries) {
    // Stale optimizer moments cannot follow a geometry change.
    if (e.name.starts_with("opt/m/") || e.name.starts_with("opt/v/")) {
      if (geometry_changed.count(e.name.substr(6))) continue;
      out.entries.push_back(e);
      continue;
    }
    if (!geometry_changed.count(e.name)) {
      out.entries.push_back(e);
      continue;
    }
    if (e.name == "patch_embed.weight") {
      Tensor t = resample_patch_filters(Tensor(e.dims, e.data), to_spec.patch_size);
      out.entries.push_back(CheckpointEntry{e.name, t.shape(), t.value()});
    } else if (e.name == "pixel_head.weight") {
      const std::size_t rows = e.dims.at(0);
      std::vector<float> data =
          resample_patch_planes(e.data, rows, from_cfg.out_patch_size(), to_cfg.out_patch_size());
      out.entries.push_back(CheckpointEntry{
          e.name, Shape{rows, static_cast<std::size_t>(to_cfg.out_patch_dim())},
          std::move(data)});
    } else if (e.name == "pixel_head.bias") {
      std::vector<float> data =
          resample_patch_planes(e.data, 1, from_cfg.out_patch_size(), to_cfg.out_patch_size());
      out.entries.push_back(CheckpointEntry{
          e.name, Shape{static_cast<std::size_t>(to_cfg.out_patch_dim())}, std::move(data)});
    } else if (e.name == "enc_pos" || e.name == "dec_pos") {
      Tensor t = resample_pos_grid(Tensor(e.dims, e.data), to_spec.grid_side());
      out.entries.push_back(CheckpointEntry{e.name, t.shape(), t.value()});
    }
  }

  auto new_meta = meta;
  new_meta["image_size"] = std::to_string(to_spec.image_size);
  new_meta["patch_size"] = std::to_string(to_spec.patch_size);
  new_meta["seq_len"] = std::to_string(to_spec.seq_len);
  if (meta.count("mask_size") && meta.count("mask_ratio")) {
    // Recompute plan-derived lengths when the mask geometry still fits.
    try {
      const MaskPlan plan = plan_from_metadata(new_meta);
      new_meta["encoder_len"] = std::to_string(plan.encoder_len);
      new_meta["decoder_len"] = std::to_string(plan.decoder_len);
    } catch (const GeometryError&) {
      new_meta.erase("encoder_len");
      new_meta.erase("decoder_len");
    }
  }
  out.metadata = canonical_metadata(new_meta);
  return out;
}

}  // namespace lsmae
