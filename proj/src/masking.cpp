// SPDX-License-Identifier: Apache-2.0

#include "lsmae/masking.hpp"

#include <algorithm>
#include <numeric>

#include "lsmae/errors.hpp"
#include "lsmae/rng.hpp"

namespace lsmae {

std::vector<std::size_t> expand_unit_to_patches(int unit_index, const MaskPlan& plan) {
  if (unit_index < 0 || unit_index >= plan.total_units) {
    throw IndexError("unit index " + std::to_string(unit_index) + " out of range [0," +
                     std::to_string(plan.total_units) + ")");
  }
  const int u = plan.units_per_side;
  const int m = plan.mask_size;
  const int g = plan.spec.grid_side();
  const int r = unit_index / u;
  const int c = unit_index % u;
  std::vector<std::size_t> patches;
  patches.reserve(static_cast<std::size_t>(m) * m);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < m; ++j) {
      patches.push_back(static_cast<std::size_t>(r * m + i) * g + (c * m + j));
    }
  }
  return patches;
}

MaskAssignment sample_mask(const MaskPlan& plan, std::uint64_t rng_seed, std::uint64_t sample_id) {
  const int U = plan.total_units;
  std::vector<int> units(U);
  std::iota(units.begin(), units.end(), 0);

  CounterRng rng(rng_seed, CounterRng::mix(0x6d61736bULL /* "mask" */, sample_id));
  for (int i = U - 1; i > 0; --i) {
    const auto j = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(i) + 1));
    std::swap(units[i], units[j]);
  }

  MaskAssignment out;
  out.plan = plan;
  out.unit_mask.assign(static_cast<std::size_t>(U), false);
  for (int k = 0; k < plan.masked_units; ++k) out.unit_mask[units[k]] = true;

  out.visible_patch_indices.reserve(static_cast<std::size_t>(plan.encoder_len));
  out.masked_patch_indices.reserve(static_cast<std::size_t>(plan.spec.seq_len - plan.encoder_len));
  for (int unit = 0; unit < U; ++unit) {
    auto patches = expand_unit_to_patches(unit, plan);
    auto& dst = out.unit_mask[unit] ? out.masked_patch_indices : out.visible_patch_indices;
    dst.insert(dst.end(), patches.begin(), patches.end());
  }
  std::sort(out.visible_patch_indices.begin(), out.visible_patch_indices.end());
  std::sort(out.masked_patch_indices.begin(), out.masked_patch_indices.end());
  return out;
}

Image mask_to_preview(const MaskAssignment& assignment, const Image& img) {
  const ImageSpec& spec = assignment.plan.spec;
  if (img.height != spec.image_size || img.width != spec.image_size) {
    throw GeometryError("mask_to_preview: image " + std::to_string(img.height) + "x" +
                        std::to_string(img.width) + " does not match spec image size " +
                        std::to_string(spec.image_size));
  }
  const int g = spec.grid_side();
  const int p = spec.patch_size;
  Image out = img;
  for (std::size_t patch : assignment.masked_patch_indices) {
    const int gr = static_cast<int>(patch) / g;
    const int gc = static_cast<int>(patch) % g;
    for (int y = 0; y < p; ++y) {
      for (int x = 0; x < p; ++x) {
        for (int c = 0; c < 3; ++c) out.at(gr * p + y, gc * p + x, c) = 0.5f;
      }
    }
  }
  return out;
}

}  // namespace lsmae
