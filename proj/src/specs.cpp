// SPDX-License-Identifier: Apache-2.0

#include "lsmae/specs.hpp"

#include <cmath>

#include "lsmae/errors.hpp"
#include "lsmae/model.hpp"

namespace lsmae {

ImageSpec derive_input_spec(int image_size, int patch_size) {
  if (image_size < 1 || patch_size < 1) {
    throw GeometryError("image and patch size must be positive");
  }
  if (image_size % patch_size != 0) {
    throw GeometryError("patch size " + std::to_string(patch_size) +
                        " does not divide image size " + std::to_string(image_size));
  }
  const int g = image_size / patch_size;
  return ImageSpec{image_size, patch_size, g * g};
}

MaskPlan derive_mask_plan(const ImageSpec& spec, int mask_size, float mask_ratio,
                          bool decoder_downsample) {
  if (mask_size < 1) throw GeometryError("mask size must be positive");
  if (mask_ratio < 0.0f || mask_ratio > 1.0f) {
    throw GeometryError("mask ratio must lie in [0, 1], got " + std::to_string(mask_ratio));
  }
  const int g = spec.grid_side();
  if (g % mask_size != 0) {
    throw GeometryError("mask size " + std::to_string(mask_size) +
                        " does not divide the patch grid side " + std::to_string(g));
  }
  MaskPlan plan;
  plan.spec = spec;
  plan.mask_size = mask_size;
  plan.mask_ratio = mask_ratio;
  plan.units_per_side = g / mask_size;
  plan.total_units = plan.units_per_side * plan.units_per_side;
  // Fixed visible count per image: round U*(1-gamma). Exact whenever the
  // product is integral, which covers every configuration reported.
  plan.visible_units =
      static_cast<int>(std::lround(static_cast<double>(plan.total_units) * (1.0 - mask_ratio)));
  plan.masked_units = plan.total_units - plan.visible_units;
  plan.encoder_len = plan.visible_units * mask_size * mask_size;
  if (decoder_downsample) {
    if (g % 2 != 0) {
      throw GeometryError("decoder downsampling needs an even grid side, got " +
                          std::to_string(g));
    }
    plan.decoder_len = spec.seq_len / 4;
  } else {
    plan.decoder_len = spec.seq_len;
  }
  return plan;
}

SpecEnumeration enumerate_fix_one_vary_two(FixedDim fixed, int value,
                                           const std::vector<int>& candidates) {
  SpecEnumeration out;
  for (int cand : candidates) {
    if (cand < 1) {
      out.rejected.push_back("candidate " + std::to_string(cand) + " is not positive");
      continue;
    }
    try {
      switch (fixed) {
        case FixedDim::ImageSize:
          // Candidates are patch sizes.
          out.specs.push_back(derive_input_spec(value, cand));
          break;
        case FixedDim::PatchSize:
          // Candidates are image sizes.
          out.specs.push_back(derive_input_spec(cand, value));
          break;
        case FixedDim::SeqLen: {
          // Candidates are image sizes; the patch size follows from L.
          const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(value))));
          if (side * side != value) {
            out.rejected.push_back("sequence length " + std::to_string(value) +
                                   " is not a perfect square");
            continue;
          }
          if (cand % side != 0) {
            out.rejected.push_back("image size " + std::to_string(cand) +
                                   " is not divisible by grid side " + std::to_string(side));
            continue;
          }
          ImageSpec spec = derive_input_spec(cand, cand / side);
          if (spec.seq_len != value) {
            out.rejected.push_back("image size " + std::to_string(cand) +
                                   " cannot realize sequence length " + std::to_string(value));
            continue;
          }
          out.specs.push_back(spec);
          break;
        }
      }
    } catch (const GeometryError& e) {
      out.rejected.push_back(e.what());
    }
  }
  return out;
}

CostEstimate estimate_flops(const ViTMAEConfig& cfg, const MaskPlan& plan) {
  auto per_block = [](double n, double d) { return 12.0 * n * d * d + 2.0 * n * n * d; };
  CostEstimate est;
  const double n_enc = static_cast<double>(plan.encoder_len) + 1.0;  // + [CLS]
  est.encoder_flops = cfg.enc_depth * per_block(n_enc, cfg.enc_width);
  est.decoder_flops = cfg.dec_depth * per_block(static_cast<double>(plan.decoder_len), cfg.dec_width);
  est.total_flops = est.encoder_flops + est.decoder_flops;
  return est;
}

}  // namespace lsmae
