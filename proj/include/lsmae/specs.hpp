// SPDX-License-Identifier: Apache-2.0
//
// Input-specification calculus for masked autoencoder pre-training: the
// deterministic relationship between image size I, patch size p and sequence
// length L = (I/p)^2, the decoupled mask-size plan, and a dense-transformer
// compute estimate.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace lsmae {

struct ViTMAEConfig;  // model.hpp

// (I, p, L) with L = (I/p)^2.
struct ImageSpec {
  int image_size = 0;  // I, pixels (square)
  int patch_size = 0;  // p, pixels (square)
  int seq_len = 0;     // L, patch tokens

  int grid_side() const { return image_size / patch_size; }
  bool operator==(const ImageSpec&) const = default;
};

// Static mask geometry for a spec: m x m patch units, mask ratio gamma.
struct MaskPlan {
  ImageSpec spec;
  int mask_size = 1;        // m, patches per unit side
  float mask_ratio = 0.0f;  // gamma in [0, 1]
  int units_per_side = 0;   // u = (I/p)/m
  int total_units = 0;      // U = u^2
  int masked_units = 0;
  int visible_units = 0;
  int encoder_len = 0;  // L_e = visible_units * m^2
  int decoder_len = 0;  // L_d = L, or L/4 with the decoder-downsample variant

  int masked_patches() const { return spec.seq_len - encoder_len; }
  bool operator==(const MaskPlan&) const = default;
};

// Per-image FLOP estimate (12*n*d^2 + 2*n^2*d per transformer block).
struct CostEstimate {
  double encoder_flops = 0.0;
  double decoder_flops = 0.0;
  double total_flops = 0.0;
};

// Builds the (I, p, L) spec; throws GeometryError when p does not divide I.
ImageSpec derive_input_spec(int image_size, int patch_size);

// Builds the mask plan. visible_units = round(U * (1 - gamma)); throws
// GeometryError when m does not divide the patch grid (or, with
// decoder_downsample, when the grid side is odd).
MaskPlan derive_mask_plan(const ImageSpec& spec, int mask_size, float mask_ratio,
                          bool decoder_downsample = false);

enum class FixedDim { ImageSize, PatchSize, SeqLen };

struct SpecEnumeration {
  std::vector<ImageSpec> specs;
  std::vector<std::string> rejected;  // diagnostics for excluded combinations
};

// "Fix one, vary two": holds one dimension at `value` and derives the other
// two from each candidate (patch sizes when I is fixed, image sizes
// otherwise). Invalid combinations are excluded and reported.
SpecEnumeration enumerate_fix_one_vary_two(FixedDim fixed, int value,
                                           const std::vector<int>& candidates);

// Dense-transformer estimate: encoder blocks run at n = L_e + 1 (visible
// tokens plus [CLS]), decoder blocks at n = L_d.
CostEstimate estimate_flops(const ViTMAEConfig& cfg, const MaskPlan& plan);

}  // namespace lsmae
