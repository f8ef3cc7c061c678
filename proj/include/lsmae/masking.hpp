// SPDX-License-Identifier: Apache-2.0
//
// Decoupled mask-size joint masking: m x m patch neighborhoods are the unit
// of masking, selected or deselected together. Mask sampling lives in the
// data pipeline, not the model, and is a pure function of
// (plan, seed, sample_id).

#pragma once

#include <cstdint>
#include <vector>

#include "lsmae/imaging.hpp"
#include "lsmae/specs.hpp"

namespace lsmae {

// A concrete sampled mask. Units are whole: the m^2 patches of a unit are
// either all visible or all masked. Index lists are sorted ascending
// (position embeddings carry location, so order is canonical).
struct MaskAssignment {
  MaskPlan plan;
  std::vector<std::size_t> visible_patch_indices;  // length L_e
  std::vector<std::size_t> masked_patch_indices;   // length L - L_e
  std::vector<bool> unit_mask;                     // u*u, true = masked

  bool operator==(const MaskAssignment&) const = default;
};

// Patch indices of mask unit (r, c) = (unit_index div u, unit_index mod u):
// {(r*m + i)*g + (c*m + j) : 0 <= i, j < m}, in row-major order.
std::vector<std::size_t> expand_unit_to_patches(int unit_index, const MaskPlan& plan);

// Uniformly samples plan.masked_units units without replacement via a seeded
// Fisher-Yates shuffle of unit indices. Deterministic in (plan, seed,
// sample_id); independent of worker layout.
MaskAssignment sample_mask(const MaskPlan& plan, std::uint64_t rng_seed, std::uint64_t sample_id);

// Replaces masked patches with mid-gray (0.5).
Image mask_to_preview(const MaskAssignment& assignment, const Image& img);

}  // namespace lsmae
