// SPDX-License-Identifier: Apache-2.0
//
// Geometry transfer of checkpoints across (I, p, L): position grids and
// patch-coupled filters are bicubic-resampled so a model pre-trained at one
// input spec initializes another; everything else is copied bitwise.

#pragma once

#include "lsmae/checkpoint.hpp"
#include "lsmae/specs.hpp"
#include "lsmae/tensor.hpp"

namespace lsmae {

// Resamples a [g^2, d] position grid to [g'^2, d] (per-channel bicubic over
// the g x g layout). Callers pass spatial rows only; [CLS]/mask entries stay
// untouched upstream.
Tensor resample_pos_grid(const Tensor& pos, int new_side);

// Per-plane bicubic resample of [out, in, p, p] filters to p' x p'. No
// energy renormalization: plain interpolation.
Tensor resample_patch_filters(const Tensor& filters, int new_patch);

// Rewrites a checkpoint for a new (I, p) spec:
//   - patch_embed.weight planes are resampled when p changes;
//   - pixel_head weights/bias are resampled as output-patch planes so the
//     decoder stays loadable at the new geometry;
//   - learned position entries ("enc_pos"/"dec_pos"), when present, go
//     through resample_pos_grid; sin-cos positions are parameter-free and
//     regenerate inside the model at the new grid;
//   - every other parameter is copied verbatim; optimizer moments of
//     geometry-changed tensors are dropped, the rest kept;
//   - metadata geometry keys are updated.
// Identity transfers (to == from) return a byte-identical checkpoint.
// Unknown entry names raise a ConfigError listing the offenders.
Checkpoint resample_checkpoint(const Checkpoint& ckpt, const ImageSpec& from_spec,
                               const ImageSpec& to_spec);

}  // namespace lsmae
