// SPDX-License-Identifier: Apache-2.0
//
// ViT encoder, lightweight decoder and the MAE assembly:
// embed -> drop masked -> encode -> project -> pad with [MASK] -> decode ->
// predict per-patch pixels. Forward paths are templated on the scalar type
// so tests can shadow-evaluate the identical graph at f64.

#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "lsmae/errors.hpp"
#include "lsmae/imaging.hpp"
#include "lsmae/masking.hpp"
#include "lsmae/specs.hpp"
#include "lsmae/tensor.hpp"

namespace lsmae {

constexpr float kLayerNormEps = 1e-6f;

struct ViTMAEConfig {
  int enc_depth = 0;
  int enc_width = 0;
  int enc_heads = 0;
  int dec_depth = 0;
  int dec_width = 0;
  int dec_heads = 0;
  int patch_size = 0;
  int image_size = 0;
  int mlp_ratio = 4;
  bool decoder_downsample = false;

  int grid_side() const { return image_size / patch_size; }
  int seq_len() const { return grid_side() * grid_side(); }
  int decoder_len() const { return decoder_downsample ? seq_len() / 4 : seq_len(); }
  // Prediction patch side: p, or 2p in the downsample variant.
  int out_patch_size() const { return decoder_downsample ? 2 * patch_size : patch_size; }
  int out_patch_dim() const { return out_patch_size() * out_patch_size() * 3; }
  int patch_dim() const { return patch_size * patch_size * 3; }

  bool operator==(const ViTMAEConfig&) const = default;
};

// Throws ConfigError on inconsistent geometry (widths not divisible by head
// counts or by 4 for sin-cos positions, patch not dividing image, odd grid
// with decoder_downsample).
void validate_config(const ViTMAEConfig& cfg);

// Presets: "tiny" (enc 2x32x4, dec 1x16x4), "vit-b" (enc 12x768x12, dec
// 4x384x12), "vit-l" (enc 24x1024x16, dec 8x512x16). Decoder width is half
// the encoder width with the same head count.
ViTMAEConfig make_preset(const std::string& name, int image_size, int patch_size);

// Ordered name -> shape layout of every parameter tensor for a config.
std::vector<std::pair<std::string, Shape>> param_schema(const ViTMAEConfig& cfg);

// Total scalar parameter count; a pure function of the config.
std::size_t param_count(const ViTMAEConfig& cfg);

// Named parameter tensors with stable iteration order.
template <typename T>
class ParamStoreT {
 public:
  void add(const std::string& name, TensorT<T> t) {
    if (map_.count(name)) throw ConfigError("duplicate parameter name '" + name + "'");
    names_.push_back(name);
    map_.emplace(name, std::move(t));
  }

  bool has(const std::string& name) const { return map_.count(name) != 0; }

  const TensorT<T>& at(const std::string& name) const {
    auto it = map_.find(name);
    if (it == map_.end()) throw ConfigError("unknown parameter '" + name + "'");
    return it->second;
  }

  TensorT<T>& at(const std::string& name) {
    auto it = map_.find(name);
    if (it == map_.end()) throw ConfigError("unknown parameter '" + name + "'");
    return it->second;
  }

  const std::vector<std::string>& names() const { return names_; }
  std::size_t size() const { return names_.size(); }

  std::size_t total_params() const {
    std::size_t n = 0;
    for (const auto& name : names_) n += at(name).numel();
    return n;
  }

  template <typename U>
  ParamStoreT<U> cast(bool requires_grad = false) const {
    ParamStoreT<U> out;
    for (const auto& name : names_) out.add(name, at(name).template cast<U>(requires_grad));
    return out;
  }

  // Copies share tensor storage; clone() detaches into fresh tensors.
  ParamStoreT clone(bool requires_grad = true) const {
    ParamStoreT out;
    for (const auto& name : names_) {
      const TensorT<T>& t = at(name);
      out.add(name, TensorT<T>(t.shape(), t.value(), requires_grad));
    }
    return out;
  }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, TensorT<T>> map_;
};

using ParamStore = ParamStoreT<float>;

// Fresh parameters per the schema: normal(0, 0.02) weights, unit norm gains,
// zero biases. Deterministic in the seed.
ParamStore init_params(const ViTMAEConfig& cfg, std::uint64_t seed);

// Decoder target tokens that count as masked: with decoder_downsample off,
// exactly the masked patches; on, the 2p-blocks whose four constituent
// patches are all masked.
std::vector<bool> masked_target_tokens(const MaskAssignment& assignment, bool decoder_downsample);

// ---------------------------------------------------------------------------
// Fixed 2D sine-cosine position embedding: the first d/2 channels encode the
// grid row, the second d/2 the column, each as [sin(pos*w_k), cos(pos*w_k)]
// with w_k = 10000^(-k/(d/4)). Parameter-free and deterministic.
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> positions_sincos(int grid_side, int width) {
  if (width % 4 != 0) {
    throw ConfigError("positions_sincos: width " + std::to_string(width) +
                      " must be divisible by 4");
  }
  const int g = grid_side;
  const int quarter = width / 4;
  std::vector<T> out(static_cast<std::size_t>(g) * g * width);
  for (int r = 0; r < g; ++r) {
    for (int c = 0; c < g; ++c) {
      T* row = out.data() + (static_cast<std::size_t>(r) * g + c) * width;
      for (int k = 0; k < quarter; ++k) {
        const double omega = std::pow(10000.0, -static_cast<double>(k) / quarter);
        row[k] = static_cast<T>(std::sin(r * omega));
        row[quarter + k] = static_cast<T>(std::cos(r * omega));
        row[2 * quarter + k] = static_cast<T>(std::sin(c * omega));
        row[3 * quarter + k] = static_cast<T>(std::cos(c * omega));
      }
    }
  }
  return TensorT<T>({static_cast<std::size_t>(g) * g, static_cast<std::size_t>(width)},
                    std::move(out));
}

namespace detail {

// Patch-embedding filters [E, 3, p, p] viewed as the [p*p*3, E] matrix of the
// equivalent linear map over (row, col, channel)-ordered patch vectors.
template <typename T>
TensorT<T> filters_as_linear(const TensorT<T>& filters) {
  const std::size_t E = filters.dim(0);
  TensorT<T> perm = transpose(filters, std::vector<std::size_t>{0, 2, 3, 1});  // [E, p, p, 3]
  return transpose(reshape(perm, {E, filters.numel() / E}), 0, 1);
}

template <typename T>
TensorT<T> linear(const TensorT<T>& x, const ParamStoreT<T>& params, const std::string& prefix) {
  return add(matmul(x, params.at(prefix + ".weight")), params.at(prefix + ".bias"));
}

template <typename T>
TensorT<T> attention(const TensorT<T>& x, const ParamStoreT<T>& params, const std::string& prefix,
                     int heads) {
  const std::size_t N = x.dim(0), D = x.dim(1);
  const std::size_t hd = D / heads;
  auto split = [&](const char* which) {
    TensorT<T> proj = linear(x, params, prefix + ".attn." + which);
    return transpose(reshape(proj, {N, static_cast<std::size_t>(heads), hd}), 0, 1);
  };
  TensorT<T> q = split("q");  // [H, N, hd]
  TensorT<T> k = split("k");
  TensorT<T> v = split("v");
  TensorT<T> scores = scale(matmul(q, transpose(k, 1, 2)),
                            static_cast<T>(1.0 / std::sqrt(static_cast<double>(hd))));
  TensorT<T> attn = softmax(scores, 2);           // [H, N, N]
  TensorT<T> ctx = matmul(attn, v);               // [H, N, hd]
  ctx = reshape(transpose(ctx, 0, 1), {N, D});    // [N, D]
  return linear(ctx, params, prefix + ".attn.out");
}

// Pre-norm transformer block: x += attn(ln(x)); x += mlp(ln(x)).
template <typename T>
TensorT<T> vit_block(const TensorT<T>& x, const ParamStoreT<T>& params, const std::string& prefix,
                     int heads) {
  const T eps = static_cast<T>(kLayerNormEps);
  TensorT<T> h = layernorm(x, params.at(prefix + ".norm1.gamma"),
                           params.at(prefix + ".norm1.beta"), eps);
  TensorT<T> y = add(x, attention(h, params, prefix, heads));
  TensorT<T> h2 = layernorm(y, params.at(prefix + ".norm2.gamma"),
                            params.at(prefix + ".norm2.beta"), eps);
  TensorT<T> m = linear(gelu(linear(h2, params, prefix + ".mlp.fc1")), params, prefix + ".mlp.fc2");
  return add(y, m);
}

// 2x2 stride-2 convolution over the g x g token grid, applied as a linear
// map on block-gathered tokens; halves the grid side.
template <typename T>
TensorT<T> downsample_tokens(const TensorT<T>& tokens, const ParamStoreT<T>& params, int g) {
  const std::size_t D = tokens.dim(1);
  const int h = g / 2;
  std::vector<std::size_t> order;
  order.reserve(static_cast<std::size_t>(g) * g);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < h; ++c) {
      for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < 2; ++j) {
          order.push_back(static_cast<std::size_t>(2 * r + i) * g + (2 * c + j));
        }
      }
    }
  }
  TensorT<T> blocks = reshape(gather_rows(tokens, order),
                              {static_cast<std::size_t>(h) * h, 4 * D});
  const TensorT<T>& w = params.at("dec_downsample.weight");  // [D, D, 2, 2]
  TensorT<T> wl = reshape(transpose(w, std::vector<std::size_t>{2, 3, 1, 0}), {4 * D, D});
  return add(matmul(blocks, wl), params.at("dec_downsample.bias"));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// encode: tokenize visible patches, add positions at their grid locations,
// prepend [CLS], run the encoder blocks, final layernorm.
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> encode(const TensorT<T>& patches_visible, const std::vector<std::size_t>& visible_indices,
                  const ParamStoreT<T>& params, const ViTMAEConfig& cfg) {
  if (patches_visible.rank() != 2 || patches_visible.dim(0) != visible_indices.size()) {
    throw GeometryError("encode: " + std::to_string(visible_indices.size()) +
                        " visible indices for patch tensor " +
                        shape_str(patches_visible.shape()));
  }
  if (patches_visible.dim(1) != static_cast<std::size_t>(cfg.patch_dim())) {
    throw GeometryError("encode: patch dim " + std::to_string(patches_visible.dim(1)) +
                        " does not match config patch size " + std::to_string(cfg.patch_size));
  }
  TensorT<T> w = detail::filters_as_linear(params.at("patch_embed.weight"));
  TensorT<T> tokens = add(matmul(patches_visible, w), params.at("patch_embed.bias"));
  TensorT<T> pos = positions_sincos<T>(cfg.grid_side(), cfg.enc_width);
  tokens = add(tokens, gather_rows(pos, visible_indices));
  TensorT<T> seq = concat(params.at("cls_token"), tokens, 0);  // [L_e + 1, E]
  for (int i = 0; i < cfg.enc_depth; ++i) {
    seq = detail::vit_block(seq, params, "enc.block" + std::to_string(i), cfg.enc_heads);
  }
  return layernorm(seq, params.at("enc.norm.gamma"), params.at("enc.norm.beta"),
                   static_cast<T>(kLayerNormEps));
}

// ---------------------------------------------------------------------------
// decode: project latents, drop [CLS], scatter visible tokens into the full
// grid with the shared [MASK] token elsewhere, add decoder positions,
// optionally downsample the token grid 2x, run the decoder blocks, and emit
// per-token pixel predictions.
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> decode(const TensorT<T>& latents, const MaskAssignment& assignment,
                  const ParamStoreT<T>& params, const ViTMAEConfig& cfg) {
  const std::size_t L_e = assignment.visible_patch_indices.size();
  if (latents.rank() != 2 || latents.dim(0) != L_e + 1) {
    throw GeometryError("decode: latents " + shape_str(latents.shape()) +
                        " do not match assignment with L_e = " + std::to_string(L_e));
  }
  if (assignment.plan.spec.seq_len != cfg.seq_len() ||
      assignment.plan.spec.patch_size != cfg.patch_size) {
    throw GeometryError("decode: assignment spec does not match model config");
  }
  const std::size_t L = static_cast<std::size_t>(cfg.seq_len());
  TensorT<T> projected = detail::linear(latents, params, "enc_to_dec");
  TensorT<T> spatial = slice(projected, 0, 1, L_e);  // drop [CLS]
  TensorT<T> full = scatter_rows(spatial, assignment.visible_patch_indices, L,
                                 params.at("mask_token"));
  TensorT<T> pos = positions_sincos<T>(cfg.grid_side(), cfg.dec_width);
  full = add(full, pos);
  if (cfg.decoder_downsample) {
    full = detail::downsample_tokens(full, params, cfg.grid_side());
  }
  for (int i = 0; i < cfg.dec_depth; ++i) {
    full = detail::vit_block(full, params, "dec.block" + std::to_string(i), cfg.dec_heads);
  }
  full = layernorm(full, params.at("dec.norm.gamma"), params.at("dec.norm.beta"),
                   static_cast<T>(kLayerNormEps));
  return detail::linear(full, params, "pixel_head");  // [L_d, p_out^2 * 3]
}

// ---------------------------------------------------------------------------
// mae_forward_loss: mean over masked target tokens of the mean-squared error
// against per-patch normalized pixels; visible tokens contribute zero.
// ---------------------------------------------------------------------------

template <typename T>
struct MaeForwardT {
  TensorT<T> loss;                         // scalar
  std::vector<TensorT<T>> predictions;     // per image, [L_d, p_out^2 * 3]
  std::size_t masked_token_count = 0;      // loss denominator tokens, summed over batch
};

using MaeForward = MaeForwardT<float>;

// Mean over masked tokens of the per-token MSE; rows of `masked` that are
// false contribute nothing. Zero when no token is masked.
template <typename T>
TensorT<T> masked_mse(const TensorT<T>& pred, const TensorT<T>& target,
                      const std::vector<bool>& masked) {
  if (pred.rank() != 2 || pred.shape() != target.shape() || masked.size() != pred.dim(0)) {
    throw ShapeError("masked_mse: predictions " + shape_str(pred.shape()) +
                     ", targets " + shape_str(target.shape()) + " and " +
                     std::to_string(masked.size()) + " mask rows do not agree");
  }
  const std::size_t out_dim = pred.dim(1);
  std::size_t n_masked = 0;
  std::vector<T> weights(masked.size() * out_dim, T(0));
  for (std::size_t t = 0; t < masked.size(); ++t) {
    if (!masked[t]) continue;
    ++n_masked;
    std::fill_n(weights.data() + t * out_dim, out_dim, T(1));
  }
  if (n_masked == 0) return TensorT<T>::scalar(T(0));
  TensorT<T> wmask({masked.size(), out_dim}, std::move(weights));
  TensorT<T> diff = sub(pred, target);
  TensorT<T> sq = mul(mul(diff, diff), wmask);
  return scale(sum(sq), T(1) / static_cast<T>(n_masked * out_dim));
}

template <typename T>
MaeForwardT<T> mae_forward_loss(const std::vector<Image>& batch,
                                const std::vector<MaskAssignment>& assignments,
                                const ParamStoreT<T>& params, const ViTMAEConfig& cfg) {
  if (batch.empty() || batch.size() != assignments.size()) {
    throw ContractError("mae_forward_loss: batch and assignments must be non-empty and equal-sized");
  }
  MaeForwardT<T> result;
  TensorT<T> total = TensorT<T>::scalar(T(0));
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const Image& img = batch[b];
    const MaskAssignment& assignment = assignments[b];
    if (img.height != cfg.image_size || img.width != cfg.image_size) {
      throw GeometryError("mae_forward_loss: image " + std::to_string(img.height) + "x" +
                          std::to_string(img.width) + " does not match config image size " +
                          std::to_string(cfg.image_size));
    }
    PatchGrid grid = patchify(img, cfg.patch_size);
    TensorT<T> all_patches = grid.patches.template cast<T>();
    TensorT<T> visible = gather_rows(all_patches, assignment.visible_patch_indices);
    TensorT<T> latents = encode(visible, assignment.visible_patch_indices, params, cfg);
    TensorT<T> pred = decode(latents, assignment, params, cfg);

    Tensor target_f32 = cfg.decoder_downsample
                            ? normalize_patches(patchify(img, cfg.out_patch_size()).patches)
                            : normalize_patches(grid.patches);
    TensorT<T> target = target_f32.template cast<T>();

    const std::vector<bool> masked = masked_target_tokens(assignment, cfg.decoder_downsample);
    for (bool m : masked) result.masked_token_count += m;
    total = add(total, masked_mse(pred, target, masked));
    result.predictions.push_back(std::move(pred));
  }
  result.loss = scale(total, T(1) / static_cast<T>(batch.size()));
  return result;
}

}  // namespace lsmae
