// SPDX-License-Identifier: Apache-2.0

#include "lsmae/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "lsmae/errors.hpp"
#include "lsmae/rng.hpp"

namespace lsmae {

namespace {

constexpr std::uint64_t kStreamShuffle = 0x7368666cULL;  // "shfl"
constexpr std::uint64_t kStreamCrop = 0x63726f70ULL;     // "crop"
constexpr double kPi = 3.14159265358979323846;

std::string fmt_g(float v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.8g", static_cast<double>(v));
  return buf;
}

}  // namespace

std::string MetricsLog::to_text() const {
  std::string out;
  for (const auto& r : records) {
    out += "step=" + std::to_string(r.step) + " epoch=" + std::to_string(r.epoch) +
           " lr=" + fmt_g(r.lr) + " loss=" + fmt_g(r.loss) +
           " wall_ms=" + std::to_string(r.wall_ms) + "\n";
  }
  return out;
}

double lr_at(std::uint64_t step, std::uint64_t total_steps, const TrainConfig& cfg) {
  if (step > total_steps) throw ContractError("lr_at: step beyond total_steps");
  if (total_steps == 0) return 0.0;
  const double warmup_epochs = cfg.warmup_epochs < 0.0f ? 0.05 * cfg.epochs
                                                        : static_cast<double>(cfg.warmup_epochs);
  const double warmup_frac = cfg.epochs > 0 ? warmup_epochs / cfg.epochs : 0.0;
  const auto warmup_steps =
      static_cast<std::uint64_t>(std::llround(warmup_frac * static_cast<double>(total_steps)));
  const double peak = cfg.peak_lr();
  if (warmup_steps > 0 && step < warmup_steps) {
    return peak * static_cast<double>(step) / static_cast<double>(warmup_steps);
  }
  if (total_steps == warmup_steps) return peak;
  if (step == total_steps) return 0.0;  // exact cosine endpoint
  const double progress = static_cast<double>(step - warmup_steps) /
                          static_cast<double>(total_steps - warmup_steps);
  return peak * 0.5 * (1.0 + std::cos(kPi * progress));
}

bool weight_decay_applies(const std::string& name) {
  if (name.ends_with(".bias") || name.ends_with(".gamma") || name.ends_with(".beta")) return false;
  if (name == "cls_token" || name == "mask_token") return false;
  return true;
}

void adamw_step(ParamStore& params, AdamState& state, double lr, const TrainConfig& cfg) {
  state.t += 1;
  const double b1 = cfg.beta1, b2 = cfg.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
  for (const auto& name : params.names()) {
    Tensor& p = params.at(name);
    const std::vector<float>& g = p.grad();
    if (g.empty()) continue;  // no gradient reached this parameter
    if (g.size() != p.numel()) {
      throw ShapeError("adamw_step: gradient/parameter size mismatch for '" + name + "'");
    }
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.empty()) m.assign(p.numel(), 0.0f);
    if (v.empty()) v.assign(p.numel(), 0.0f);
    if (m.size() != p.numel() || v.size() != p.numel()) {
      throw ShapeError("adamw_step: optimizer state shape mismatch for '" + name + "'");
    }
    const double wd = weight_decay_applies(name) ? cfg.weight_decay : 0.0;
    auto& value = p.mutable_value();
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double grad = g[i];
      const double mi = b1 * m[i] + (1.0 - b1) * grad;
      const double vi = b2 * v[i] + (1.0 - b2) * grad * grad;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      const double mhat = mi / bc1;
      const double vhat = vi / bc2;
      const double update = mhat / (std::sqrt(vhat) + cfg.adam_eps) + wd * value[i];
      value[i] = static_cast<float>(value[i] - lr * update);
    }
  }
}

// --------------------------------------------------------------------------
// Synthetic corpora
// --------------------------------------------------------------------------

SyntheticKind synthetic_kind_from_name(const std::string& name) {
  if (name == "gradients") return SyntheticKind::Gradients;
  if (name == "checkers") return SyntheticKind::Checkers;
  if (name == "gaussian-blobs" || name == "blobs") return SyntheticKind::GaussianBlobs;
  throw ConfigError("unknown synthetic corpus kind '" + name +
                    "' (expected gradients, checkers or gaussian-blobs)");
}

namespace {

Image make_gradient_image(int side, CounterRng& rng) {
  // Linear ramp along a random direction between two random colors.
  const double angle = rng.next_double() * 2.0 * kPi;
  const double dx = std::cos(angle), dy = std::sin(angle);
  float c0[3], c1[3];
  for (int c = 0; c < 3; ++c) {
    c0[c] = rng.next_float();
    c1[c] = rng.next_float();
  }
  Image img = Image::filled(side, side, 0.0f);
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      const double t =
          ((x + 0.5) / side - 0.5) * dx + ((y + 0.5) / side - 0.5) * dy + 0.5;
      const float tc = static_cast<float>(std::clamp(t, 0.0, 1.0));
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = c0[c] + (c1[c] - c0[c]) * tc;
    }
  }
  return img;
}

Image make_checkers_image(int side, CounterRng& rng) {
  // Two gray levels on a random checkerboard: piecewise constant, at most
  // two distinct values per image.
  const float a = rng.next_float();
  const float b = rng.next_float();
  const int cell = 2 << rng.next_below(3);  // 2, 4 or 8 pixels
  const int phase = static_cast<int>(rng.next_below(2));
  Image img = Image::filled(side, side, 0.0f);
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      const bool on = ((y / cell + x / cell + phase) % 2) == 0;
      const float v = on ? a : b;
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = v;
    }
  }
  return img;
}

Image make_blobs_image(int side, CounterRng& rng) {
  Image img = Image::filled(side, side, 0.0f);
  const int blobs = 2 + static_cast<int>(rng.next_below(3));
  std::vector<double> cx(blobs), cy(blobs), sigma(blobs), amp[3];
  for (int c = 0; c < 3; ++c) amp[c].resize(blobs);
  for (int k = 0; k < blobs; ++k) {
    cx[k] = rng.next_double() * side;
    cy[k] = rng.next_double() * side;
    sigma[k] = side * (0.08 + 0.17 * rng.next_double());
    for (int c = 0; c < 3; ++c) amp[c][k] = 0.3 + 0.7 * rng.next_double();
  }
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      for (int c = 0; c < 3; ++c) {
        double v = 0.0;
        for (int k = 0; k < blobs; ++k) {
          const double d2 = (x + 0.5 - cx[k]) * (x + 0.5 - cx[k]) +
                            (y + 0.5 - cy[k]) * (y + 0.5 - cy[k]);
          v += amp[c][k] * std::exp(-d2 / (2.0 * sigma[k] * sigma[k]));
        }
        img.at(y, x, c) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return img;
}

}  // namespace

std::vector<Image> make_synthetic_corpus(SyntheticKind kind, int n, int side, std::uint64_t seed) {
  if (n < 1 || side < 1) throw ContractError("make_synthetic_corpus: n and side must be positive");
  std::vector<Image> corpus;
  corpus.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    CounterRng rng(seed, CounterRng::mix(0x73796e74ULL /* "synt" */, static_cast<std::uint64_t>(i)));
    switch (kind) {
      case SyntheticKind::Gradients:
        corpus.push_back(make_gradient_image(side, rng));
        break;
      case SyntheticKind::Checkers:
        corpus.push_back(make_checkers_image(side, rng));
        break;
      case SyntheticKind::GaussianBlobs:
        corpus.push_back(make_blobs_image(side, rng));
        break;
    }
  }
  return corpus;
}

std::optional<int> expected_masked_tokens(const MaskPlan& plan, bool decoder_downsample) {
  if (!decoder_downsample) return plan.spec.seq_len - plan.encoder_len;
  if (plan.mask_size % 2 == 0) {
    const int half = plan.mask_size / 2;
    return plan.masked_units * half * half;
  }
  return std::nullopt;  // unit grid not aligned with the 2x2 target blocks
}

// --------------------------------------------------------------------------
// Data pipeline
// --------------------------------------------------------------------------

namespace {

Image prepare_image(const Image& src, int target_side, const TrainConfig& cfg,
                    std::uint64_t seed, std::uint64_t sample_counter) {
  CounterRng rng(seed, CounterRng::mix(kStreamCrop, sample_counter));
  Image out;
  if (cfg.crop == TrainConfig::Crop::RandomResizedCrop) {
    const double smin = cfg.crop_scale_min, smax = cfg.crop_scale_max;
    const double area_scale = smin + (smax - smin) * rng.next_double();
    const int short_side = std::min(src.height, src.width);
    int crop_side = static_cast<int>(std::lround(std::sqrt(area_scale) * short_side));
    crop_side = std::clamp(crop_side, 1, short_side);
    const int max_y = src.height - crop_side;
    const int max_x = src.width - crop_side;
    const int y0 = max_y > 0 ? static_cast<int>(rng.next_below(static_cast<std::uint64_t>(max_y) + 1)) : 0;
    const int x0 = max_x > 0 ? static_cast<int>(rng.next_below(static_cast<std::uint64_t>(max_x) + 1)) : 0;
    Image crop = Image::filled(crop_side, crop_side, 0.0f);
    for (int y = 0; y < crop_side; ++y) {
      for (int x = 0; x < crop_side; ++x) {
        for (int c = 0; c < 3; ++c) crop.at(y, x, c) = src.at(y0 + y, x0 + x, c);
      }
    }
    out = (crop_side == target_side) ? std::move(crop)
                                     : bicubic_resample(crop, target_side, target_side);
  } else {
    out = (src.height == target_side && src.width == target_side)
              ? src
              : bicubic_resample(src, target_side, target_side);
  }
  if (cfg.hflip && rng.next_below(2) == 1) {
    for (int y = 0; y < out.height; ++y) {
      for (int x = 0; x < out.width / 2; ++x) {
        for (int c = 0; c < 3; ++c) std::swap(out.at(y, x, c), out.at(y, out.width - 1 - x, c));
      }
    }
  }
  // Clamp away any bicubic overshoot so images stay in [0, 1].
  for (float& v : out.pixels) v = std::clamp(v, 0.0f, 1.0f);
  return out;
}

}  // namespace

PretrainResult pretrain(const std::vector<Image>& corpus, const ImageSpec& spec,
                        const MaskPlan& plan, const ViTMAEConfig& cfg, const TrainConfig& tcfg,
                        const ParamStore* resume_params, const AdamState* resume_state) {
  if (corpus.empty()) throw ContractError("pretrain: corpus is empty");
  if (plan.spec != spec) throw GeometryError("pretrain: plan does not match the image spec");
  if (spec.image_size != cfg.image_size || spec.patch_size != cfg.patch_size) {
    throw GeometryError("pretrain: model config does not match the image spec");
  }
  if (cfg.decoder_downsample && plan.decoder_len != spec.seq_len / 4) {
    throw GeometryError("pretrain: plan decoder length does not match the downsample variant");
  }
  validate_config(cfg);
  if (tcfg.batch_size < 1 || tcfg.epochs < 0 || tcfg.max_steps < 0) {
    throw ConfigError("pretrain: batch_size must be positive and epochs/max_steps non-negative");
  }
  const std::size_t N = corpus.size();
  const auto B = static_cast<std::size_t>(tcfg.batch_size);
  if (N < B) throw ContractError("pretrain: corpus smaller than one batch");
  const std::size_t steps_per_epoch = N / B;

  std::uint64_t total_steps;
  if (tcfg.max_steps > 0) {
    total_steps = static_cast<std::uint64_t>(tcfg.max_steps);
  } else {
    total_steps = static_cast<std::uint64_t>(tcfg.epochs) * steps_per_epoch;
  }
  if (total_steps == 0) throw ConfigError("pretrain: zero training steps requested");

  ParamStore params = resume_params ? resume_params->clone() : init_params(cfg, tcfg.seed);
  AdamState opt;
  if (resume_state) opt = *resume_state;

  const std::optional<int> plan_tokens = expected_masked_tokens(plan, cfg.decoder_downsample);

  PretrainResult result;
  std::uint64_t step = 0;
  bool done = false;
  for (std::uint64_t epoch = 0; !done; ++epoch) {
    // Seeded per-epoch shuffle of corpus indices.
    std::vector<std::size_t> order(N);
    std::iota(order.begin(), order.end(), 0);
    CounterRng shuffle_rng(tcfg.seed, CounterRng::mix(kStreamShuffle, epoch));
    for (std::size_t i = N - 1; i > 0; --i) {
      const auto j = static_cast<std::size_t>(shuffle_rng.next_below(i + 1));
      std::swap(order[i], order[j]);
    }
    for (std::size_t bstart = 0; bstart + B <= N && !done; bstart += B) {
      const auto t0 = std::chrono::steady_clock::now();
      std::vector<Image> batch;
      std::vector<MaskAssignment> assignments;
      batch.reserve(B);
      assignments.reserve(B);
      for (std::size_t k = 0; k < B; ++k) {
        const std::uint64_t sample_counter = epoch * N + bstart + k;
        batch.push_back(prepare_image(corpus[order[bstart + k]], spec.image_size, tcfg, tcfg.seed,
                                      sample_counter));
        assignments.push_back(sample_mask(plan, tcfg.seed, sample_counter));
      }

      MaeForward fwd = mae_forward_loss(batch, assignments, params, cfg);
      if (plan_tokens &&
          fwd.masked_token_count != static_cast<std::size_t>(*plan_tokens) * B) {
        throw ContractError("pretrain: loss denominator " +
                            std::to_string(fwd.masked_token_count) +
                            " does not match the plan-implied masked token count " +
                            std::to_string(static_cast<std::size_t>(*plan_tokens) * B));
      }
      const double lr = lr_at(step, total_steps, tcfg);
      const float loss = fwd.loss.item();
      if (!std::isfinite(loss)) {
        throw NumericError("pretrain: non-finite loss at step " + std::to_string(step + 1) +
                           " (lr " + fmt_g(static_cast<float>(lr)) + ")");
      }
      backward(fwd.loss);
      adamw_step(params, opt, lr, tcfg);
      for (const auto& name : params.names()) params.at(name).drop_grad();

      ++step;
      if (tcfg.log_every > 0 &&
          (step % static_cast<std::uint64_t>(tcfg.log_every) == 0 || step == total_steps)) {
        MetricsRecord rec;
        rec.step = step;
        rec.epoch = static_cast<std::uint32_t>(epoch);
        rec.lr = static_cast<float>(lr);
        rec.loss = loss;
        if (tcfg.record_timing) {
          rec.wall_ms = static_cast<std::uint64_t>(
              std::chrono::duration_cast<std::chrono::milliseconds>(
                  std::chrono::steady_clock::now() - t0)
                  .count());
        }
        result.log.records.push_back(rec);
      }
      done = step >= total_steps;
    }
  }

  auto meta = describe_run(spec, plan, cfg, tcfg.seed, step);
  result.checkpoint = params_to_checkpoint(params, meta);
  for (const auto& name : params.names()) {
    auto mit = opt.m.find(name);
    auto vit = opt.v.find(name);
    if (mit != opt.m.end()) {
      result.checkpoint.entries.push_back(
          CheckpointEntry{"opt/m/" + name, params.at(name).shape(), mit->second});
    }
    if (vit != opt.v.end()) {
      result.checkpoint.entries.push_back(
          CheckpointEntry{"opt/v/" + name, params.at(name).shape(), vit->second});
    }
  }
  result.params = std::move(params);
  result.opt_state = std::move(opt);
  return result;
}

AdamState opt_state_from_checkpoint(const Checkpoint& ckpt) {
  AdamState state;
  for (const auto& e : ckpt.entries) {
    if (e.name.starts_with("opt/m/")) {
      state.m[e.name.substr(6)] = e.data;
    } else if (e.name.starts_with("opt/v/")) {
      state.v[e.name.substr(6)] = e.data;
    }
  }
  if (!state.m.empty() || !state.v.empty()) {
    const auto meta = ckpt.metadata_map();
    auto it = meta.find("step");
    if (it != meta.end()) state.t = std::stoull(it->second);
  }
  return state;
}

}  // namespace lsmae
