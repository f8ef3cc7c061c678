// SPDX-License-Identifier: Apache-2.0
//
// Desk-scale pre-training: deterministic data pipeline (shuffle, random
// resized crop, mask sampling in the loader), AdamW with linear warmup and
// cosine decay, line-delimited metrics.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "lsmae/checkpoint.hpp"
#include "lsmae/imaging.hpp"
#include "lsmae/masking.hpp"
#include "lsmae/model.hpp"
#include "lsmae/specs.hpp"

namespace lsmae {

struct TrainConfig {
  int epochs = 1;
  int max_steps = 0;  // 0: run every epoch; otherwise stop after this many optimizer steps
  int batch_size = 8;
  float base_lr = 1.5e-4f;        // per-256-examples convention
  float warmup_epochs = -1.0f;    // < 0: 5% of epochs
  float weight_decay = 0.05f;
  float beta1 = 0.9f;
  float beta2 = 0.95f;
  float adam_eps = 1e-8f;
  std::uint64_t seed = 0;
  enum class Crop { None, RandomResizedCrop };
  Crop crop = Crop::RandomResizedCrop;
  float crop_scale_min = 0.2f;
  float crop_scale_max = 1.0f;
  bool hflip = true;
  int log_every = 1;
  // Measures wall_ms per step when set. Off by default so logs are a pure
  // function of the seed.
  bool record_timing = false;

  float peak_lr() const { return base_lr * static_cast<float>(batch_size) / 256.0f; }
};

struct MetricsRecord {
  std::uint64_t step = 0;  // 1-based optimizer step
  std::uint32_t epoch = 0;
  float lr = 0.0f;
  float loss = 0.0f;
  std::uint64_t wall_ms = 0;
};

struct MetricsLog {
  std::vector<MetricsRecord> records;

  // "step=<u64> epoch=<u32> lr=<f32> loss=<f32> wall_ms=<u64>" per line.
  std::string to_text() const;
};

// Linear ramp 0 -> peak over the warmup window, then half-cosine peak -> 0.
double lr_at(std::uint64_t step, std::uint64_t total_steps, const TrainConfig& cfg);

struct AdamState {
  std::unordered_map<std::string, std::vector<float>> m;
  std::unordered_map<std::string, std::vector<float>> v;
  std::uint64_t t = 0;  // completed steps
};

// Decoupled-weight-decay Adam with bias-corrected moments; decay is skipped
// for norm parameters, biases and the cls/mask tokens. Consumes the gradients
// currently stored on the parameter tensors.
void adamw_step(ParamStore& params, AdamState& state, double lr, const TrainConfig& cfg);

bool weight_decay_applies(const std::string& param_name);

enum class SyntheticKind { Gradients, Checkers, GaussianBlobs };

// Deterministic structured images (reconstructable from context).
std::vector<Image> make_synthetic_corpus(SyntheticKind kind, int n, int side, std::uint64_t seed);
SyntheticKind synthetic_kind_from_name(const std::string& name);

// Masked-token count per image when it is fixed by the plan; empty when it
// varies per draw (downsample with odd mask size).
std::optional<int> expected_masked_tokens(const MaskPlan& plan, bool decoder_downsample);

struct PretrainResult {
  Checkpoint checkpoint;
  MetricsLog log;
  ParamStore params;
  AdamState opt_state;
};

// Runs the full loop: per epoch, shuffle the corpus, crop/resize each image
// to I x I, sample masks in the loader, optimize mae_forward_loss. Fully
// deterministic in (corpus, seeds). Throws on an empty corpus; aborts with a
// NumericError naming the step and lr if the loss goes non-finite.
PretrainResult pretrain(const std::vector<Image>& corpus, const ImageSpec& spec,
                        const MaskPlan& plan, const ViTMAEConfig& cfg, const TrainConfig& tcfg,
                        const ParamStore* resume_params = nullptr,
                        const AdamState* resume_state = nullptr);

// Optimizer moments stored under "opt/m/" and "opt/v/" plus the step count
// from metadata; empty state when the checkpoint carries none.
AdamState opt_state_from_checkpoint(const Checkpoint& ckpt);

}  // namespace lsmae
