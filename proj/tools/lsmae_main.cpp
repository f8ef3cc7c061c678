// SPDX-License-Identifier: Apache-2.0
//
// lsmae: long-sequence masked-autoencoder toolkit.
//
// Subcommands:
//   spec          input-specification tables (fix one, vary two)
//   presets       model presets with parameter counts
//   mask-preview  render a sampled mask over an image
//   pretrain      desk-scale pre-training on PPM corpora or synthetic data
//   reconstruct   original | masked | reconstruction triptych
//   resample-ckpt geometry transfer of a checkpoint across (I, p)
//   ingest        batch long-side resize of a PPM directory
//
// Exit codes: 0 success, 1 runtime failure, 2 invalid usage.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "lsmae/checkpoint.hpp"
#include "lsmae/errors.hpp"
#include "lsmae/imaging.hpp"
#include "lsmae/masking.hpp"
#include "lsmae/model.hpp"
#include "lsmae/specs.hpp"
#include "lsmae/training.hpp"
#include "lsmae/transfer.hpp"

namespace fs = std::filesystem;
using namespace lsmae;

namespace {

struct SpecArgs {
  int image_size = 0;
  int patch_size = 0;
  int mask_size = 1;
  float mask_ratio = 0.75f;
  bool decoder_downsample = false;
  std::string fix;
  int fix_value = 0;
  std::vector<int> candidates;
  std::string preset = "vit-b";
};

struct TrainArgs {
  std::string data_dir;
  std::string synthetic;  // kind,count[,side]
  std::string preset = "tiny";
  int image_size = 32;
  int patch_size = 4;
  int mask_size = 2;
  float mask_ratio = 0.75f;
  bool decoder_downsample = false;
  int epochs = 0;
  int steps = 0;
  int batch_size = 16;
  float base_lr = 1.5e-4f;
  float warmup_epochs = -1.0f;
  float weight_decay = 0.05f;
  std::uint64_t seed = 42;
  std::string crop = "rrc";
  int log_every = 1;
  bool timing = false;
  std::string out_path = "model.ckpt";
  std::string log_path;
  std::string resume;
};

std::vector<fs::path> list_ppm(const std::string& dir) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".ppm") {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  return files;
}

std::vector<Image> load_corpus(const TrainArgs& args) {
  if (!args.synthetic.empty()) {
    std::string kind = args.synthetic;
    int count = 64;
    int side = args.image_size;
    const auto comma = kind.find(',');
    if (comma != std::string::npos) {
      std::string rest = kind.substr(comma + 1);
      kind = kind.substr(0, comma);
      const auto comma2 = rest.find(',');
      if (comma2 != std::string::npos) {
        side = std::stoi(rest.substr(comma2 + 1));
        rest = rest.substr(0, comma2);
      }
      count = std::stoi(rest);
    }
    return make_synthetic_corpus(synthetic_kind_from_name(kind), count, side, args.seed);
  }
  if (args.data_dir.empty()) {
    throw ConfigError("either --data or --synthetic is required");
  }
  std::vector<Image> corpus;
  for (const auto& path : list_ppm(args.data_dir)) {
    corpus.push_back(read_ppm(path.string()));
  }
  if (corpus.empty()) throw ConfigError("no .ppm files found under " + args.data_dir);
  return corpus;
}

void print_spec_table(const std::vector<ImageSpec>& specs, const SpecArgs& args) {
  const ViTMAEConfig base =
      make_preset(args.preset, specs.front().image_size, specs.front().patch_size);
  std::printf("%7s %5s %6s %6s %6s %6s %14s\n", "I", "p", "L", "U", "L_e", "L_d", "est_GFLOPs");
  for (const ImageSpec& spec : specs) {
    ViTMAEConfig cfg = base;
    cfg.image_size = spec.image_size;
    cfg.patch_size = spec.patch_size;
    cfg.decoder_downsample = args.decoder_downsample;
    const MaskPlan plan =
        derive_mask_plan(spec, args.mask_size, args.mask_ratio, args.decoder_downsample);
    const CostEstimate est = estimate_flops(cfg, plan);
    std::printf("%7d %5d %6d %6d %6d %6d %14.3f\n", spec.image_size, spec.patch_size,
                spec.seq_len, plan.total_units, plan.encoder_len, plan.decoder_len,
                est.total_flops / 1e9);
  }
}

int cmd_spec(const SpecArgs& args) {
  if (!args.fix.empty()) {
    FixedDim dim;
    if (args.fix == "I") {
      dim = FixedDim::ImageSize;
    } else if (args.fix == "p") {
      dim = FixedDim::PatchSize;
    } else if (args.fix == "L") {
      dim = FixedDim::SeqLen;
    } else {
      throw ConfigError("--fix expects I, p or L");
    }
    const SpecEnumeration en = enumerate_fix_one_vary_two(dim, args.fix_value, args.candidates);
    for (const auto& reason : en.rejected) {
      std::fprintf(stderr, "excluded: %s\n", reason.c_str());
    }
    if (en.specs.empty()) throw ConfigError("no valid specs for the given candidates");
    print_spec_table(en.specs, args);
    return 0;
  }
  const ImageSpec spec = derive_input_spec(args.image_size, args.patch_size);
  print_spec_table({spec}, args);
  return 0;
}

int cmd_presets(int image_size, int patch_size) {
  std::printf("%-6s %10s %9s %9s %10s %9s %9s %12s\n", "name", "enc_depth", "enc_width",
              "enc_heads", "dec_depth", "dec_width", "dec_heads", "params");
  for (const char* name : {"tiny", "vit-b", "vit-l"}) {
    const ViTMAEConfig cfg = make_preset(name, image_size, patch_size);
    std::printf("%-6s %10d %9d %9d %10d %9d %9d %12zu\n", name, cfg.enc_depth, cfg.enc_width,
                cfg.enc_heads, cfg.dec_depth, cfg.dec_width, cfg.dec_heads, param_count(cfg));
  }
  std::printf("geometry: image %d, patch %d\n", image_size, patch_size);
  return 0;
}

int cmd_mask_preview(const std::string& in_path, const std::string& out_path, std::uint64_t seed,
                     int image_size, int patch_size, int mask_size, float mask_ratio) {
  const Image img = read_ppm(in_path);
  const int target = image_size > 0 ? image_size : img.height;
  if (img.height != target || img.width != target) {
    throw GeometryError("input is " + std::to_string(img.height) + "x" +
                        std::to_string(img.width) + ", expected square " + std::to_string(target) +
                        "; run `lsmae ingest` or resize first");
  }
  const ImageSpec spec = derive_input_spec(target, patch_size);
  const MaskPlan plan = derive_mask_plan(spec, mask_size, mask_ratio);
  const MaskAssignment assignment = sample_mask(plan, seed, 0);
  write_ppm(mask_to_preview(assignment, img), out_path);
  std::printf("masked=%zu visible=%zu of L=%d\n", assignment.masked_patch_indices.size(),
              assignment.visible_patch_indices.size(), spec.seq_len);
  return 0;
}

int cmd_pretrain(const TrainArgs& args) {
  const ImageSpec spec = derive_input_spec(args.image_size, args.patch_size);
  const MaskPlan plan =
      derive_mask_plan(spec, args.mask_size, args.mask_ratio, args.decoder_downsample);
  ViTMAEConfig cfg = make_preset(args.preset, args.image_size, args.patch_size);
  cfg.decoder_downsample = args.decoder_downsample;
  validate_config(cfg);

  const std::vector<Image> corpus = load_corpus(args);

  TrainConfig tc;
  tc.batch_size = args.batch_size;
  tc.base_lr = args.base_lr;
  tc.warmup_epochs = args.warmup_epochs;
  tc.weight_decay = args.weight_decay;
  tc.seed = args.seed;
  tc.log_every = args.log_every;
  tc.record_timing = args.timing;
  if (args.crop == "none") {
    tc.crop = TrainConfig::Crop::None;
  } else if (args.crop == "rrc") {
    tc.crop = TrainConfig::Crop::RandomResizedCrop;
  } else {
    throw ConfigError("--crop expects none or rrc");
  }
  const std::size_t steps_per_epoch = corpus.size() / static_cast<std::size_t>(tc.batch_size);
  if (steps_per_epoch == 0) throw ConfigError("corpus smaller than one batch");
  if (args.steps > 0) {
    tc.max_steps = args.steps;
    tc.epochs = args.epochs > 0
                    ? args.epochs
                    : static_cast<int>((args.steps + steps_per_epoch - 1) / steps_per_epoch);
  } else {
    tc.epochs = args.epochs > 0 ? args.epochs : 1;
  }

  ParamStore resume_params;
  AdamState resume_state;
  const ParamStore* resume_ptr = nullptr;
  const AdamState* state_ptr = nullptr;
  if (!args.resume.empty()) {
    const Checkpoint prev = load_checkpoint(args.resume);
    resume_params = checkpoint_to_params(prev, cfg);
    resume_state = opt_state_from_checkpoint(prev);
    resume_ptr = &resume_params;
    if (resume_state.t > 0) state_ptr = &resume_state;
    std::printf("resumed %zu tensors from %s\n", resume_params.names().size(),
                args.resume.c_str());
  }

  const PretrainResult result = pretrain(corpus, spec, plan, cfg, tc, resume_ptr, state_ptr);
  save_checkpoint(result.checkpoint, args.out_path);
  if (!args.log_path.empty()) {
    std::ofstream log(args.log_path, std::ios::binary | std::ios::trunc);
    if (!log) throw IoError("cannot open " + args.log_path + " for writing");
    log << result.log.to_text();
  }
  std::printf("trained %llu steps on %zu images (L=%d, L_e=%d); checkpoint: %s\n",
              result.log.records.empty()
                  ? 0ULL
                  : static_cast<unsigned long long>(result.log.records.back().step),
              corpus.size(), spec.seq_len, plan.encoder_len, args.out_path.c_str());
  return 0;
}

// Prediction tokens are in normalized space; rebuild pixels using the ground
// truth patch statistics, keep visible patches from the original.
Image render_reconstruction(const Image& img, const MaskAssignment& assignment,
                            const Tensor& pred, const ViTMAEConfig& cfg) {
  const int p_out = cfg.out_patch_size();
  const PatchGrid truth = patchify(img, p_out);
  const std::size_t P = static_cast<std::size_t>(cfg.out_patch_dim());
  const std::vector<bool> masked = masked_target_tokens(assignment, cfg.decoder_downsample);
  std::vector<float> patches(truth.patches.value());
  for (std::size_t t = 0; t < masked.size(); ++t) {
    if (!masked[t]) continue;  // visible tokens come from the original
    double mean = 0.0, var = 0.0;
    for (std::size_t j = 0; j < P; ++j) mean += patches[t * P + j];
    mean /= static_cast<double>(P);
    for (std::size_t j = 0; j < P; ++j) {
      const double d = patches[t * P + j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(P);
    const double sd = std::sqrt(var + 1e-6);
    for (std::size_t j = 0; j < P; ++j) {
      const double v = mean + sd * pred.value()[t * P + j];
      patches[t * P + j] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  return unpatchify(PatchGrid{derive_input_spec(img.height, p_out),
                              Tensor({masked.size(), P}, std::move(patches))});
}

Image triptych(const Image& a, const Image& b, const Image& c) {
  const int sep = 2;
  Image out = Image::filled(a.height, a.width * 3 + sep * 2, 1.0f);
  auto blit = [&](const Image& src, int x0) {
    for (int y = 0; y < src.height; ++y) {
      for (int x = 0; x < src.width; ++x) {
        for (int ch = 0; ch < 3; ++ch) out.at(y, x0 + x, ch) = src.at(y, x, ch);
      }
    }
  };
  blit(a, 0);
  blit(b, a.width + sep);
  blit(c, 2 * (a.width + sep));
  return out;
}

int cmd_reconstruct(const std::string& ckpt_path, const std::string& in_path,
                    const std::string& out_path, std::uint64_t seed) {
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const auto meta = ckpt.metadata_map();
  const ViTMAEConfig cfg = config_from_metadata(meta);
  const MaskPlan plan = plan_from_metadata(meta);
  const Image img = read_ppm(in_path);
  if (img.height != cfg.image_size || img.width != cfg.image_size) {
    throw GeometryError("image is " + std::to_string(img.height) + "x" +
                        std::to_string(img.width) + " but the checkpoint was trained at " +
                        std::to_string(cfg.image_size) +
                        "; run `lsmae resample-ckpt` to transfer the geometry first");
  }
  const ParamStore params = checkpoint_to_params(ckpt, cfg);
  const MaskAssignment assignment = sample_mask(plan, seed, 0);
  const MaeForward fwd = mae_forward_loss({img}, {assignment}, params, cfg);
  const Image masked_img = mask_to_preview(assignment, img);
  const Image recon = render_reconstruction(img, assignment, fwd.predictions[0], cfg);
  write_ppm(triptych(img, masked_img, recon), out_path);

  // masked-region pixel MSE between the reconstruction and the original
  double mse = 0.0;
  std::size_t n = 0;
  const int p = cfg.patch_size;
  const int g = cfg.grid_side();
  for (std::size_t patch : assignment.masked_patch_indices) {
    const int gr = static_cast<int>(patch) / g, gc = static_cast<int>(patch) % g;
    for (int y = 0; y < p; ++y) {
      for (int x = 0; x < p; ++x) {
        for (int c = 0; c < 3; ++c) {
          const double d = recon.at(gr * p + y, gc * p + x, c) - img.at(gr * p + y, gc * p + x, c);
          mse += d * d;
          ++n;
        }
      }
    }
  }
  std::printf("loss=%g masked_pixel_mse=%g out=%s\n", fwd.loss.item(), mse / n, out_path.c_str());
  return 0;
}

std::pair<int, int> parse_spec_pair(const std::string& text) {
  const auto comma = text.find(',');
  if (comma == std::string::npos) {
    throw ConfigError("spec must be given as I,p (e.g. 448,16), got '" + text + "'");
  }
  return {std::stoi(text.substr(0, comma)), std::stoi(text.substr(comma + 1))};
}

int cmd_resample_ckpt(const std::string& in_path, const std::string& out_path,
                      const std::string& from_text, const std::string& to_text) {
  const Checkpoint ckpt = load_checkpoint(in_path);
  ImageSpec from_spec;
  if (from_text.empty()) {
    const ViTMAEConfig cfg = config_from_metadata(ckpt.metadata_map());
    from_spec = derive_input_spec(cfg.image_size, cfg.patch_size);
  } else {
    const auto [i, p] = parse_spec_pair(from_text);
    from_spec = derive_input_spec(i, p);
  }
  const auto [ti, tp] = parse_spec_pair(to_text);
  const ImageSpec to_spec = derive_input_spec(ti, tp);
  const Checkpoint out = resample_checkpoint(ckpt, from_spec, to_spec);
  save_checkpoint(out, out_path);
  std::printf("resampled (I=%d,p=%d,L=%d) -> (I=%d,p=%d,L=%d): %s\n", from_spec.image_size,
              from_spec.patch_size, from_spec.seq_len, to_spec.image_size, to_spec.patch_size,
              to_spec.seq_len, out_path.c_str());
  return 0;
}

int cmd_ingest(const std::string& data_dir, const std::string& out_dir, int long_side) {
  fs::create_directories(out_dir);
  const auto files = list_ppm(data_dir);
  if (files.empty()) throw ConfigError("no .ppm files found under " + data_dir);
  for (const auto& path : files) {
    const Image img = read_ppm(path.string());
    const Image resized = resize_long_side(img, long_side);
    const fs::path out_path = fs::path(out_dir) / path.filename();
    write_ppm(resized, out_path.string());
    std::printf("%s: %dx%d -> %dx%d\n", path.filename().string().c_str(), img.width, img.height,
                resized.width, resized.height);
  }
  return 0;
}

// Expands `--config file` into --key value pairs inserted after the
// subcommand. Keys already given on the command line keep precedence; the
// file uses one key=value per line, '#' comments allowed.
std::vector<std::string> expand_config_args(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  std::string config_path;
  std::size_t config_at = 0;
  for (std::size_t i = 0; i + 1 < args.size(); ++i) {
    if (args[i] == "--config") {
      config_path = args[i + 1];
      config_at = i;
      break;
    }
  }
  if (config_path.empty()) return args;

  std::ifstream in(config_path);
  if (!in) throw IoError("cannot open config file " + config_path);
  args.erase(args.begin() + config_at, args.begin() + config_at + 2);

  std::vector<std::string> given(args);
  std::vector<std::string> injected;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ConfigError("config file line is not key=value: '" + line + "'");
    }
    const std::string flag = "--" + line.substr(0, eq);
    if (std::find(given.begin(), given.end(), flag) != given.end()) continue;
    std::string value = line.substr(eq + 1);
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') {
      value = value.substr(1, value.size() - 2);
    }
    injected.push_back(flag);
    if (value == "true") continue;  // bare flags
    injected.push_back(value);
  }
  // insert right after the subcommand name so explicit flags stay last
  args.insert(args.begin() + 1, injected.begin(), injected.end());
  return args;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"long-sequence masked-autoencoder toolkit"};
  app.require_subcommand(1);

  // spec
  SpecArgs spec_args;
  auto* spec_cmd = app.add_subcommand("spec", "input-specification tables");
  spec_cmd->add_option("--image-size", spec_args.image_size, "image side I in pixels");
  spec_cmd->add_option("--patch-size", spec_args.patch_size, "patch side p in pixels");
  spec_cmd->add_option("--mask-size", spec_args.mask_size, "mask unit side m in patches");
  spec_cmd->add_option("--mask-ratio", spec_args.mask_ratio, "mask ratio gamma");
  spec_cmd->add_flag("--decoder-downsample", spec_args.decoder_downsample,
                     "decoder runs at L/4 via a learned 2x2 convolution");
  spec_cmd->add_option("--fix", spec_args.fix, "hold one dimension: I, p or L");
  spec_cmd->add_option("--value", spec_args.fix_value, "value of the fixed dimension");
  spec_cmd->add_option("--candidates", spec_args.candidates, "candidate values")->delimiter(',');
  spec_cmd->add_option("--preset", spec_args.preset, "model preset for the FLOP estimate");

  // presets
  int presets_image = 224, presets_patch = 16;
  auto* presets_cmd = app.add_subcommand("presets", "model presets and parameter counts");
  presets_cmd->add_option("--image-size", presets_image, "image side for the table");
  presets_cmd->add_option("--patch-size", presets_patch, "patch side for the table");

  // mask-preview
  std::string mp_in, mp_out;
  std::uint64_t mp_seed = 0;
  int mp_image = 0, mp_patch = 16, mp_mask = 2;
  float mp_ratio = 0.75f;
  auto* mp_cmd = app.add_subcommand("mask-preview", "render a sampled mask over an image");
  mp_cmd->add_option("--in", mp_in, "input PPM")->required();
  mp_cmd->add_option("--out", mp_out, "output PPM")->required();
  mp_cmd->add_option("--seed", mp_seed, "mask sampling seed");
  mp_cmd->add_option("--image-size", mp_image, "expected image side (defaults to the input's)");
  mp_cmd->add_option("--patch-size", mp_patch, "patch side p");
  mp_cmd->add_option("--mask-size", mp_mask, "mask unit side m");
  mp_cmd->add_option("--mask-ratio", mp_ratio, "mask ratio gamma");

  // pretrain
  TrainArgs train_args;
  std::string config_placeholder;
  auto* pt_cmd = app.add_subcommand("pretrain", "desk-scale masked-autoencoder pre-training");
  pt_cmd->add_option("--config", config_placeholder,
                     "key=value config file; explicit flags take precedence");
  pt_cmd->add_option("--data", train_args.data_dir, "directory of .ppm training images");
  pt_cmd->add_option("--synthetic", train_args.synthetic,
                     "synthetic corpus kind,count[,side] (gradients|checkers|gaussian-blobs)");
  pt_cmd->add_option("--preset", train_args.preset, "model preset: tiny, vit-b, vit-l");
  pt_cmd->add_option("--image-size", train_args.image_size, "image side I");
  pt_cmd->add_option("--patch-size", train_args.patch_size, "patch side p");
  pt_cmd->add_option("--mask-size", train_args.mask_size, "mask unit side m");
  pt_cmd->add_option("--mask-ratio", train_args.mask_ratio, "mask ratio gamma");
  pt_cmd->add_flag("--decoder-downsample", train_args.decoder_downsample,
                   "decoder at L/4 with 2p-pixel targets");
  pt_cmd->add_option("--epochs", train_args.epochs, "training epochs");
  pt_cmd->add_option("--steps", train_args.steps, "stop after this many optimizer steps");
  pt_cmd->add_option("--batch-size", train_args.batch_size, "images per optimizer step");
  pt_cmd->add_option("--base-lr", train_args.base_lr, "base learning rate (per-256 convention)");
  pt_cmd->add_option("--warmup-epochs", train_args.warmup_epochs,
                     "linear warmup epochs (default: 5% of epochs)");
  pt_cmd->add_option("--weight-decay", train_args.weight_decay, "decoupled weight decay");
  pt_cmd->add_option("--seed", train_args.seed, "seed for init, shuffling, crops and masks");
  pt_cmd->add_option("--crop", train_args.crop, "augmentation: rrc or none");
  pt_cmd->add_option("--log-every", train_args.log_every, "metrics record interval in steps");
  pt_cmd->add_flag("--timing", train_args.timing,
                   "record wall_ms per step (off keeps logs reproducible)");
  pt_cmd->add_option("--out", train_args.out_path, "checkpoint output path");
  pt_cmd->add_option("--log", train_args.log_path, "metrics log output path");
  pt_cmd->add_option("--resume", train_args.resume, "checkpoint to initialize from");

  // reconstruct
  std::string rc_ckpt, rc_in, rc_out = "triptych.ppm";
  std::uint64_t rc_seed = 0;
  auto* rc_cmd = app.add_subcommand("reconstruct", "original | masked | reconstruction triptych");
  rc_cmd->add_option("--ckpt", rc_ckpt, "checkpoint path")->required();
  rc_cmd->add_option("--in", rc_in, "input PPM")->required();
  rc_cmd->add_option("--out", rc_out, "output triptych PPM");
  rc_cmd->add_option("--seed", rc_seed, "mask sampling seed");

  // resample-ckpt
  std::string rs_from, rs_to, rs_in, rs_out;
  auto* rs_cmd = app.add_subcommand("resample-ckpt", "geometry transfer across (I, p)");
  rs_cmd->add_option("--from-spec", rs_from, "source I,p (defaults to checkpoint metadata)");
  rs_cmd->add_option("--to-spec", rs_to, "target I,p")->required();
  rs_cmd->add_option("input", rs_in, "input checkpoint")->required();
  rs_cmd->add_option("output", rs_out, "output checkpoint")->required();

  // ingest
  std::string ig_data, ig_out;
  int ig_long = 640;
  auto* ig_cmd = app.add_subcommand("ingest", "batch long-side resize of PPM images");
  ig_cmd->add_option("--data", ig_data, "input directory")->required();
  ig_cmd->add_option("--out", ig_out, "output directory")->required();
  ig_cmd->add_option("--long-side", ig_long, "target long side in pixels");

  try {
    std::vector<std::string> args = expand_config_args(argc, argv);
    std::reverse(args.begin(), args.end());  // CLI11 consumes back-to-front
    app.parse(std::move(args));
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);  // 0
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help() << std::flush;
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  }

  try {
    if (*spec_cmd) return cmd_spec(spec_args);
    if (*presets_cmd) return cmd_presets(presets_image, presets_patch);
    if (*mp_cmd) {
      return cmd_mask_preview(mp_in, mp_out, mp_seed, mp_image, mp_patch, mp_mask, mp_ratio);
    }
    if (*pt_cmd) return cmd_pretrain(train_args);
    if (*rc_cmd) return cmd_reconstruct(rc_ckpt, rc_in, rc_out, rc_seed);
    if (*rs_cmd) return cmd_resample_ckpt(rs_in, rs_out, rs_from, rs_to);
    if (*ig_cmd) return cmd_ingest(ig_data, ig_out, ig_long);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  }
  return 0;
}
