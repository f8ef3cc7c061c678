// SPDX-License-Identifier: Apache-2.0
//
// End-to-end CLI tests: exit-code contract, file determinism, and the
// paired-model reconstruction oracle, all through the real binary.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "lsmae/imaging.hpp"
#include "lsmae/training.hpp"

namespace fs = std::filesystem;
using namespace lsmae;

namespace {

struct RunResult {
  int exit_code = -1;
  std::string output;  // stdout + stderr
};

fs::path work_dir() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() /
                 ("lsmae_cli_" + std::to_string(::getpid()));
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

RunResult run_cli(const std::string& args) {
  const fs::path out_file = work_dir() / "cmd_output.txt";
  const std::string cmd =
      std::string(LSMAE_CLI_BIN) + " " + args + " > " + out_file.string() + " 2>&1";
  const int raw = std::system(cmd.c_str());
  RunResult res;
  res.exit_code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  std::ifstream in(out_file);
  std::stringstream ss;
  ss << in.rdbuf();
  res.output = ss.str();
  return res;
}

std::vector<unsigned char> slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::vector<unsigned char>((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
}

// "key=value" scraping from command output.
double scrape(const std::string& text, const std::string& key) {
  const auto at = text.find(key + "=");
  REQUIRE(at != std::string::npos);
  return std::stod(text.substr(at + key.size() + 1));
}

void write_checkers_corpus(const fs::path& dir, int n, int side, std::uint64_t seed) {
  fs::create_directories(dir);
  const auto corpus = make_synthetic_corpus(SyntheticKind::Checkers, n, side, seed);
  for (int i = 0; i < n; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "img%03d.ppm", i);
    write_ppm(corpus[i], (dir / name).string());
  }
}

}  // namespace

TEST_CASE("help exits zero everywhere, bad flags exit two") {
  CHECK(run_cli("--help").exit_code == 0);
  for (const char* sub :
       {"spec", "presets", "mask-preview", "pretrain", "reconstruct", "resample-ckpt", "ingest"}) {
    CHECK(run_cli(std::string(sub) + " --help").exit_code == 0);
  }
  const RunResult bad = run_cli("spec --no-such-flag");
  CHECK(bad.exit_code == 2);
  CHECK(bad.output.find("Usage") != std::string::npos);
  CHECK(run_cli("frobnicate").exit_code == 2);
  CHECK(run_cli("").exit_code == 2);  // a subcommand is required
}

TEST_CASE("spec table reproduces the default row and rejects bad geometry") {
  const RunResult res = run_cli("spec --image-size 448 --patch-size 16 --mask-size 2 --mask-ratio 0.75");
  CHECK(res.exit_code == 0);
  CHECK(res.output.find("784") != std::string::npos);
  CHECK(res.output.find("196") != std::string::npos);

  const RunResult fixed = run_cli("spec --fix L --value 784 --candidates 224,448,672");
  CHECK(fixed.exit_code == 0);
  // three rows with patch sizes 8, 16, 24
  CHECK(fixed.output.find("    224     8") != std::string::npos);
  CHECK(fixed.output.find("    448    16") != std::string::npos);
  CHECK(fixed.output.find("    672    24") != std::string::npos);

  CHECK(run_cli("spec --image-size 225 --patch-size 16").exit_code == 1);
}

TEST_CASE("presets table carries the hand-verified tiny parameter count") {
  const RunResult res = run_cli("presets --image-size 32 --patch-size 4");
  CHECK(res.exit_code == 0);
  CHECK(res.output.find("31744") != std::string::npos);
  CHECK(res.output.find("vit-b") != std::string::npos);
}

TEST_CASE("mask-preview: exact gray fraction, deterministic bytes, joint blocks") {
  const fs::path dir = work_dir();
  // input free of mid-gray bytes so the fill is countable
  Image img = Image::filled(32, 32, 0.0f);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = (i % 5) * 0.05f;
  const fs::path in = dir / "plain.ppm";
  write_ppm(img, in.string());

  const fs::path out1 = dir / "prev1.ppm";
  const fs::path out2 = dir / "prev2.ppm";
  const std::string flags = " --patch-size 4 --mask-size 2 --mask-ratio 0.75 --seed 9";
  const RunResult r1 = run_cli("mask-preview --in " + in.string() + " --out " + out1.string() + flags);
  CHECK(r1.exit_code == 0);
  CHECK(r1.output.find("masked=48 visible=16 of L=64") != std::string::npos);

  // gray fraction: exactly 48/64 of pixels are the 0.5 fill (byte 128)
  const Image prev = read_ppm(out1.string());
  std::size_t gray = 0;
  for (float v : prev.pixels) gray += std::lround(v * 255.0f) == 128;
  CHECK(gray == prev.pixels.size() * 48 / 64);

  // same seed, same bytes; different seed differs
  run_cli("mask-preview --in " + in.string() + " --out " + out2.string() + flags);
  CHECK(slurp(out1) == slurp(out2));
  run_cli("mask-preview --in " + in.string() + " --out " + out2.string() +
          " --patch-size 4 --mask-size 2 --mask-ratio 0.75 --seed 10");
  CHECK(slurp(out1) != slurp(out2));

  // joint property: no isolated 4x4 gray patch; gray regions tile as 8x8
  for (int gr = 0; gr < 8; gr += 2) {
    for (int gc = 0; gc < 8; gc += 2) {
      const bool unit_gray = std::lround(prev.at(gr * 4, gc * 4, 0) * 255.0f) == 128;
      for (int dy = 0; dy < 2; ++dy) {
        for (int dx = 0; dx < 2; ++dx) {
          CHECK((std::lround(prev.at((gr + dy) * 4, (gc + dx) * 4, 0) * 255.0f) == 128) ==
                unit_gray);
        }
      }
    }
  }

  // non-square input is a geometry error
  write_ppm(Image::filled(16, 32, 0.1f), (dir / "rect.ppm").string());
  const RunResult bad = run_cli("mask-preview --in " + (dir / "rect.ppm").string() + " --out " +
                                (dir / "x.ppm").string() + flags);
  CHECK(bad.exit_code == 1);
}

TEST_CASE("pretrain is reproducible byte-for-byte and echoes the plan") {
  const fs::path dir = work_dir();
  const std::string base = "pretrain --synthetic checkers,16 --preset tiny --image-size 32"
                           " --patch-size 4 --mask-size 2 --mask-ratio 0.75 --batch-size 8"
                           " --steps 4 --seed 11 --crop none";
  const fs::path ck1 = dir / "a.ckpt", lg1 = dir / "a.log";
  const fs::path ck2 = dir / "b.ckpt", lg2 = dir / "b.log";
  const RunResult r1 =
      run_cli(base + " --out " + ck1.string() + " --log " + lg1.string());
  CHECK(r1.exit_code == 0);
  CHECK(r1.output.find("L=64, L_e=16") != std::string::npos);
  const RunResult r2 =
      run_cli(base + " --out " + ck2.string() + " --log " + lg2.string());
  CHECK(r2.exit_code == 0);
  CHECK(slurp(ck1) == slurp(ck2));
  CHECK(slurp(lg1) == slurp(lg2));

  // the log is step-per-line with the documented fields
  std::ifstream log(lg1);
  std::string line;
  int lines = 0;
  while (std::getline(log, line)) {
    ++lines;
    CHECK(line.find("step=") == 0);
    CHECK(line.find(" lr=") != std::string::npos);
    CHECK(line.find(" loss=") != std::string::npos);
    CHECK(line.find(" wall_ms=0") != std::string::npos);
  }
  CHECK(lines == 4);

  // checkpoint metadata echoes the geometry
  const Checkpoint ck = load_checkpoint(ck1.string());
  const auto meta = ck.metadata_map();
  CHECK(meta.at("seq_len") == "64");
  CHECK(meta.at("encoder_len") == "16");
  CHECK(meta.at("mask_size") == "2");

  // empty data directory is a runtime failure
  fs::create_directories(dir / "empty");
  CHECK(run_cli("pretrain --data " + (dir / "empty").string() + " --out " +
                (dir / "x.ckpt").string())
            .exit_code == 1);
}

TEST_CASE("reconstruct triptych and the paired-model oracle") {
  const fs::path dir = work_dir();
  const fs::path corpus_dir = dir / "corpus8";
  write_checkers_corpus(corpus_dir, 8, 32, 7);

  const std::string geometry = " --preset tiny --image-size 32 --patch-size 4 --mask-size 2"
                               " --mask-ratio 0.75 --batch-size 8 --crop none --seed 42";
  // untrained reference: a single zero-lr step leaves the init weights
  const fs::path ck_init = dir / "init.ckpt";
  CHECK(run_cli("pretrain --data " + corpus_dir.string() + geometry +
                " --steps 1 --base-lr 0 --out " + ck_init.string())
            .exit_code == 0);
  // overfit one batch
  const fs::path ck_fit = dir / "fit.ckpt";
  CHECK(run_cli("pretrain --data " + corpus_dir.string() + geometry +
                " --steps 300 --base-lr 0.128 --out " + ck_fit.string())
            .exit_code == 0);

  const std::string img0 = (corpus_dir / "img000.ppm").string();
  const fs::path tri_init = dir / "tri_init.ppm";
  const fs::path tri_fit = dir / "tri_fit.ppm";
  const RunResult r_init = run_cli("reconstruct --ckpt " + ck_init.string() + " --in " + img0 +
                                   " --seed 3 --out " + tri_init.string());
  CHECK(r_init.exit_code == 0);
  const RunResult r_fit = run_cli("reconstruct --ckpt " + ck_fit.string() + " --in " + img0 +
                                  " --seed 3 --out " + tri_fit.string());
  CHECK(r_fit.exit_code == 0);

  // layout contract: 3 panels plus two 2px separators
  const Image tri = read_ppm(tri_init.string());
  CHECK(tri.width == 3 * 32 + 2 * 2);
  CHECK(tri.height == 32);
  for (float v : tri.pixels) CHECK(std::isfinite(v));

  // the overfit model reconstructs the training image far better
  const double mse_init = scrape(r_init.output, "masked_pixel_mse");
  const double mse_fit = scrape(r_fit.output, "masked_pixel_mse");
  MESSAGE("masked pixel MSE untrained=", mse_init, " overfit=", mse_fit);
  CHECK(mse_fit < 0.5 * mse_init);

  // geometry mismatch instructs to resample
  write_ppm(Image::filled(64, 64, 0.2f), (dir / "big.ppm").string());
  const RunResult mismatch = run_cli("reconstruct --ckpt " + ck_fit.string() + " --in " +
                                     (dir / "big.ppm").string() + " --out " +
                                     (dir / "y.ppm").string());
  CHECK(mismatch.exit_code == 1);
  CHECK(mismatch.output.find("resample-ckpt") != std::string::npos);
}

TEST_CASE("resample-ckpt identity is bitwise; transfers feed pretrain --resume") {
  const fs::path dir = work_dir();
  const fs::path ck = dir / "base.ckpt";
  CHECK(run_cli("pretrain --synthetic checkers,8 --preset tiny --image-size 16 --patch-size 4"
                " --mask-size 2 --mask-ratio 0.75 --batch-size 8 --steps 2 --seed 5 --crop none"
                " --out " + ck.string())
            .exit_code == 0);

  // identity: output file equals input file
  const fs::path same = dir / "same.ckpt";
  CHECK(run_cli("resample-ckpt --to-spec 16,4 " + ck.string() + " " + same.string()).exit_code == 0);
  CHECK(slurp(ck) == slurp(same));

  // grow the grid, then resume training at the new spec
  const fs::path grown = dir / "grown.ckpt";
  const RunResult grow =
      run_cli("resample-ckpt --to-spec 32,4 " + ck.string() + " " + grown.string());
  CHECK(grow.exit_code == 0);
  CHECK(grow.output.find("L=64") != std::string::npos);
  const RunResult resumed =
      run_cli("pretrain --synthetic checkers,8 --preset tiny --image-size 32 --patch-size 4"
              " --mask-size 2 --mask-ratio 0.75 --batch-size 8 --steps 2 --seed 6 --crop none"
              " --resume " + grown.string() + " --out " + (dir / "resumed.ckpt").string());
  CHECK(resumed.exit_code == 0);
  CHECK(resumed.output.find("resumed") != std::string::npos);
}

TEST_CASE("ingest resizes to the long side") {
  const fs::path dir = work_dir();
  const fs::path in_dir = dir / "raw";
  fs::create_directories(in_dir);
  write_ppm(Image::filled(960, 1280, 0.5f), (in_dir / "wide.ppm").string());
  write_ppm(Image::filled(100, 50, 0.25f), (in_dir / "tall.ppm").string());

  const fs::path out_dir = dir / "resized";
  const RunResult res =
      run_cli("ingest --data " + in_dir.string() + " --out " + out_dir.string() + " --long-side 640");
  CHECK(res.exit_code == 0);
  const Image wide = read_ppm((out_dir / "wide.ppm").string());
  CHECK(wide.width == 640);
  CHECK(wide.height == 480);
  const Image tall = read_ppm((out_dir / "tall.ppm").string());
  CHECK(tall.height == 640);
  CHECK(tall.width == 320);
}

TEST_CASE("config file values yield to explicit flags") {
  const fs::path dir = work_dir();
  const fs::path cfg = dir / "train.cfg";
  {
    std::ofstream out(cfg);
    out << "synthetic=checkers,16\nimage-size=32\npatch-size=4\nmask-size=2\n"
        << "batch-size=8\nsteps=2\nseed=77\ncrop=none\n";
  }
  const fs::path ck1 = dir / "cfg1.ckpt";
  const RunResult r1 = run_cli("pretrain --config " + cfg.string() + " --out " + ck1.string());
  CHECK(r1.exit_code == 0);
  CHECK(load_checkpoint(ck1.string()).metadata_map().at("seed") == "77");

  // the flag overrides the file
  const fs::path ck2 = dir / "cfg2.ckpt";
  const RunResult r2 =
      run_cli("pretrain --config " + cfg.string() + " --seed 99 --out " + ck2.string());
  CHECK(r2.exit_code == 0);
  CHECK(load_checkpoint(ck2.string()).metadata_map().at("seed") == "99");
}
