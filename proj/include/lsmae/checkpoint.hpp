// SPDX-License-Identifier: Apache-2.0
//
// Bit-exact named-tensor container. Layout (all integers little-endian):
//
//   magic   8 bytes  "LSMAE1\0\0"
//   count   u32      number of tensor entries
//   meta    u32 length + canonical key=value text (spec, mask plan, config,
//           seed, step)
//   entry*  u16 name length, name bytes (ASCII), u8 dtype tag (0 = f32),
//           u8 rank, rank x u32 dims, payload f32 row-major
//
// load(save(x)) is bitwise identical; malformed input yields ParseError with
// a byte offset, never a crash.

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "lsmae/model.hpp"
#include "lsmae/tensor.hpp"

namespace lsmae {

constexpr char kCheckpointMagic[8] = {'L', 'S', 'M', 'A', 'E', '1', '\0', '\0'};

struct CheckpointEntry {
  std::string name;
  Shape dims;
  std::vector<float> data;
};

struct Checkpoint {
  std::string metadata;                  // canonical key=value text, kept verbatim
  std::vector<CheckpointEntry> entries;  // file order

  const CheckpointEntry* find(const std::string& name) const;
  std::map<std::string, std::string> metadata_map() const;
};

// Canonical metadata text: sorted keys, one "key=value\n" line each.
std::string canonical_metadata(const std::map<std::string, std::string>& kv);

// Atomic write (temp file + rename). Returns bytes written.
std::size_t save_checkpoint(const Checkpoint& ckpt, const std::string& path);

Checkpoint load_checkpoint(const std::string& path);
Checkpoint parse_checkpoint(const std::vector<unsigned char>& bytes);
std::vector<unsigned char> serialize_checkpoint(const Checkpoint& ckpt);

// Parameter tensors in store order, then any extra entries (e.g. optimizer
// moments under "opt/") in the given order.
Checkpoint params_to_checkpoint(const ParamStore& params,
                                const std::map<std::string, std::string>& meta);

// Rebuilds a ParamStore for `cfg` from checkpoint entries; throws ConfigError
// when a schema tensor is missing or has the wrong shape.
ParamStore checkpoint_to_params(const Checkpoint& ckpt, const ViTMAEConfig& cfg);

// Metadata for a training artifact.
std::map<std::string, std::string> describe_run(const ImageSpec& spec, const MaskPlan& plan,
                                                const ViTMAEConfig& cfg, std::uint64_t seed,
                                                std::uint64_t step);

// Reads the config/spec/plan back out of checkpoint metadata.
ViTMAEConfig config_from_metadata(const std::map<std::string, std::string>& meta);
MaskPlan plan_from_metadata(const std::map<std::string, std::string>& meta);

}  // namespace lsmae
