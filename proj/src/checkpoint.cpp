// SPDX-License-Identifier: Apache-2.0

#include "lsmae/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "lsmae/errors.hpp"

namespace lsmae {

namespace {

void put_u16(std::vector<unsigned char>& out, std::uint16_t v) {
  out.push_back(static_cast<unsigned char>(v & 0xff));
  out.push_back(static_cast<unsigned char>(v >> 8));
}

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::vector<unsigned char>& out, float f) {
  const auto bits = std::bit_cast<std::uint32_t>(f);
  put_u32(out, bits);
}

struct Reader {
  const std::vector<unsigned char>& buf;
  std::size_t pos = 0;

  void need(std::size_t n, const char* what) const {
    if (pos + n > buf.size()) {
      throw ParseError(std::string("truncated checkpoint: expected ") + what, pos);
    }
  }

  std::uint16_t u16(const char* what) {
    need(2, what);
    const std::uint16_t v = static_cast<std::uint16_t>(buf[pos]) |
                            static_cast<std::uint16_t>(buf[pos + 1]) << 8;
    pos += 2;
    return v;
  }

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }

  std::uint8_t u8(const char* what) {
    need(1, what);
    return buf[pos++];
  }

  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(buf.data() + pos), n);
    pos += n;
    return s;
  }
};

}  // namespace

const CheckpointEntry* Checkpoint::find(const std::string& name) const {
  for (const auto& e : entries) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

std::map<std::string, std::string> Checkpoint::metadata_map() const {
  std::map<std::string, std::string> kv;
  std::istringstream in(metadata);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos || eq == 0) continue;
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

std::string canonical_metadata(const std::map<std::string, std::string>& kv) {
  std::string out;
  for (const auto& [k, v] : kv) {
    out += k;
    out += '=';
    out += v;
    out += '\n';
  }
  return out;
}

std::vector<unsigned char> serialize_checkpoint(const Checkpoint& ckpt) {
  std::vector<unsigned char> out;
  out.insert(out.end(), kCheckpointMagic, kCheckpointMagic + 8);
  put_u32(out, static_cast<std::uint32_t>(ckpt.entries.size()));
  put_u32(out, static_cast<std::uint32_t>(ckpt.metadata.size()));
  out.insert(out.end(), ckpt.metadata.begin(), ckpt.metadata.end());
  for (const auto& e : ckpt.entries) {
    if (e.name.size() > 0xffff) throw ContractError("checkpoint entry name too long: " + e.name);
    if (shape_numel(e.dims) != e.data.size()) {
      throw ContractError("checkpoint entry '" + e.name + "': dims " + shape_str(e.dims) +
                          " do not match payload length " + std::to_string(e.data.size()));
    }
    put_u16(out, static_cast<std::uint16_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    out.push_back(0);  // dtype tag: f32
    if (e.dims.size() > 0xff) throw ContractError("checkpoint entry rank too large");
    out.push_back(static_cast<unsigned char>(e.dims.size()));
    for (std::size_t d : e.dims) put_u32(out, static_cast<std::uint32_t>(d));
    for (float f : e.data) put_f32(out, f);
  }
  return out;
}

Checkpoint parse_checkpoint(const std::vector<unsigned char>& bytes) {
  Reader r{bytes};
  r.need(8, "magic");
  if (std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) {
    throw ParseError("bad checkpoint magic", 0);
  }
  r.pos = 8;
  const std::uint32_t count = r.u32("entry count");
  const std::uint32_t meta_len = r.u32("metadata length");
  Checkpoint ckpt;
  ckpt.metadata = r.bytes(meta_len, "metadata block");
  ckpt.entries.reserve(std::min<std::uint32_t>(count, 4096));
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    const std::uint16_t name_len = r.u16("entry name length");
    const std::size_t name_at = r.pos;
    e.name = r.bytes(name_len, "entry name");
    for (unsigned char c : e.name) {
      if (c < 0x20 || c > 0x7e) {
        throw ParseError("entry name contains non-ASCII byte", name_at);
      }
    }
    const std::size_t dtype_at = r.pos;
    const std::uint8_t dtype = r.u8("dtype tag");
    if (dtype != 0) {
      throw ParseError("unknown dtype tag " + std::to_string(dtype) + " for entry '" + e.name +
                           "'",
                       dtype_at);
    }
    const std::uint8_t rank = r.u8("rank");
    e.dims.resize(rank);
    std::size_t numel = 1;
    for (std::uint8_t d = 0; d < rank; ++d) {
      const std::size_t dims_at = r.pos;
      e.dims[d] = r.u32("dim");
      if (e.dims[d] == 0) throw ParseError("zero dimension in entry '" + e.name + "'", dims_at);
      if (numel > (std::size_t{1} << 48) / e.dims[d]) {
        throw ParseError("dimension product overflow in entry '" + e.name + "'", dims_at);
      }
      numel *= e.dims[d];
    }
    // Validate payload size before allocating.
    if (r.pos + numel * 4 > bytes.size()) {
      throw ParseError("payload shorter than dims product for entry '" + e.name + "' (needs " +
                           std::to_string(numel * 4) + " bytes)",
                       r.pos);
    }
    e.data.resize(numel);
    for (std::size_t k = 0; k < numel; ++k) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) {
        bits |= static_cast<std::uint32_t>(bytes[r.pos + k * 4 + b]) << (8 * b);
      }
      e.data[k] = std::bit_cast<float>(bits);
    }
    r.pos += numel * 4;
    for (const auto& prev : ckpt.entries) {
      if (prev.name == e.name) {
        throw ParseError("duplicate entry name '" + e.name + "'", name_at);
      }
    }
    ckpt.entries.push_back(std::move(e));
  }
  if (r.pos != bytes.size()) {
    throw ParseError("trailing bytes after last entry", r.pos);
  }
  return ckpt;
}

std::size_t save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  const std::vector<unsigned char> bytes = serialize_checkpoint(ckpt);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw IoError("cannot rename " + tmp + " to " + path);
  }
  return bytes.size();
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  return parse_checkpoint(bytes);
}

Checkpoint params_to_checkpoint(const ParamStore& params,
                                const std::map<std::string, std::string>& meta) {
  Checkpoint ckpt;
  ckpt.metadata = canonical_metadata(meta);
  for (const auto& name : params.names()) {
    const Tensor& t = params.at(name);
    ckpt.entries.push_back(CheckpointEntry{name, t.shape(), t.value()});
  }
  return ckpt;
}

ParamStore checkpoint_to_params(const Checkpoint& ckpt, const ViTMAEConfig& cfg) {
  ParamStore store;
  for (const auto& [name, shape] : param_schema(cfg)) {
    const CheckpointEntry* e = ckpt.find(name);
    if (!e) throw ConfigError("checkpoint is missing parameter '" + name + "'");
    if (e->dims != shape) {
      throw ConfigError("checkpoint parameter '" + name + "' has shape " + shape_str(e->dims) +
                        ", expected " + shape_str(shape));
    }
    store.add(name, Tensor(shape, e->data, /*requires_grad=*/true));
  }
  return store;
}

namespace {

std::string fmt_float(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

int meta_int(const std::map<std::string, std::string>& meta, const std::string& key) {
  auto it = meta.find(key);
  if (it == meta.end()) throw ConfigError("checkpoint metadata is missing key '" + key + "'");
  return std::stoi(it->second);
}

double meta_double(const std::map<std::string, std::string>& meta, const std::string& key) {
  auto it = meta.find(key);
  if (it == meta.end()) throw ConfigError("checkpoint metadata is missing key '" + key + "'");
  return std::stod(it->second);
}

}  // namespace

std::map<std::string, std::string> describe_run(const ImageSpec& spec, const MaskPlan& plan,
                                                const ViTMAEConfig& cfg, std::uint64_t seed,
                                                std::uint64_t step) {
  std::map<std::string, std::string> meta;
  meta["image_size"] = std::to_string(spec.image_size);
  meta["patch_size"] = std::to_string(spec.patch_size);
  meta["seq_len"] = std::to_string(spec.seq_len);
  meta["mask_size"] = std::to_string(plan.mask_size);
  meta["mask_ratio"] = fmt_float(plan.mask_ratio);
  meta["encoder_len"] = std::to_string(plan.encoder_len);
  meta["decoder_len"] = std::to_string(plan.decoder_len);
  meta["enc_depth"] = std::to_string(cfg.enc_depth);
  meta["enc_width"] = std::to_string(cfg.enc_width);
  meta["enc_heads"] = std::to_string(cfg.enc_heads);
  meta["dec_depth"] = std::to_string(cfg.dec_depth);
  meta["dec_width"] = std::to_string(cfg.dec_width);
  meta["dec_heads"] = std::to_string(cfg.dec_heads);
  meta["mlp_ratio"] = std::to_string(cfg.mlp_ratio);
  meta["decoder_downsample"] = cfg.decoder_downsample ? "1" : "0";
  meta["seed"] = std::to_string(seed);
  meta["step"] = std::to_string(step);
  return meta;
}

ViTMAEConfig config_from_metadata(const std::map<std::string, std::string>& meta) {
  ViTMAEConfig cfg;
  cfg.image_size = meta_int(meta, "image_size");
  cfg.patch_size = meta_int(meta, "patch_size");
  cfg.enc_depth = meta_int(meta, "enc_depth");
  cfg.enc_width = meta_int(meta, "enc_width");
  cfg.enc_heads = meta_int(meta, "enc_heads");
  cfg.dec_depth = meta_int(meta, "dec_depth");
  cfg.dec_width = meta_int(meta, "dec_width");
  cfg.dec_heads = meta_int(meta, "dec_heads");
  cfg.mlp_ratio = meta_int(meta, "mlp_ratio");
  cfg.decoder_downsample = meta_int(meta, "decoder_downsample") != 0;
  validate_config(cfg);
  return cfg;
}

MaskPlan plan_from_metadata(const std::map<std::string, std::string>& meta) {
  const ImageSpec spec = derive_input_spec(meta_int(meta, "image_size"), meta_int(meta, "patch_size"));
  const bool downsample = meta_int(meta, "decoder_downsample") != 0;
  return derive_mask_plan(spec, meta_int(meta, "mask_size"),
                          static_cast<float>(meta_double(meta, "mask_ratio")), downsample);
}

}  // namespace lsmae
