// invrender: single-image inverse rendering toolkit.
// SPDX-License-Identifier: Apache-2.0

#include "invrender/checkpoint.h"

#include <nlohmann/json.hpp>

#include <cstring>
#include <fstream>
#include <map>

namespace invrender {

using json = nlohmann::ordered_json;

namespace {

constexpr char kMagic[8] = {'I', 'V', 'R', 'C', 'K', '0', '0', '1'};

void write_u32(std::ofstream& out, uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

uint32_t read_u32(std::ifstream& in) {
  uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!in) throw IoError("checkpoint: truncated file");
  return v;
}

void write_entry(std::ofstream& out, const NamedTensor& t) {
  write_u32(out, static_cast<uint32_t>(t.name.size()));
  out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
  write_u32(out, static_cast<uint32_t>(t.value.shape().size()));
  for (int d : t.value.shape()) write_u32(out, static_cast<uint32_t>(d));
  out.write(reinterpret_cast<const char*>(t.value.data()),
            static_cast<std::streamsize>(t.value.size() * sizeof(real)));
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path,
                     const std::vector<NamedTensor>& params,
                     const std::vector<NamedTensor>& buffers,
                     const CheckpointMeta& meta) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path.string());
  out.write(kMagic, sizeof(kMagic));
  write_u32(out, static_cast<uint32_t>(params.size()));
  write_u32(out, static_cast<uint32_t>(buffers.size()));
  for (const auto& t : params) write_entry(out, t);
  for (const auto& t : buffers) write_entry(out, t);
  if (!out) throw IoError("checkpoint: write failure: " + path.string());
  out.close();

  json j;
  j["stage"] = meta.stage;
  j["config_hash"] = meta.config_hash;
  j["seed"] = meta.seed;
  j["step"] = meta.step;
  std::ofstream side(path.string() + ".json");
  if (!side) throw IoError("cannot write checkpoint sidecar");
  side << j.dump(2) << "\n";
}

namespace {

void load_entries(std::ifstream& in, uint32_t count,
                  std::vector<NamedTensor>& dst, const char* kind) {
  std::map<std::string, Tensor*> by_name;
  for (auto& t : dst) by_name[t.name] = &t.value;
  if (by_name.size() != dst.size())
    throw ValidationError("checkpoint: duplicate tensor names in model");
  size_t matched = 0;
  for (uint32_t i = 0; i < count; ++i) {
    uint32_t name_len = read_u32(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    uint32_t ndim = read_u32(in);
    std::vector<int> shape(ndim);
    int64_t total = 1;
    for (uint32_t d = 0; d < ndim; ++d) {
      shape[d] = static_cast<int>(read_u32(in));
      total *= shape[d];
    }
    auto it = by_name.find(name);
    if (it == by_name.end())
      throw ValidationError(std::string("checkpoint: unknown ") + kind +
                            " tensor '" + name + "'");
    Tensor* t = it->second;
    if (t->shape() != shape)
      throw ValidationError("checkpoint: shape mismatch for '" + name + "'");
    in.read(reinterpret_cast<char*>(t->data()),
            static_cast<std::streamsize>(total * sizeof(real)));
    if (!in) throw IoError("checkpoint: truncated tensor data");
    ++matched;
  }
  if (matched != dst.size())
    throw ValidationError(std::string("checkpoint: missing ") + kind +
                          " tensors");
}

}  // namespace

CheckpointMeta load_checkpoint(const std::filesystem::path& path,
                               std::vector<NamedTensor>& params,
                               std::vector<NamedTensor>& buffers) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw IoError("not a checkpoint file: " + path.string());
  uint32_t n_params = read_u32(in);
  uint32_t n_buffers = read_u32(in);
  load_entries(in, n_params, params, "parameter");
  load_entries(in, n_buffers, buffers, "buffer");
  return read_checkpoint_meta(path);
}

CheckpointMeta read_checkpoint_meta(const std::filesystem::path& path) {
  CheckpointMeta meta;
  std::ifstream side(path.string() + ".json");
  if (!side) throw IoError("missing checkpoint sidecar: " + path.string() +
                           ".json");
  json j;
  try {
    side >> j;
  } catch (const json::exception& e) {
    throw ParseError(std::string("checkpoint sidecar: ") + e.what());
  }
  meta.stage = j.value("stage", "");
  meta.config_hash = j.value("config_hash", "");
  meta.seed = j.value("seed", 0ull);
  meta.step = j.value("step", 0ll);
  return meta;
}

}  // namespace invrender
