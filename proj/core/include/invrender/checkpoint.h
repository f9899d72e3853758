// invrender: single-image inverse rendering toolkit.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "invrender/nn.h"

namespace invrender {

// Checkpoint sidecar metadata, stored as JSON next to the binary archive.
struct CheckpointMeta {
  std::string stage;
  std::string config_hash;
  uint64_t seed = 0;
  int64_t step = 0;
};

// Binary archive of named double tensors (parameters followed by buffers)
// plus a `<path>.json` sidecar.
void save_checkpoint(const std::filesystem::path& path,
                     const std::vector<NamedTensor>& params,
                     const std::vector<NamedTensor>& buffers,
                     const CheckpointMeta& meta);

// Loads into existing tensors; names and shapes must match exactly.
CheckpointMeta load_checkpoint(const std::filesystem::path& path,
                               std::vector<NamedTensor>& params,
                               std::vector<NamedTensor>& buffers);

CheckpointMeta read_checkpoint_meta(const std::filesystem::path& path);

}  // namespace invrender
