// Copyright 2026 The mudet Authors
// SPDX-License-Identifier: Apache-2.0

// Binary parameter checkpoints, little-endian:
//   "MUDT" | u32 version | records...
//   record = u32 name length | UTF-8 name | u32 rank | u64 extents[rank] | f64 payload

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mudet/nn.hpp"

namespace mudet {

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path);

std::string encode_checkpoint(const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> decode_checkpoint(const std::string& bytes);

/// Copies values from `loaded` into the matching entries of `targets` by name.
/// Every target must be present with an identical shape.
void assign_checkpoint(const std::vector<NamedTensor>& loaded, std::vector<NamedTensor>& targets);

}  // namespace mudet
