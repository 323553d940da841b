/*
 * Copyright (c) 2026 The mmkg-align Authors
 *
 * Licensed under the Apache License, Version 2.0;
 * You may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an 'AS IS' BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "mmkg/tensor.hpp"

namespace mmkg {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Named tensors plus the configuration they were trained under.
///
/// Layout (little-endian): magic "MMKGCKPT", u32 version, u64 config length,
/// config JSON bytes, u64 tensor count, then per tensor u64 name length, name,
/// u64 rank, rank x u64 extents, raw f64 values.
struct Checkpoint {
  std::string config_json;
  std::vector<std::pair<std::string, Tensor>> tensors;
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
/// IngestError if unreadable, ParseError if truncated or not a checkpoint.
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace mmkg
