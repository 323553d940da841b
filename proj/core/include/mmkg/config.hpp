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
#include <string_view>

#include "mmkg/eval.hpp"
#include "mmkg/kgdata.hpp"
#include "mmkg/train.hpp"

namespace mmkg {

/// Everything a run needs besides paths. Serialized as nested JSON sections:
/// seed, data, model, modalities, losses, optim, train, iter, unsupervised, eval.
struct RunConfig {
  std::uint64_t seed = 42;
  double train_ratio = 0.3;
  double dev_fraction = 0.1;
  std::size_t image_dim = 32;  // width of the random fill when no image file exists
  std::size_t bigram_dim = kDefaultBigramDim;
  TrainConfig train;  // train.seed follows seed
  Direction direction = Direction::Forward;
  CandidatePool candidates = CandidatePool::Test;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

/// Unknown keys and ill-typed values raise ConfigError. Booleans also accept
/// "on"/"off". Missing keys keep their defaults.
RunConfig parse_run_config(std::string_view json_text);
RunConfig read_run_config(const std::filesystem::path& path);
std::string to_json(const RunConfig& config);

/// Applies one "section.key=value" assignment. The value is read as JSON when
/// it parses, otherwise as a string.
void apply_override(RunConfig& config, std::string_view assignment);

LoadOptions load_options(const RunConfig& config);
EvalOptions eval_options(const RunConfig& config);

}  // namespace mmkg
