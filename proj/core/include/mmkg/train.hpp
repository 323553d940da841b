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

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mmkg/encoders.hpp"
#include "mmkg/errors.hpp"
#include "mmkg/kgdata.hpp"
#include "mmkg/losses.hpp"
#include "mmkg/optim.hpp"

namespace mmkg {

enum class UnsupervisedMode { Off, Name, Visual };

std::string_view unsupervised_name(UnsupervisedMode m);
std::optional<UnsupervisedMode> parse_unsupervised(std::string_view s);

struct TrainConfig {
  ModelDims dims;
  ModalitySet modalities;
  LossConfig loss;
  AdamWOptions optim;
  std::size_t epochs = 1000;
  std::size_t batch_size = 512;
  std::size_t eval_every = 10;
  std::size_t patience = 5;  // evaluations without improvement
  std::uint64_t seed = 42;

  bool iter_enabled = true;
  std::size_t iter_start_epoch = 200;
  std::size_t iter_every = 50;
  std::size_t iter_confirm_rounds = 2;

  UnsupervisedMode unsupervised = UnsupervisedMode::Off;
  std::size_t max_seeds = 0;  // 0 keeps every mutual pair

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Throws ConfigError on an unusable configuration.
void validate(const TrainConfig& config);

struct EvalRecord {
  std::size_t epoch = 0;
  double loss = 0.0;  // mean batch total over this epoch
  double icl_joint = 0.0;
  std::array<std::optional<double>, kNumModalities> icl;
  std::array<std::optional<double>, kNumModalities> ial;
  std::array<double, kNumModalities> alpha{};
  std::array<double, kNumModalities> beta{};
  std::optional<double> dev_h1;
  std::optional<double> dev_mrr;
  std::optional<double> dev_margin;  // breaks ties between equal MRR and H@1
  std::size_t pseudo_seeds = 0;

  std::string to_json_line() const;
  friend bool operator==(const EvalRecord&, const EvalRecord&) = default;
};

struct TrainLog {
  std::vector<EvalRecord> records;
  std::vector<double> epoch_losses;
  std::size_t epochs_run = 0;
  std::optional<std::size_t> best_epoch;  // epoch whose parameters were returned
  bool stopped_early = false;

  std::string to_jsonl() const;
  friend bool operator==(const TrainLog&, const TrainLog&) = default;
};

/// Divergence during training; carries the last record whose values were finite.
class TrainingError : public NumericError {
 public:
  TrainingError(const std::string& what, std::optional<EvalRecord> last)
      : NumericError(what), last_record(std::move(last)) {}
  std::optional<EvalRecord> last_record;
};

/// Shuffles and partitions the pool. A pair whose left or right id already
/// occurs in the batch being filled moves on to the next batch. A trailing
/// batch of one pair joins the previous batch (or is dropped if it would
/// duplicate an id there).
std::vector<BatchPairs> make_batches(std::span<const EntityPair> pool, std::size_t batch_size,
                                     std::mt19937_64& rng);

/// Mutual top-1 pairs (row, col) of a dense rows x cols similarity matrix;
/// ties prefer the smaller index. Row order.
std::vector<EntityPair> mutual_nearest(std::span<const double> sim, std::size_t rows,
                                       std::size_t cols);

/// Mutual nearest neighbours between g1 ids `pool1` and g2 ids `pool2` under
/// cosine similarity of the joint embedding (g2 rows offset by n1).
std::vector<EntityPair> propose_pseudo_seeds(const Tensor& joint, std::size_t n1,
                                             std::span<const std::size_t> pool1,
                                             std::span<const std::size_t> pool2);

/// Seeds from raw name or image features alone, best similarity first.
std::vector<EntityPair> unsupervised_seed_init(const FeatureBundle& features,
                                               UnsupervisedMode mode, std::size_t max_seeds);

struct TrainResult {
  ModelParams params;
  TrainLog log;
  /// Seeds the model was trained on besides train_seeds: bootstrap seeds
  /// in unsupervised mode, then every admitted proposal.
  std::vector<EntityPair> pseudo_seeds;
};

TrainResult train(const TrainConfig& config, const KgPair& pair, const FeatureBundle& features);

}  // namespace mmkg
