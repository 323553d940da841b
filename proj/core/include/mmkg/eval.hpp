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

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mmkg/encoders.hpp"
#include "mmkg/kgdata.hpp"
#include "mmkg/tensor.hpp"

namespace mmkg {

enum class Direction { Forward, Backward, Both };  // g1->g2, g2->g1, mean of the two
enum class CandidatePool { Test, All };

std::string_view direction_name(Direction d);
std::optional<Direction> parse_direction(std::string_view s);
std::string_view pool_name(CandidatePool p);
std::optional<CandidatePool> parse_pool(std::string_view s);

/// 1-based rank of candidates[truth[q]] for every query row q under cosine
/// similarity; ties go to the smaller candidate index.
std::vector<std::size_t> rank_by_cosine(const Tensor& queries, const Tensor& candidates,
                                        std::span<const std::size_t> truth);

/// Ranks each pair's counterpart in one direction. `candidates` lists local ids
/// of the target graph; every counterpart must be among them.
std::vector<std::size_t> rank_counterparts(const Tensor& emb, std::size_t n1,
                                           std::span<const EntityPair> pairs, Direction dir,
                                           std::span<const std::size_t> candidates);

/// Candidate list for a pool: the pairs' own target-side ids (Test) or every
/// entity of the target graph (All).
std::vector<std::size_t> candidate_ids(std::span<const EntityPair> pairs, Direction dir,
                                       CandidatePool pool, std::size_t target_size);

/// Mean over pairs of cos(query, counterpart) minus the best cosine to any
/// other candidate. Positive when every query ranks its counterpart first.
double mean_margin(const Tensor& emb, std::size_t n1, std::span<const EntityPair> pairs,
                   Direction dir, std::span<const std::size_t> candidates);

struct Metrics {
  std::map<std::size_t, double> hits_at;
  double mrr = 0.0;
};

Metrics hits_mrr(std::span<const std::size_t> ranks, std::span<const std::size_t> ks);
Metrics hits_mrr(std::span<const std::size_t> ranks);  // k = 1, 10

inline constexpr std::size_t kProfileDepth = 10;

/// Mean cosine similarity at ranked positions 1..kProfileDepth, averaged over
/// queries. Shorter when fewer candidates exist.
std::vector<double> similarity_profile(const Tensor& emb, std::size_t n1,
                                       std::span<const EntityPair> pairs, Direction dir,
                                       std::span<const std::size_t> candidates);

struct EvalOptions {
  Direction direction = Direction::Forward;
  CandidatePool pool = CandidatePool::Test;
  std::vector<std::size_t> ks{1, 10};
  bool profile = true;
};

struct EvalReport {
  Direction direction = Direction::Forward;
  CandidatePool pool = CandidatePool::Test;
  std::map<std::size_t, double> hits_at;
  double mrr = 0.0;
  /// Forward ranks, then backward ranks when direction is Both.
  std::vector<std::size_t> ranks;
  /// Keyed by modality name plus "joint".
  std::map<std::string, std::vector<double>> similarity_profile;

  double hits(std::size_t k) const;
  std::string to_json() const;
  std::string table() const;
};

/// Full evaluation over the joint embedding (metrics) and every encoded
/// modality (profile).
EvalReport evaluate(const ModalEmbeddings& emb, std::size_t n1, std::size_t n2,
                    std::span<const EntityPair> pairs, const EvalOptions& options = {});

/// Metrics only, over the joint embedding.
EvalReport evaluate_joint(const Tensor& joint, std::size_t n1, std::size_t n2,
                          std::span<const EntityPair> pairs, const EvalOptions& options = {});

}  // namespace mmkg
