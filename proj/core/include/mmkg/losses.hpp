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
#include <optional>
#include <vector>

#include "mmkg/encoders.hpp"
#include "mmkg/tensor.hpp"

namespace mmkg {

inline constexpr double kLogFloor = 1e-12;

/// Aligned positives for one minibatch; ids are local to each graph.
struct BatchPairs {
  std::vector<std::size_t> left_ids;
  std::vector<std::size_t> right_ids;

  std::size_t size() const { return left_ids.size(); }
};

/// Candidate distribution of every anchor over 2B-1 candidates:
/// column 0 is the positive R[i], then L[j] for j != i, then R[j] for j != i.
struct AlignmentDistribution {
  Tensor prob;      // B x (2B-1)
  Tensor log_prob;  // log(max(prob, kLogFloor))
  static constexpr std::size_t kPositiveColumn = 0;
};

/// Candidate order used by alignment_distribution, as flat per-row indices into
/// [L R^T | L L^T] (width 2B).
std::vector<std::size_t> candidate_index(std::size_t batch);

AlignmentDistribution alignment_distribution(const Tensor& left, const Tensor& right, double tau);

/// Probability of the positive for each anchor, B x 1.
Tensor positive_prob(const AlignmentDistribution& q);

/// -mean_i log(0.5 * (q(l_i -> r_i) + q(r_i -> l_i)))
Tensor icl_loss(const Tensor& left, const Tensor& right, double tau1 = 0.1);

/// Mean over anchors of 0.5 * [KL(teacher_12 || student_12) + KL(teacher_21 || student_21)].
/// The teacher distribution comes from the joint rows and carries no gradient.
Tensor ial_loss(const Tensor& joint_left, const Tensor& joint_right, const Tensor& modal_left,
                const Tensor& modal_right, double tau2 = 4.0);

struct LossConfig {
  double tau1 = 0.1;
  double tau2 = 4.0;
  bool icl = true;          // per-modality contrastive terms
  bool ial = true;          // distillation terms
  bool uncertainty = true;  // learned weights; off means unit weights
  friend bool operator==(const LossConfig&, const LossConfig&) = default;
};

/// Rows of every enabled modality and of the joint embedding for one batch.
struct BatchEmbeddings {
  std::array<Tensor, kNumModalities> left;
  std::array<Tensor, kNumModalities> right;
  Tensor joint_left;
  Tensor joint_right;
  /// Teacher rows for the distillation terms. When undefined the joint rows
  /// are used (detached). Setting them freezes the teacher, e.g. for
  /// finite-difference checks.
  Tensor teacher_left;
  Tensor teacher_right;
};

/// Gathers the batch rows out of a full forward pass; right ids are offset by n1.
BatchEmbeddings batch_embeddings(const ModalEmbeddings& emb, const BatchPairs& batch,
                                 std::size_t n1, const ModalitySet& modalities);

struct LossBreakdown {
  Tensor total;
  double icl_joint = 0.0;
  std::array<std::optional<double>, kNumModalities> icl;
  std::array<std::optional<double>, kNumModalities> ial;
  std::array<double, kNumModalities> alpha{};  // exp(s/2)
  std::array<double, kNumModalities> beta{};

  double total_value() const { return total.item(); }
};

/// icl_joint + sum_m [exp(-s_m) icl_m + s_m/2] + sum_m [exp(-t_m) ial_m + t_m/2]
/// over the modalities present in `batch`. With config.uncertainty off every
/// weight is 1 and the log terms vanish.
LossBreakdown total_loss(const BatchEmbeddings& batch, const Tensor& uncert_icl,
                         const Tensor& uncert_ial, const ModalitySet& modalities,
                         const LossConfig& config);

/// Recomputes the total from the scalar parts of a breakdown.
double resum(const LossBreakdown& parts, const LossConfig& config);

}  // namespace mmkg
