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

#include "mmkg/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mmkg/errors.hpp"
#include "mmkg/ops.hpp"

namespace mmkg {

namespace {

void check_pair(const Tensor& left, const Tensor& right, double tau) {
  if (left.rank() != 2 || right.rank() != 2 || left.shape() != right.shape()) {
    throw DimensionError("alignment distribution needs equal B x d inputs, got " +
                         shape_str(left.shape()) + " and " + shape_str(right.shape()));
  }
  if (left.rows() < 2) throw ContractError("alignment distribution needs a batch of at least 2");
  if (!(tau > 0.0)) throw ContractError("temperature must be positive");
}

// sum_c p log p of a constant distribution, with the same floor as the student.
double neg_entropy(std::span<const double> p) {
  double acc = 0.0;
  for (double v : p) acc += v * std::log(std::max(v, kLogFloor));
  return acc;
}

Tensor kl_mean(const AlignmentDistribution& teacher, const AlignmentDistribution& student) {
  const double b = static_cast<double>(teacher.prob.rows());
  const auto& p = teacher.prob;
  auto cross = sum(mul(p, student.log_prob));
  return add_scalar(scale(cross, -1.0 / b), neg_entropy(p.data()) / b);
}

// Cosine matrices of one batch. Both directions and both losses read them:
// the g2 -> g1 direction uses lr transposed, with bitwise the same values as
// computing R L^T afresh.
struct Similarities {
  Tensor lr, ll, rr;
};

Similarities similarities(const Tensor& left, const Tensor& right) {
  auto ln = l2_normalize_rows(left);
  auto rn = l2_normalize_rows(right);
  return {matmul(ln, transpose(rn)), matmul(ln, transpose(ln)), matmul(rn, transpose(rn))};
}

AlignmentDistribution distribution(const Tensor& cross, const Tensor& self, double tau) {
  const std::size_t b = cross.rows();
  auto cand = gather_cols(concat_cols({cross, self}), candidate_index(b), 2 * b - 1);
  AlignmentDistribution q;
  q.prob = row_softmax(cand, tau);
  q.log_prob = log(q.prob, kLogFloor);
  return q;
}

struct Directions {
  AlignmentDistribution forward, backward;
};

Directions both_directions(const Similarities& s, double tau) {
  return {distribution(s.lr, s.ll, tau), distribution(transpose(s.lr), s.rr, tau)};
}

Tensor icl_from(const Similarities& s, double tau1) {
  auto q = both_directions(s, tau1);
  auto sum_pos = add(positive_prob(q.forward), positive_prob(q.backward));
  return scale(mean(log(scale(sum_pos, 0.5), kLogFloor)), -1.0);
}

Directions make_teacher(const Tensor& joint_left, const Tensor& joint_right, double tau2) {
  NoGradGuard no_grad;
  return both_directions(similarities(detach(joint_left), detach(joint_right)), tau2);
}

Tensor distill(const Directions& teacher, const Similarities& s, double tau2) {
  auto student = both_directions(s, tau2);
  return scale(add(kl_mean(teacher.forward, student.forward), kl_mean(teacher.backward, student.backward)),
               0.5);
}

void check_finite(const Tensor& t, const std::string& what) {
  if (!std::isfinite(t.item())) throw NumericError("non-finite loss component: " + what);
}

}  // namespace

std::vector<std::size_t> candidate_index(std::size_t batch) {
  const std::size_t width = 2 * batch - 1;
  std::vector<std::size_t> idx;
  idx.reserve(batch * width);
  for (std::size_t i = 0; i < batch; ++i) {
    idx.push_back(i);
    for (std::size_t j = 0; j < batch; ++j)
      if (j != i) idx.push_back(batch + j);
    for (std::size_t j = 0; j < batch; ++j)
      if (j != i) idx.push_back(j);
  }
  return idx;
}

AlignmentDistribution alignment_distribution(const Tensor& left, const Tensor& right, double tau) {
  check_pair(left, right, tau);
  auto ln = l2_normalize_rows(left);
  auto rn = l2_normalize_rows(right);
  return distribution(matmul(ln, transpose(rn)), matmul(ln, transpose(ln)), tau);
}

Tensor positive_prob(const AlignmentDistribution& q) {
  std::vector<std::size_t> idx(q.prob.rows(), AlignmentDistribution::kPositiveColumn);
  return gather_cols(q.prob, idx, 1);
}

Tensor icl_loss(const Tensor& left, const Tensor& right, double tau1) {
  check_pair(left, right, tau1);
  return icl_from(similarities(left, right), tau1);
}

Tensor ial_loss(const Tensor& joint_left, const Tensor& joint_right, const Tensor& modal_left,
                const Tensor& modal_right, double tau2) {
  check_pair(modal_left, modal_right, tau2);
  if (joint_left.rows() != modal_left.rows() || joint_right.rows() != modal_right.rows()) {
    throw DimensionError("joint and modality batches differ in size");
  }
  return distill(make_teacher(joint_left, joint_right, tau2), similarities(modal_left, modal_right), tau2);
}

BatchEmbeddings batch_embeddings(const ModalEmbeddings& emb, const BatchPairs& batch,
                                 std::size_t n1, const ModalitySet& modalities) {
  if (batch.left_ids.size() != batch.right_ids.size()) {
    throw ContractError("batch has unequal left and right id lists");
  }
  std::vector<std::size_t> right(batch.right_ids);
  for (auto& r : right) r += n1;
  BatchEmbeddings out;
  for (auto m : modalities.list()) {
    const auto& h = emb[m];
    if (!h.defined()) throw ContractError(std::string(modality_name(m)) + " was not encoded");
    out.left[index(m)] = gather_rows(h, batch.left_ids);
    out.right[index(m)] = gather_rows(h, right);
  }
  out.joint_left = gather_rows(emb.joint, batch.left_ids);
  out.joint_right = gather_rows(emb.joint, right);
  return out;
}

LossBreakdown total_loss(const BatchEmbeddings& batch, const Tensor& uncert_icl,
                         const Tensor& uncert_ial, const ModalitySet& modalities,
                         const LossConfig& config) {
  if (uncert_icl.numel() != kNumModalities || uncert_ial.numel() != kNumModalities) {
    throw DimensionError("uncertainty vectors must have one entry per modality");
  }
  for (std::size_t m = 0; m < kNumModalities; ++m) {
    if (!std::isfinite(uncert_icl(m)) || !std::isfinite(uncert_ial(m))) {
      throw NumericError("non-finite uncertainty weight for " +
                         std::string(modality_name(kAllModalities[m])));
    }
  }
  check_pair(batch.joint_left, batch.joint_right, config.tau1);
  LossBreakdown out;
  auto joint = icl_from(similarities(batch.joint_left, batch.joint_right), config.tau1);
  check_finite(joint, "icl_joint");
  out.icl_joint = joint.item();
  Tensor total = joint;

  auto weighted = [&](const Tensor& part, const Tensor& logs, std::size_t m) {
    if (!config.uncertainty) return part;
    auto s = slice(logs, m, 1);
    return add(mul(exp(scale(s, -1.0)), part), scale(s, 0.5));
  };

  const Tensor& teacher_l = batch.teacher_left.defined() ? batch.teacher_left : batch.joint_left;
  const Tensor& teacher_r = batch.teacher_right.defined() ? batch.teacher_right : batch.joint_right;
  std::optional<Directions> teacher;
  if (config.ial && !modalities.list().empty()) {
    check_pair(teacher_l, teacher_r, config.tau2);
    teacher = make_teacher(teacher_l, teacher_r, config.tau2);
  }

  for (auto m : modalities.list()) {
    const auto k = index(m);
    const std::string name(modality_name(m));
    out.alpha[k] = config.uncertainty ? std::exp(0.5 * uncert_icl(k)) : 1.0;
    out.beta[k] = config.uncertainty ? std::exp(0.5 * uncert_ial(k)) : 1.0;
    if (!config.icl && !config.ial) continue;
    check_pair(batch.left[k], batch.right[k], config.tau1);
    if (batch.left[k].rows() != batch.joint_left.rows()) {
      throw DimensionError("joint and modality batches differ in size");
    }
    const auto sims = similarities(batch.left[k], batch.right[k]);
    if (config.icl) {
      auto part = icl_from(sims, config.tau1);
      check_finite(part, "icl[" + name + "]");
      out.icl[k] = part.item();
      total = add(total, weighted(part, uncert_icl, k));
    }
    if (config.ial) {
      auto part = distill(*teacher, sims, config.tau2);
      check_finite(part, "ial[" + name + "]");
      out.ial[k] = part.item();
      total = add(total, weighted(part, uncert_ial, k));
    }
  }
  check_finite(total, "total");
  out.total = total;
  return out;
}

double resum(const LossBreakdown& parts, const LossConfig& config) {
  double total = parts.icl_joint;
  auto add_term = [&](const std::optional<double>& part, double weight_root) {
    if (!part) return;
    if (!config.uncertainty) {
      total += *part;
      return;
    }
    total += *part / (weight_root * weight_root) + std::log(weight_root);
  };
  for (std::size_t k = 0; k < kNumModalities; ++k) {
    add_term(parts.icl[k], parts.alpha[k]);
    add_term(parts.ial[k], parts.beta[k]);
  }
  return total;
}

}  // namespace mmkg
