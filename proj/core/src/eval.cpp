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

#include "mmkg/eval.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <iomanip>
#include <set>
#include <sstream>

#include <json.hpp>

#include "mmkg/errors.hpp"

namespace mmkg {

namespace {

using json = nlohmann::json;

// Unit-norm copies of selected rows; rows below the floor stay as they are.
std::vector<double> normalized_rows(const Tensor& t, std::span<const std::size_t> rows) {
  const std::size_t d = t.cols();
  std::vector<double> out(rows.size() * d);
  const auto data = t.data();
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= t.rows()) throw IndexError("row " + std::to_string(rows[r]) + " out of range");
    const double* src = data.data() + rows[r] * d;
    double norm = 0.0;
    for (std::size_t c = 0; c < d; ++c) norm += src[c] * src[c];
    norm = std::sqrt(norm);
    const double inv = norm < 1e-12 ? 1.0 : 1.0 / norm;
    for (std::size_t c = 0; c < d; ++c) out[r * d + c] = src[c] * inv;
  }
  return out;
}

std::vector<std::size_t> iota_rows(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

struct Sides {
  std::vector<std::size_t> query_rows;
  std::vector<std::size_t> cand_rows;
  std::vector<std::size_t> truth;
};

Sides resolve(std::size_t n1, std::span<const EntityPair> pairs, Direction dir,
              std::span<const std::size_t> candidates) {
  if (dir == Direction::Both) throw ContractError("resolve a single direction at a time");
  if (candidates.empty()) throw ContractError("empty candidate set");
  const bool fwd = dir == Direction::Forward;
  const std::size_t target_offset = fwd ? n1 : 0;
  const std::size_t query_offset = fwd ? 0 : n1;
  std::map<std::size_t, std::size_t> pos;
  Sides s;
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    pos.emplace(candidates[c], c);
    s.cand_rows.push_back(candidates[c] + target_offset);
  }
  for (const auto& [a, b] : pairs) {
    const std::size_t q = fwd ? a : b;
    const std::size_t t = fwd ? b : a;
    auto it = pos.find(t);
    if (it == pos.end()) {
      throw ContractError("counterpart " + std::to_string(t) + " is not among the candidates");
    }
    s.query_rows.push_back(q + query_offset);
    s.truth.push_back(it->second);
  }
  return s;
}

std::vector<double> dot_rows(const std::vector<double>& q, std::size_t qi,
                             const std::vector<double>& c, std::size_t nc, std::size_t d) {
  std::vector<double> sims(nc);
  const double* qrow = q.data() + qi * d;
  for (std::size_t j = 0; j < nc; ++j) {
    const double* crow = c.data() + j * d;
    double acc = 0.0;
    for (std::size_t k = 0; k < d; ++k) acc += qrow[k] * crow[k];
    sims[j] = acc;
  }
  return sims;
}

}  // namespace

std::string_view direction_name(Direction d) {
  switch (d) {
    case Direction::Forward: return "g1->g2";
    case Direction::Backward: return "g2->g1";
    case Direction::Both: return "both";
  }
  return "?";
}

std::optional<Direction> parse_direction(std::string_view s) {
  if (s == "g1->g2" || s == "forward" || s == "g1") return Direction::Forward;
  if (s == "g2->g1" || s == "backward" || s == "g2") return Direction::Backward;
  if (s == "both") return Direction::Both;
  return std::nullopt;
}

std::string_view pool_name(CandidatePool p) { return p == CandidatePool::Test ? "test" : "all"; }

std::optional<CandidatePool> parse_pool(std::string_view s) {
  if (s == "test") return CandidatePool::Test;
  if (s == "all") return CandidatePool::All;
  return std::nullopt;
}

std::vector<std::size_t> rank_by_cosine(const Tensor& queries, const Tensor& candidates,
                                        std::span<const std::size_t> truth) {
  if (queries.cols() != candidates.cols()) {
    throw DimensionError("query width " + std::to_string(queries.cols()) +
                         " differs from candidate width " + std::to_string(candidates.cols()));
  }
  if (truth.size() != queries.rows()) throw ContractError("one truth index per query expected");
  const std::size_t d = queries.cols(), nc = candidates.rows();
  const auto q = normalized_rows(queries, iota_rows(queries.rows()));
  const auto c = normalized_rows(candidates, iota_rows(nc));
  std::vector<std::size_t> ranks(truth.size());
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] >= nc) throw IndexError("truth index out of range");
    const auto sims = dot_rows(q, i, c, nc, d);
    const double target = sims[truth[i]];
    std::size_t ahead = 0;
    for (std::size_t j = 0; j < nc; ++j) {
      if (sims[j] > target || (sims[j] == target && j < truth[i])) ++ahead;
    }
    ranks[i] = ahead + 1;
  }
  return ranks;
}

std::vector<std::size_t> rank_counterparts(const Tensor& emb, std::size_t n1,
                                           std::span<const EntityPair> pairs, Direction dir,
                                           std::span<const std::size_t> candidates) {
  if (pairs.empty()) throw ContractError("no pairs to rank");
  const auto s = resolve(n1, pairs, dir, candidates);
  const std::size_t d = emb.cols();
  const auto q = normalized_rows(emb, s.query_rows);
  const auto c = normalized_rows(emb, s.cand_rows);
  std::vector<std::size_t> ranks(s.truth.size());
  for (std::size_t i = 0; i < s.truth.size(); ++i) {
    const auto sims = dot_rows(q, i, c, s.cand_rows.size(), d);
    const double target = sims[s.truth[i]];
    std::size_t ahead = 0;
    for (std::size_t j = 0; j < sims.size(); ++j) {
      if (sims[j] > target || (sims[j] == target && j < s.truth[i])) ++ahead;
    }
    ranks[i] = ahead + 1;
  }
  return ranks;
}

double mean_margin(const Tensor& emb, std::size_t n1, std::span<const EntityPair> pairs,
                   Direction dir, std::span<const std::size_t> candidates) {
  if (pairs.empty()) throw ContractError("no pairs to score");
  const auto s = resolve(n1, pairs, dir, candidates);
  const std::size_t d = emb.cols();
  const auto q = normalized_rows(emb, s.query_rows);
  const auto c = normalized_rows(emb, s.cand_rows);
  double acc = 0.0;
  for (std::size_t i = 0; i < s.truth.size(); ++i) {
    const auto sims = dot_rows(q, i, c, s.cand_rows.size(), d);
    double rival = -2.0;
    for (std::size_t j = 0; j < sims.size(); ++j)
      if (j != s.truth[i]) rival = std::max(rival, sims[j]);
    acc += sims[s.truth[i]] - (sims.size() > 1 ? rival : 0.0);
  }
  return acc / static_cast<double>(s.truth.size());
}

std::vector<std::size_t> candidate_ids(std::span<const EntityPair> pairs, Direction dir,
                                       CandidatePool pool, std::size_t target_size) {
  if (pool == CandidatePool::All) return iota_rows(target_size);
  std::set<std::size_t> ids;
  for (const auto& [a, b] : pairs) ids.insert(dir == Direction::Backward ? a : b);
  return {ids.begin(), ids.end()};
}

Metrics hits_mrr(std::span<const std::size_t> ranks, std::span<const std::size_t> ks) {
  if (ranks.empty()) throw ContractError("no ranks to summarize");
  Metrics m;
  double rr = 0.0;
  for (auto r : ranks) {
    if (r == 0) throw ContractError("ranks are 1-based");
    rr += 1.0 / static_cast<double>(r);
  }
  m.mrr = rr / static_cast<double>(ranks.size());
  for (auto k : ks) {
    const auto hit = std::count_if(ranks.begin(), ranks.end(), [k](std::size_t r) { return r <= k; });
    m.hits_at[k] = static_cast<double>(hit) / static_cast<double>(ranks.size());
  }
  return m;
}

Metrics hits_mrr(std::span<const std::size_t> ranks) {
  static constexpr std::size_t ks[] = {1, 10};
  return hits_mrr(ranks, ks);
}

std::vector<double> similarity_profile(const Tensor& emb, std::size_t n1,
                                       std::span<const EntityPair> pairs, Direction dir,
                                       std::span<const std::size_t> candidates) {
  if (pairs.empty()) throw ContractError("no pairs to profile");
  const auto s = resolve(n1, pairs, dir, candidates);
  const std::size_t d = emb.cols();
  const auto q = normalized_rows(emb, s.query_rows);
  const auto c = normalized_rows(emb, s.cand_rows);
  const std::size_t depth = std::min(kProfileDepth, s.cand_rows.size());
  std::vector<double> acc(depth, 0.0);
  for (std::size_t i = 0; i < s.query_rows.size(); ++i) {
    auto sims = dot_rows(q, i, c, s.cand_rows.size(), d);
    std::partial_sort(sims.begin(), sims.begin() + static_cast<std::ptrdiff_t>(depth), sims.end(),
                      std::greater<>());
    for (std::size_t p = 0; p < depth; ++p) acc[p] += sims[p];
  }
  for (auto& v : acc) v /= static_cast<double>(s.query_rows.size());
  return acc;
}

double EvalReport::hits(std::size_t k) const {
  auto it = hits_at.find(k);
  if (it == hits_at.end()) throw ContractError("H@" + std::to_string(k) + " was not computed");
  return it->second;
}

std::string EvalReport::to_json() const {
  json j;
  j["direction"] = direction_name(direction);
  j["candidates"] = pool_name(pool);
  json hits = json::object();
  for (const auto& [k, v] : hits_at) hits[std::to_string(k)] = v;
  j["hits"] = hits;
  j["mrr"] = mrr;
  j["n_queries"] = ranks.size();
  j["ranks"] = ranks;
  j["similarity_profile"] = similarity_profile;
  return j.dump(2);
}

std::string EvalReport::table() const {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "direction  " << direction_name(direction) << "  (candidates: " << pool_name(pool)
     << ", queries: " << ranks.size() << ")\n";
  for (const auto& [k, v] : hits_at) os << "H@" << k << (k < 10 ? "       " : "      ") << v << "\n";
  os << "MRR       " << mrr << "\n";
  if (!similarity_profile.empty()) {
    os << "\nmean similarity by rank position\n" << std::setw(10) << std::left << "modality";
    os << std::right;
    for (std::size_t p = 1; p <= kProfileDepth; ++p) os << std::setw(8) << p;
    os << "\n";
    for (const auto& [name, row] : similarity_profile) {
      os << std::setw(10) << std::left << name << std::right;
      for (double v : row) os << std::setw(8) << std::setprecision(3) << v;
      os << std::setprecision(4) << "\n";
    }
  }
  return os.str();
}

namespace {

EvalReport metrics_report(const Tensor& joint, std::size_t n1, std::size_t n2,
                          std::span<const EntityPair> pairs, const EvalOptions& options) {
  EvalReport r;
  r.direction = options.direction;
  r.pool = options.pool;
  auto one = [&](Direction d) {
    const auto cands = candidate_ids(pairs, d, options.pool, d == Direction::Forward ? n2 : n1);
    return rank_counterparts(joint, n1, pairs, d, cands);
  };
  if (options.direction != Direction::Both) {
    r.ranks = one(options.direction);
    auto m = hits_mrr(r.ranks, options.ks);
    r.hits_at = m.hits_at;
    r.mrr = m.mrr;
    return r;
  }
  const auto fwd = one(Direction::Forward);
  const auto bwd = one(Direction::Backward);
  const auto mf = hits_mrr(fwd, options.ks);
  const auto mb = hits_mrr(bwd, options.ks);
  for (auto k : options.ks) r.hits_at[k] = 0.5 * (mf.hits_at.at(k) + mb.hits_at.at(k));
  r.mrr = 0.5 * (mf.mrr + mb.mrr);
  r.ranks = fwd;
  r.ranks.insert(r.ranks.end(), bwd.begin(), bwd.end());
  return r;
}

}  // namespace

EvalReport evaluate_joint(const Tensor& joint, std::size_t n1, std::size_t n2,
                          std::span<const EntityPair> pairs, const EvalOptions& options) {
  return metrics_report(joint, n1, n2, pairs, options);
}

EvalReport evaluate(const ModalEmbeddings& emb, std::size_t n1, std::size_t n2,
                    std::span<const EntityPair> pairs, const EvalOptions& options) {
  auto r = metrics_report(emb.joint, n1, n2, pairs, options);
  if (!options.profile) return r;
  // Profiles use the first concrete direction.
  const Direction d = options.direction == Direction::Backward ? Direction::Backward
                                                               : Direction::Forward;
  const auto cands = candidate_ids(pairs, d, options.pool, d == Direction::Forward ? n2 : n1);
  for (auto m : kAllModalities) {
    if (!emb[m].defined()) continue;
    r.similarity_profile[std::string(modality_name(m))] =
        similarity_profile(emb[m], n1, pairs, d, cands);
  }
  r.similarity_profile["joint"] = similarity_profile(emb.joint, n1, pairs, d, cands);
  return r;
}

}  // namespace mmkg
