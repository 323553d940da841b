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

#include "mmkg/train.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <map>
#include <numeric>
#include <set>

#include <json.hpp>

#include "mmkg/eval.hpp"
#include "mmkg/ops.hpp"

namespace mmkg {

namespace {

using json = nlohmann::json;

json optional_array(const std::array<std::optional<double>, kNumModalities>& values) {
  json j = json::object();
  for (auto m : kAllModalities)
    if (values[index(m)]) j[std::string(modality_name(m))] = *values[index(m)];
  return j;
}

// Unit rows of the selected entities, plain values.
std::vector<double> unit_rows(std::span<const double> data, std::size_t width,
                              std::span<const std::size_t> rows) {
  std::vector<double> out(rows.size() * width);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const double* src = data.data() + rows[r] * width;
    double norm = 0.0;
    for (std::size_t c = 0; c < width; ++c) norm += src[c] * src[c];
    norm = std::sqrt(norm);
    const double inv = norm < kNormFloor ? 1.0 : 1.0 / norm;
    for (std::size_t c = 0; c < width; ++c) out[r * width + c] = src[c] * inv;
  }
  return out;
}

std::vector<double> cosine_matrix(std::span<const double> data, std::size_t width,
                                  std::span<const std::size_t> rows_a,
                                  std::span<const std::size_t> rows_b) {
  const auto a = unit_rows(data, width, rows_a);
  const auto b = unit_rows(data, width, rows_b);
  std::vector<double> sim(rows_a.size() * rows_b.size());
  for (std::size_t i = 0; i < rows_a.size(); ++i) {
    for (std::size_t j = 0; j < rows_b.size(); ++j) {
      double acc = 0.0;
      for (std::size_t c = 0; c < width; ++c) acc += a[i * width + c] * b[j * width + c];
      sim[i * rows_b.size() + j] = acc;
    }
  }
  return sim;
}

template <class Rng>
void shuffle_in_place(std::vector<EntityPair>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng() % i]);
}

struct Used {
  std::set<std::size_t> left, right;
  bool clash(const EntityPair& p) const { return left.count(p.first) || right.count(p.second); }
  void add(const EntityPair& p) {
    left.insert(p.first);
    right.insert(p.second);
  }
};

}  // namespace

std::string_view unsupervised_name(UnsupervisedMode m) {
  switch (m) {
    case UnsupervisedMode::Off: return "off";
    case UnsupervisedMode::Name: return "name";
    case UnsupervisedMode::Visual: return "visual";
  }
  return "?";
}

std::optional<UnsupervisedMode> parse_unsupervised(std::string_view s) {
  if (s == "off") return UnsupervisedMode::Off;
  if (s == "name") return UnsupervisedMode::Name;
  if (s == "visual") return UnsupervisedMode::Visual;
  return std::nullopt;
}

void validate(const TrainConfig& c) {
  auto fail = [](const std::string& what) { throw ConfigError(what); };
  if (c.batch_size < 2) fail("train.batch_size must be at least 2");
  if (c.epochs == 0) fail("train.epochs must be positive");
  if (c.modalities.count() == 0) fail("at least one modality must be enabled");
  if (!(c.loss.tau1 > 0.0) || !(c.loss.tau2 > 0.0)) fail("temperatures must be positive");
  if (!(c.optim.lr > 0.0)) fail("optim.lr must be positive");
  if (!(c.optim.weight_decay >= 0.0)) fail("optim.weight_decay must be non-negative");
  if (!(c.optim.beta1 >= 0.0 && c.optim.beta1 < 1.0) || !(c.optim.beta2 >= 0.0 && c.optim.beta2 < 1.0))
    fail("optimizer betas must lie in [0, 1)");
  if (!(c.optim.eps > 0.0)) fail("optim.eps must be positive");
  if (c.dims.struct_dim == 0 || c.dims.modal_dim == 0 || c.dims.heads == 0 || c.dims.gat_layers == 0)
    fail("model dimensions, heads and layers must be positive");
  if (!(c.dims.dropout >= 0.0 && c.dims.dropout < 1.0)) fail("model.dropout must lie in [0, 1)");
  if (c.iter_enabled && (c.iter_every == 0 || c.iter_confirm_rounds == 0))
    fail("iter.every and iter.confirm_rounds must be positive");
}

std::string EvalRecord::to_json_line() const {
  json j;
  j["epoch"] = epoch;
  j["loss"] = loss;
  j["icl_joint"] = icl_joint;
  j["icl"] = optional_array(icl);
  j["ial"] = optional_array(ial);
  json a = json::object(), b = json::object();
  for (auto m : kAllModalities) {
    if (alpha[index(m)] == 0.0) continue;
    a[std::string(modality_name(m))] = alpha[index(m)];
    b[std::string(modality_name(m))] = beta[index(m)];
  }
  j["alpha"] = a;
  j["beta"] = b;
  j["dev_h1"] = dev_h1 ? json(*dev_h1) : json(nullptr);
  j["dev_mrr"] = dev_mrr ? json(*dev_mrr) : json(nullptr);
  j["dev_margin"] = dev_margin ? json(*dev_margin) : json(nullptr);
  j["pseudo_seeds"] = pseudo_seeds;
  return j.dump();
}

std::string TrainLog::to_jsonl() const {
  std::string out;
  for (const auto& r : records) out += r.to_json_line() + "\n";
  return out;
}

std::vector<BatchPairs> make_batches(std::span<const EntityPair> pool, std::size_t batch_size,
                                     std::mt19937_64& rng) {
  if (batch_size < 2) throw ContractError("batch size must be at least 2");
  if (pool.size() < 2) throw ContractError("at least two seed pairs are needed to form a batch");
  std::vector<EntityPair> order(pool.begin(), pool.end());
  shuffle_in_place(order, rng);

  std::vector<std::vector<EntityPair>> groups;
  std::deque<EntityPair> queue(order.begin(), order.end());
  while (!queue.empty()) {
    std::vector<EntityPair> batch, deferred;
    Used used;
    while (!queue.empty() && batch.size() < batch_size) {
      auto p = queue.front();
      queue.pop_front();
      if (used.clash(p)) {
        deferred.push_back(p);
      } else {
        used.add(p);
        batch.push_back(p);
      }
    }
    for (auto it = deferred.rbegin(); it != deferred.rend(); ++it) queue.push_front(*it);
    groups.push_back(std::move(batch));
  }

  std::vector<BatchPairs> out;
  for (auto& g : groups) {
    if (g.size() < 2 && !out.empty()) {
      auto& prev = out.back();
      Used used;
      for (std::size_t i = 0; i < prev.size(); ++i) used.add({prev.left_ids[i], prev.right_ids[i]});
      for (const auto& p : g) {
        if (used.clash(p)) continue;
        used.add(p);
        prev.left_ids.push_back(p.first);
        prev.right_ids.push_back(p.second);
      }
      continue;
    }
    BatchPairs b;
    for (const auto& p : g) {
      b.left_ids.push_back(p.first);
      b.right_ids.push_back(p.second);
    }
    out.push_back(std::move(b));
  }
  if (!out.empty() && out.front().size() < 2) out.erase(out.begin());
  return out;
}

std::vector<EntityPair> mutual_nearest(std::span<const double> sim, std::size_t rows,
                                       std::size_t cols) {
  if (sim.size() != rows * cols) throw DimensionError("similarity matrix size mismatch");
  if (rows == 0 || cols == 0) return {};
  std::vector<std::size_t> row_best(rows, 0), col_best(cols, 0);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 1; j < cols; ++j)
      if (sim[i * cols + j] > sim[i * cols + row_best[i]]) row_best[i] = j;
  }
  for (std::size_t j = 0; j < cols; ++j) {
    for (std::size_t i = 1; i < rows; ++i)
      if (sim[i * cols + j] > sim[col_best[j] * cols + j]) col_best[j] = i;
  }
  std::vector<EntityPair> out;
  for (std::size_t i = 0; i < rows; ++i)
    if (col_best[row_best[i]] == i) out.emplace_back(i, row_best[i]);
  return out;
}

std::vector<EntityPair> propose_pseudo_seeds(const Tensor& joint, std::size_t n1,
                                             std::span<const std::size_t> pool1,
                                             std::span<const std::size_t> pool2) {
  if (pool1.empty() || pool2.empty()) return {};
  std::vector<std::size_t> rows2(pool2.begin(), pool2.end());
  for (auto& r : rows2) r += n1;
  const auto sim = cosine_matrix(joint.data(), joint.cols(), pool1, rows2);
  auto local = mutual_nearest(sim, pool1.size(), pool2.size());
  for (auto& [a, b] : local) {
    a = pool1[a];
    b = pool2[b];
  }
  return local;
}

std::vector<EntityPair> unsupervised_seed_init(const FeatureBundle& f, UnsupervisedMode mode,
                                               std::size_t max_seeds) {
  if (mode == UnsupervisedMode::Off) throw ContractError("unsupervised seed init needs a mode");
  const Tensor& u = mode == UnsupervisedMode::Name ? f.u_name : f.u_img;
  std::vector<std::size_t> rows1, rows2;
  for (std::size_t i = 0; i < f.n1; ++i)
    if (mode == UnsupervisedMode::Name || f.img_mask[i]) rows1.push_back(i);
  for (std::size_t j = 0; j < f.n2; ++j)
    if (mode == UnsupervisedMode::Name || f.img_mask[f.n1 + j]) rows2.push_back(f.n1 + j);
  if (rows1.empty() || rows2.empty()) {
    throw BootstrapError(std::string("no entities with usable ") +
                         (mode == UnsupervisedMode::Name ? "names" : "images") +
                         " on one side");
  }
  const auto sim = cosine_matrix(u.data(), u.cols(), rows1, rows2);
  auto local = mutual_nearest(sim, rows1.size(), rows2.size());
  std::stable_sort(local.begin(), local.end(), [&](const EntityPair& x, const EntityPair& y) {
    return sim[x.first * rows2.size() + x.second] > sim[y.first * rows2.size() + y.second];
  });
  if (max_seeds > 0 && local.size() > max_seeds) local.resize(max_seeds);
  for (auto& [a, b] : local) {
    a = rows1[a];
    b = rows2[b] - f.n1;
  }
  return local;
}

TrainResult train(const TrainConfig& config, const KgPair& pair, const FeatureBundle& features) {
  validate(config);
  const std::size_t n1 = features.n1, n2 = features.n2;
  const bool unsupervised = config.unsupervised != UnsupervisedMode::Off;

  TrainResult result;
  std::vector<EntityPair> pool;
  if (unsupervised) {
    result.pseudo_seeds = unsupervised_seed_init(features, config.unsupervised, config.max_seeds);
    pool = result.pseudo_seeds;
  } else {
    pool = pair.train_seeds;
  }
  if (pool.size() < 2) {
    throw ValidationError("training needs at least two seed pairs, got " +
                          std::to_string(pool.size()));
  }

  ModelParams params = init_params(config.dims, features, config.seed);
  AdamW optimizer(params.all(), config.optim);
  std::mt19937_64 batch_rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  std::mt19937_64 dropout_rng(config.seed ^ 0xc2b2ae3d27d4eb4fULL);
  const auto edges = make_edges(features.adjacency);

  // Dev ranking only sees the other graph's held-out entities.
  const bool track_dev = !unsupervised && !pair.dev_seeds.empty();
  std::vector<std::size_t> dev_candidates;
  if (track_dev) {
    std::set<std::size_t> c;
    for (const auto& p : pair.dev_seeds) c.insert(p.second);
    for (const auto& p : pair.test_pairs) c.insert(p.second);
    dev_candidates.assign(c.begin(), c.end());
  }

  std::set<std::size_t> taken1, taken2;
  auto take = [&](const EntityPair& p) {
    taken1.insert(p.first);
    taken2.insert(p.second);
  };
  for (const auto& p : pool) take(p);
  if (!unsupervised)
    for (const auto& p : pair.dev_seeds) take(p);
  std::map<EntityPair, std::size_t> streak;

  std::optional<ModelParams> best;
  double best_mrr = -1.0, best_h1 = -1.0, best_margin = -3.0;
  std::size_t bad_evals = 0;
  std::optional<EvalRecord> last_finite;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    auto batches = make_batches(pool, config.batch_size, batch_rng);
    double loss_sum = 0.0;
    LossBreakdown last;
    for (const auto& batch : batches) {
      optimizer.zero_grad();
      try {
        auto emb = forward_all(params, features, edges, config.dims, config.modalities,
                               config.dims.dropout > 0.0 ? &dropout_rng : nullptr);
        last = total_loss(batch_embeddings(emb, batch, n1, config.modalities), params.uncert_icl,
                          params.uncert_ial, config.modalities, config.loss);
      } catch (const NumericError& e) {
        throw TrainingError("training diverged at epoch " + std::to_string(epoch) + ": " +
                                e.what(),
                            last_finite);
      }
      last.total.backward();
      optimizer.step();
      loss_sum += last.total_value();
    }
    const double epoch_loss = loss_sum / static_cast<double>(batches.size());
    result.log.epoch_losses.push_back(epoch_loss);
    result.log.epochs_run = epoch;

    const bool propose = config.iter_enabled && epoch >= config.iter_start_epoch &&
                         (epoch - config.iter_start_epoch) % config.iter_every == 0;
    const bool evaluate_now =
        (config.eval_every > 0 && epoch % config.eval_every == 0) || epoch == config.epochs;
    if (!propose && !evaluate_now) continue;

    ModalEmbeddings emb;
    {
      NoGradGuard no_grad;
      emb = forward_all(params, features, edges, config.dims, config.modalities);
    }

    if (propose) {
      std::vector<std::size_t> u1, u2;
      for (std::size_t i = 0; i < n1; ++i)
        if (!taken1.count(i)) u1.push_back(i);
      for (std::size_t j = 0; j < n2; ++j)
        if (!taken2.count(j)) u2.push_back(j);
      std::map<EntityPair, std::size_t> next;
      for (const auto& p : propose_pseudo_seeds(emb.joint, n1, u1, u2)) {
        auto it = streak.find(p);
        const std::size_t rounds = (it == streak.end() ? 0 : it->second) + 1;
        if (rounds >= config.iter_confirm_rounds) {
          pool.push_back(p);
          result.pseudo_seeds.push_back(p);
          take(p);
        } else {
          next.emplace(p, rounds);
        }
      }
      streak = std::move(next);
    }

    if (!evaluate_now) continue;
    EvalRecord rec;
    rec.epoch = epoch;
    rec.loss = epoch_loss;
    rec.icl_joint = last.icl_joint;
    rec.icl = last.icl;
    rec.ial = last.ial;
    rec.alpha = last.alpha;
    rec.beta = last.beta;
    rec.pseudo_seeds = result.pseudo_seeds.size();
    bool stop = false;
    if (track_dev) {
      const auto ranks =
          rank_counterparts(emb.joint, n1, pair.dev_seeds, Direction::Forward, dev_candidates);
      const auto m = hits_mrr(ranks);
      rec.dev_h1 = m.hits_at.at(1);
      rec.dev_mrr = m.mrr;
      const double margin =
          mean_margin(emb.joint, n1, pair.dev_seeds, Direction::Forward, dev_candidates);
      rec.dev_margin = margin;
      const bool better =
          m.mrr > best_mrr ||
          (m.mrr == best_mrr &&
           (m.hits_at.at(1) > best_h1 || (m.hits_at.at(1) == best_h1 && margin > best_margin)));
      if (better) {
        best_mrr = m.mrr;
        best_h1 = m.hits_at.at(1);
        best_margin = margin;
        best = params.clone();
        result.log.best_epoch = epoch;
        bad_evals = 0;
      } else if (++bad_evals >= config.patience && config.patience > 0) {
        stop = true;
      }
    }
    result.log.records.push_back(rec);
    last_finite = rec;
    if (stop) {
      result.log.stopped_early = true;
      break;
    }
  }

  if (best) {
    result.params = std::move(*best);
  } else {
    result.params = std::move(params);
    result.log.best_epoch = result.log.epochs_run;
  }
  return result;
}

}  // namespace mmkg
