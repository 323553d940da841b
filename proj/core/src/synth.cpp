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

#include "mmkg/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <tuple>

#include <json.hpp>

#include "mmkg/errors.hpp"

namespace mmkg {

namespace {

using json = nlohmann::json;

/// Equal-probability bin edges of the standard normal.
std::vector<double> normal_quantiles(std::size_t levels) {
  std::vector<double> edges;
  for (std::size_t j = 1; j < levels; ++j) {
    const double p = static_cast<double>(j) / static_cast<double>(levels);
    double lo = -10.0, hi = 10.0;
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (lo + hi);
      (0.5 * std::erfc(-mid / std::sqrt(2.0)) < p ? lo : hi) = mid;
    }
    edges.push_back(0.5 * (lo + hi));
  }
  return edges;
}

std::string render_name(std::span<const double> latent, const SynthSpec& spec,
                        const std::vector<double>& edges) {
  std::string name;
  for (std::size_t t = 0; t < spec.name_tokens; ++t) {
    if (t) name += ' ';
    for (std::size_t c = 0; c < spec.token_length; ++c) {
      const std::size_t k = (t * spec.token_length + c) % spec.latent_dim;
      const auto level = static_cast<std::size_t>(
          std::upper_bound(edges.begin(), edges.end(), latent[k]) - edges.begin());
      name += static_cast<char>('a' + (k * spec.name_levels + level) % 26);
    }
  }
  return name;
}

}  // namespace

void validate(const SynthSpec& s) {
  auto fail = [](const std::string& what) { throw ValidationError("synthetic spec: " + what); };
  if (s.n_entities < 4) fail("n_entities must be at least 4");
  if (s.n_relations < 1) fail("n_relations must be at least 1");
  if (!(s.edge_factor >= 1.0)) fail("edge_factor must be at least 1");
  if (!(s.feature_noise >= 0.0)) fail("feature_noise must be non-negative");
  if (!(s.p_drop >= 0.0 && s.p_drop <= 1.0)) fail("p_drop must lie in [0, 1]");
  if (!(s.p_rewire >= 0.0 && s.p_rewire <= 1.0)) fail("p_rewire must lie in [0, 1]");
  if (!(s.image_coverage >= 0.0 && s.image_coverage <= 1.0)) fail("image_coverage must lie in [0, 1]");
  if (s.latent_dim < 1 || s.image_dim < 1) fail("latent_dim and image_dim must be positive");
  if (s.name_tokens < 1 || s.token_length < 1) fail("names need at least one letter");
  if (s.name_levels < 2) fail("name_levels must be at least 2");
  if (s.attrs_per_entity > s.n_attributes) fail("attrs_per_entity exceeds n_attributes");
  const double max_triples = static_cast<double>(s.n_entities) *
                             static_cast<double>(s.n_entities - 1) *
                             static_cast<double>(s.n_relations);
  if (s.edge_factor * static_cast<double>(s.n_entities) > 0.5 * max_triples) {
    fail("edge_factor too large for the number of entities and relations");
  }
}

SynthSpec parse_synth_spec(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("synthetic spec is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("synthetic spec must be a JSON object");
  SynthSpec s;
  auto take = [&](const char* key, auto& field) {
    if (!j.contains(key)) return;
    try {
      j.at(key).get_to(field);
    } catch (const json::exception&) {
      throw ConfigError(std::string("synthetic spec: bad value for '") + key + "'");
    }
  };
  static const std::set<std::string> known = {
      "n_entities", "n_relations", "n_attributes", "edge_factor", "attrs_per_entity",
      "feature_noise", "p_drop", "p_rewire", "latent_dim", "image_dim", "image_coverage",
      "name_tokens", "token_length", "name_levels", "word_dim"};
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw ConfigError("synthetic spec: unknown key '" + key + "'");
  }
  take("n_entities", s.n_entities);
  take("n_relations", s.n_relations);
  take("n_attributes", s.n_attributes);
  take("edge_factor", s.edge_factor);
  take("attrs_per_entity", s.attrs_per_entity);
  take("feature_noise", s.feature_noise);
  take("p_drop", s.p_drop);
  take("p_rewire", s.p_rewire);
  take("latent_dim", s.latent_dim);
  take("image_dim", s.image_dim);
  take("image_coverage", s.image_coverage);
  take("name_tokens", s.name_tokens);
  take("token_length", s.token_length);
  take("name_levels", s.name_levels);
  take("word_dim", s.word_dim);
  return s;
}

std::string to_json(const SynthSpec& s) {
  json j = {{"n_entities", s.n_entities},     {"n_relations", s.n_relations},
            {"n_attributes", s.n_attributes}, {"edge_factor", s.edge_factor},
            {"attrs_per_entity", s.attrs_per_entity},
            {"feature_noise", s.feature_noise}, {"p_drop", s.p_drop},
            {"p_rewire", s.p_rewire},         {"latent_dim", s.latent_dim},
            {"image_dim", s.image_dim},       {"image_coverage", s.image_coverage},
            {"name_tokens", s.name_tokens},   {"token_length", s.token_length},
            {"name_levels", s.name_levels},   {"word_dim", s.word_dim}};
  return j.dump(2);
}

KgPair synth_generate(const SynthSpec& spec, std::uint64_t rng_seed) {
  validate(spec);
  const std::size_t n = spec.n_entities;
  std::mt19937_64 rng(rng_seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto below = [&](std::size_t k) { return static_cast<std::size_t>(rng() % k); };

  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[below(i)]);

  KgPair pair;
  Kg& g1 = pair.g1;
  Kg& g2 = pair.g2;
  g1.n_relations = g2.n_relations = spec.n_relations;
  g1.n_attributes = g2.n_attributes = spec.n_attributes;

  const auto n_triples =
      static_cast<std::size_t>(std::llround(spec.edge_factor * static_cast<double>(n)));
  std::set<std::tuple<std::size_t, std::size_t, std::size_t>> seen;
  while (g1.rel_triples.size() < n_triples) {
    const std::size_t h = below(n), r = below(spec.n_relations), t = below(n);
    if (h == t || !seen.emplace(h, r, t).second) continue;
    g1.rel_triples.push_back({h, r, t});
  }
  for (const auto& t : g1.rel_triples) {
    std::size_t r = t.relation, tail = t.tail;
    if (unit(rng) < spec.p_drop) r = below(spec.n_relations);
    if (unit(rng) < spec.p_rewire) {
      do tail = below(n);
      while (tail == t.head);
    }
    g2.rel_triples.push_back({perm[t.head], r, perm[tail]});
  }

  for (std::size_t i = 0; i < n; ++i) {
    std::set<std::size_t> attrs;
    while (attrs.size() < spec.attrs_per_entity) attrs.insert(below(spec.n_attributes));
    std::set<std::size_t> copied;
    for (auto a : attrs) {
      g1.attr_pairs.push_back({i, a});
      copied.insert(unit(rng) < spec.p_drop ? below(spec.n_attributes) : a);
    }
    for (auto a : copied) g2.attr_pairs.push_back({perm[i], a});
  }
  std::sort(g2.attr_pairs.begin(), g2.attr_pairs.end(), [](const auto& x, const auto& y) {
    return std::tie(x.entity, x.attribute) < std::tie(y.entity, y.attribute);
  });

  // Features draw from their own stream so feature knobs leave the graphs
  // untouched. Each side renders names and images from its own noisy view
  // of the latent.
  rng.seed(rng_seed ^ 0x5851f42d4c957f2dULL);
  normal.reset();
  DenseMatrix latent{n, spec.latent_dim, std::vector<double>(n * spec.latent_dim)};
  for (auto& v : latent.values) v = normal(rng);
  const auto edges = normal_quantiles(spec.name_levels);
  DenseMatrix projection{spec.image_dim, spec.latent_dim,
                         std::vector<double>(spec.image_dim * spec.latent_dim)};
  for (auto& v : projection.values) v = normal(rng) / std::sqrt(static_cast<double>(spec.latent_dim));

  std::set<std::string> tokens;
  for (int side = 0; side < 2; ++side) {
    Kg& kg = side == 0 ? g1 : g2;
    kg.names.assign(n, {});
    kg.image_rows = {n, spec.image_dim, std::vector<double>(n * spec.image_dim)};
    kg.image_mask.assign(n, false);
    std::vector<double> view(spec.latent_dim);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t id = side == 0 ? i : perm[i];
      auto z = latent.row(i);
      for (std::size_t k = 0; k < view.size(); ++k) view[k] = z[k] + spec.feature_noise * normal(rng);
      kg.names[id] = render_name(view, spec, edges);
      for (std::size_t k = 0; k < view.size(); ++k) view[k] = z[k] + spec.feature_noise * normal(rng);
      auto img = kg.image_rows.row(id);
      for (std::size_t r = 0; r < spec.image_dim; ++r) {
        double acc = 0.0;
        for (std::size_t k = 0; k < spec.latent_dim; ++k) acc += projection.values[r * spec.latent_dim + k] * view[k];
        img[r] = acc;
      }
      kg.image_mask[id] = unit(rng) < spec.image_coverage;
    }
    // Entities without an image get unit-variance noise, as the loader would.
    for (std::size_t id = 0; id < n; ++id) {
      if (kg.image_mask[id]) continue;
      for (auto& v : kg.image_rows.row(id)) v = normal(rng);
    }
    for (const auto& name : kg.names) {
      std::size_t start = 0;
      while (start <= name.size()) {
        auto end = name.find(' ', start);
        if (end == std::string::npos) end = name.size();
        if (end > start) tokens.insert(name.substr(start, end - start));
        start = end + 1;
      }
    }
  }

  if (spec.word_dim > 0) {
    WordVectors wv;
    wv.dim = spec.word_dim;
    for (const auto& tok : tokens) {
      std::mt19937_64 tok_rng(fnv1a(tok) ^ rng_seed);
      std::normal_distribution<double> tok_normal(0.0, 1.0);
      std::vector<double> v(spec.word_dim);
      for (auto& x : v) x = tok_normal(tok_rng);
      wv.table.emplace(tok, std::move(v));
    }
    pair.word_vectors = std::move(wv);
  }

  for (std::size_t i = 0; i < n; ++i) pair.reference.emplace_back(i, perm[i]);
  return pair;
}

void synth_write(const SynthSpec& spec, std::uint64_t rng_seed, const std::filesystem::path& dir) {
  write_kg_pair(synth_generate(spec, rng_seed), dir);
}

}  // namespace mmkg
