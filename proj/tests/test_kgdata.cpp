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

#include <doctest.h>

#include <cmath>
#include <fstream>
#include <set>

#include "mmkg/errors.hpp"
#include "mmkg/kgdata.hpp"
#include "mmkg/synth.hpp"
#include "test_util.hpp"

using namespace mmkg;
using mmkg::test::TempDir;

namespace {

KgPair tiny_pair() {
  KgPair p;
  for (Kg* g : {&p.g1, &p.g2}) {
    g->names = {"alpha", "beta"};
    g->rel_triples = {{0, 0, 1}};
    g->attr_pairs = {{1, 0}};
    g->n_relations = 1;
    g->n_attributes = 1;
  }
  p.reference = {{0, 1}, {1, 0}};
  return p;
}

std::size_t line_count(const std::filesystem::path& f) {
  std::ifstream in(f);
  std::size_t n = 0;
  std::string line;
  while (std::getline(in, line)) ++n;
  return n;
}

}  // namespace

TEST_CASE("dataset round trip") {
  TempDir dir("rt");
  auto p = tiny_pair();
  write_kg_pair(p, dir.path());
  auto q = load_kg_pair(dir.path(), {.train_ratio = 0.5, .dev_fraction = 0.0, .seed = 1});
  CHECK(q.g1.names == p.g1.names);
  CHECK(q.g2.rel_triples == p.g2.rel_triples);
  CHECK(q.g1.attr_pairs == p.g1.attr_pairs);
  CHECK(q.reference == p.reference);
  CHECK(q.train_seeds.size() == 1);
  CHECK(q.test_pairs.size() == 1);
  CHECK(std::none_of(q.g1.image_mask.begin(), q.g1.image_mask.end(), [](bool b) { return b; }));
}

TEST_CASE("loading reports the offending file") {
  TempDir dir("bad");
  write_kg_pair(tiny_pair(), dir.path());
  SUBCASE("missing entity file") {
    std::filesystem::remove(dir / "ent_ids_1");
    try {
      load_kg_pair(dir.path());
      FAIL("expected an error");
    } catch (const IngestError& e) {
      CHECK(std::string(e.what()).find("ent_ids_1") != std::string::npos);
    }
  }
  SUBCASE("unknown id in the reference") {
    std::ofstream(dir / "ref_ent_ids", std::ios::app) << "0\t7\n";
    CHECK_THROWS_AS(load_kg_pair(dir.path()), ValidationError);
  }
  SUBCASE("malformed triple line names the line") {
    std::ofstream(dir / "triples_2", std::ios::app) << "0\tx\n";
    try {
      load_kg_pair(dir.path());
      FAIL("expected an error");
    } catch (const ParseError& e) {
      CHECK(std::string(e.what()).find(":2") != std::string::npos);
    }
  }
}

TEST_CASE("loading keeps every record") {
  TempDir dir("counts");
  SynthSpec spec;
  spec.n_entities = 30;
  synth_write(spec, 3, dir.path());
  auto p = load_kg_pair(dir.path());
  CHECK(p.g1.rel_triples.size() == line_count(dir / "triples_1"));
  CHECK(p.g2.attr_pairs.size() == line_count(dir / "attrs_2"));
  CHECK(p.reference.size() == line_count(dir / "ref_ent_ids"));
  CHECK(p.g1.n_entities() == line_count(dir / "ent_ids_1"));
}

TEST_CASE("bag-of-words presence") {
  Kg g;
  g.names = {"a", "b", "c"};
  g.n_relations = 4;
  g.n_attributes = 2;
  g.rel_triples = {{0, 0, 1}, {2, 2, 0}, {2, 2, 0}};
  g.attr_pairs = {{1, 1}};
  auto bow = build_bow_features(g);
  CHECK(std::vector<double>(bow.u_rel.row(0).begin(), bow.u_rel.row(0).end()) ==
        std::vector<double>{1, 0, 1, 0});
  for (double v : bow.u_attr.row(0)) CHECK(v == 0.0);
  for (double v : bow.u_rel.values) CHECK((v == 0.0 || v == 1.0));
}

TEST_CASE("name features") {
  SUBCASE("one bigram is a unit one-hot") {
    std::vector<std::string> names{"ab"};
    auto m = build_name_features(names, nullptr, 4096);
    CHECK(m.cols == 4096);
    const auto slot = fnv1a("ab") % 4096;
    for (std::size_t c = 0; c < m.cols; ++c) CHECK(m.row(0)[c] == (c == slot ? 1.0 : 0.0));
  }
  SUBCASE("identical names give identical rows; case is folded") {
    std::vector<std::string> names{"Paris Texas", "paris texas", "lyon"};
    auto m = build_name_features(names, nullptr, 64);
    CHECK(std::equal(m.row(0).begin(), m.row(0).end(), m.row(1).begin()));
    CHECK_FALSE(std::equal(m.row(0).begin(), m.row(0).end(), m.row(2).begin()));
  }
  SUBCASE("single known token copies its vector") {
    WordVectors wv{2, {{"paris", {0.25, -1.5}}, {"rome", {1.0, 1.0}}}};
    std::vector<std::string> names{"paris", "nowhere"};
    auto m = build_name_features(names, &wv, 8);
    CHECK(m.cols == 10);
    CHECK(m.row(0)[0] == 0.25);
    CHECK(m.row(0)[1] == -1.5);
    CHECK(m.row(1)[0] == 0.0);
    CHECK(m.row(1)[1] == 0.0);
  }
}

TEST_CASE("image features and the presence mask") {
  auto a = load_image_features(std::nullopt, 5, 3, 17);
  auto b = load_image_features(std::nullopt, 5, 3, 17);
  CHECK(a.rows == b.rows);
  CHECK(std::none_of(a.mask.begin(), a.mask.end(), [](bool v) { return v; }));
  auto wide = load_image_features(std::nullopt, 5, 4, 17);
  CHECK(wide.rows.cols == 4);
  CHECK(wide.rows != a.rows);

  TempDir dir("img");
  std::ofstream(dir / "img") << "0\t1 2\n1\t3 4\n";
  auto full = load_image_features(dir / "img", 2, 0, 1);
  CHECK(full.mask == std::vector<bool>{true, true});
  CHECK(full.rows.row(1)[1] == 4.0);
  std::ofstream(dir / "ragged") << "0\t1 2\n1\t3\n";
  CHECK_THROWS_AS(load_image_features(dir / "ragged", 2, 0, 1), ParseError);
}

TEST_CASE("alignment splits") {
  std::vector<EntityPair> pairs;
  for (std::size_t i = 0; i < 10; ++i) pairs.emplace_back(i, 9 - i);
  auto s = split_alignments(pairs, 0.3, 0.0, 4);
  CHECK(s.train.size() == 3);
  CHECK(s.dev.empty());
  CHECK(s.test.size() == 7);
  auto d = split_alignments(pairs, 0.3, 0.1, 4);
  CHECK(d.train.size() + d.dev.size() == 3);
  CHECK(d.dev.size() <= 1);
  auto again = split_alignments(pairs, 0.3, 0.1, 4);
  CHECK(again.train == d.train);
  CHECK(again.test == d.test);

  std::vector<EntityPair> many;
  for (std::size_t i = 0; i < 100; ++i) many.emplace_back(i, i);
  for (double r : {0.2, 0.5, 0.8}) {
    auto x = split_alignments(many, r, 0.1, 2);
    CHECK(x.train.size() + x.dev.size() == static_cast<std::size_t>(std::lround(r * 100)));
    std::set<EntityPair> all(x.train.begin(), x.train.end());
    all.insert(x.dev.begin(), x.dev.end());
    all.insert(x.test.begin(), x.test.end());
    CHECK(all.size() == 100);
  }
  CHECK_THROWS_AS(split_alignments({}, 0.3, 0.1, 1), ValidationError);
  CHECK_THROWS_AS(split_alignments(pairs, 1.0, 0.1, 1), ValidationError);
}

TEST_CASE("adjacency has one self-loop per entity") {
  SynthSpec spec;
  spec.n_entities = 25;
  auto p = synth_generate(spec, 8);
  auto adj = build_adjacency(p.g1);
  REQUIRE(adj.size() == 25);
  for (std::size_t i = 0; i < adj.size(); ++i) {
    CHECK(std::count(adj[i].begin(), adj[i].end(), i) == 1);
    CHECK(std::is_sorted(adj[i].begin(), adj[i].end()));
  }
}

TEST_CASE("synthetic generator") {
  SynthSpec spec;
  SUBCASE("triple count follows the edge factor") {
    auto p = synth_generate(spec, 1);
    CHECK(p.g1.rel_triples.size() == 1000);
    CHECK(p.g2.rel_triples.size() == 1000);
    CHECK(p.reference.size() == 200);
  }
  SUBCASE("noise-free names match exactly on the permutation only") {
    spec.n_entities = 60;
    spec.feature_noise = 0.0;
    spec.p_drop = 0.0;
    auto p = synth_generate(spec, 2);
    auto f = build_features(p);
    const auto u = f.u_name.data();
    const std::size_t w = f.u_name.cols();
    auto cosine = [&](std::size_t a, std::size_t b) {
      double ab = 0, aa = 0, bb = 0;
      for (std::size_t c = 0; c < w; ++c) {
        ab += u[a * w + c] * u[b * w + c];
        aa += u[a * w + c] * u[a * w + c];
        bb += u[b * w + c] * u[b * w + c];
      }
      return ab / std::sqrt(aa * bb);
    };
    for (const auto& [a, b] : p.reference) {
      CHECK(cosine(a, f.n1 + b) == doctest::Approx(1.0).epsilon(1e-12));
      for (std::size_t other = 0; other < f.n2; other += 7)
        if (other != b) CHECK(cosine(a, f.n1 + other) < 1.0 - 1e-9);
    }
  }
  SUBCASE("seeded and byte-identical") {
    TempDir a("sa"), b("sb");
    synth_write(spec, 5, a.path());
    synth_write(spec, 5, b.path());
    for (const auto& e : std::filesystem::directory_iterator(a.path())) {
      std::ifstream fa(e.path()), fb(b / e.path().filename().string());
      std::string sa((std::istreambuf_iterator<char>(fa)), {}), sb((std::istreambuf_iterator<char>(fb)), {});
      CHECK(sa == sb);
    }
  }
  SUBCASE("feature knobs leave the graphs alone") {
    auto base = synth_generate(spec, 4);
    spec.latent_dim = 3;
    spec.feature_noise = 0.5;
    auto other = synth_generate(spec, 4);
    CHECK(base.g2.rel_triples == other.g2.rel_triples);
    CHECK(base.reference == other.reference);
  }
  SUBCASE("infeasible specs") {
    spec.n_entities = 1;
    CHECK_THROWS_AS(validate(spec), ValidationError);
    CHECK_THROWS_AS(parse_synth_spec(R"({"n_entities": 10, "bogus": 1})"), ConfigError);
  }
}
