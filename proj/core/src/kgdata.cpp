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

#include "mmkg/kgdata.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "mmkg/errors.hpp"

namespace mmkg {

namespace fs = std::filesystem;

namespace {

struct LineReader {
  std::ifstream in;
  std::string file;
  std::size_t line_no = 0;

  explicit LineReader(const fs::path& path) : in(path), file(path.filename().string()) {
    if (!in) throw IngestError("cannot open " + path.string());
  }

  bool next(std::string& line) {
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!line.empty()) return true;
    }
    return false;
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw ParseError(file + ":" + std::to_string(line_no) + ": " + what);
  }
};

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = s.find(sep, start);
    out.push_back(s.substr(start, pos == std::string_view::npos ? s.npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ' && s[j] != '\t') ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

std::size_t parse_id(const LineReader& r, std::string_view field) {
  std::size_t v = 0;
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc() || ptr != field.data() + field.size()) {
    r.fail("expected a non-negative integer, got '" + std::string(field) + "'");
  }
  return v;
}

double parse_double(const LineReader& r, std::string_view field) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc() || ptr != field.data() + field.size() || !std::isfinite(v)) {
    r.fail("expected a finite number, got '" + std::string(field) + "'");
  }
  return v;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, ptr);
}

std::vector<std::string> read_names(const fs::path& path) {
  LineReader r(path);
  std::vector<std::pair<std::size_t, std::string>> rows;
  std::string line;
  while (r.next(line)) {
    auto tab = line.find('\t');
    std::string_view id_field = std::string_view(line).substr(0, tab);
    std::string name = tab == std::string::npos ? std::string() : line.substr(tab + 1);
    rows.emplace_back(parse_id(r, id_field), std::move(name));
  }
  std::vector<std::string> names(rows.size());
  std::vector<bool> seen(rows.size(), false);
  for (auto& [id, name] : rows) {
    if (id >= rows.size() || seen[id]) {
      throw ValidationError(r.file + ": entity ids must be dense and unique from 0 (bad id " +
                            std::to_string(id) + ")");
    }
    seen[id] = true;
    names[id] = std::move(name);
  }
  return names;
}

std::vector<Triple> read_triples(const fs::path& path) {
  LineReader r(path);
  std::vector<Triple> out;
  std::string line;
  while (r.next(line)) {
    auto f = split(line, '\t');
    if (f.size() != 3) r.fail("expected <head>\\t<rel>\\t<tail>");
    out.push_back({parse_id(r, f[0]), parse_id(r, f[1]), parse_id(r, f[2])});
  }
  return out;
}

std::vector<AttrPair> read_attrs(const fs::path& path) {
  LineReader r(path);
  std::vector<AttrPair> out;
  std::string line;
  while (r.next(line)) {
    auto f = split(line, '\t');
    if (f.size() != 2) r.fail("expected <entity>\\t<attribute>");
    out.push_back({parse_id(r, f[0]), parse_id(r, f[1])});
  }
  return out;
}

std::vector<EntityPair> read_pairs(const fs::path& path) {
  LineReader r(path);
  std::vector<EntityPair> out;
  std::string line;
  while (r.next(line)) {
    auto f = split(line, '\t');
    if (f.size() != 2) r.fail("expected <id in g1>\\t<id in g2>");
    out.emplace_back(parse_id(r, f[0]), parse_id(r, f[1]));
  }
  return out;
}

Kg read_kg(const fs::path& dir, int side) {
  const std::string suffix = "_" + std::to_string(side);
  for (const char* stem : {"ent_ids", "triples", "attrs"}) {
    if (!fs::exists(dir / (stem + suffix))) {
      throw IngestError("missing dataset file " + (dir / (stem + suffix)).string());
    }
  }
  Kg kg;
  kg.names = read_names(dir / ("ent_ids" + suffix));
  kg.rel_triples = read_triples(dir / ("triples" + suffix));
  kg.attr_pairs = read_attrs(dir / ("attrs" + suffix));
  for (const auto& t : kg.rel_triples) kg.n_relations = std::max(kg.n_relations, t.relation + 1);
  for (const auto& a : kg.attr_pairs) kg.n_attributes = std::max(kg.n_attributes, a.attribute + 1);
  return kg;
}

void shuffle(std::vector<EntityPair>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng() % i]);
}

std::vector<std::string> utf8_codepoints(const std::string& s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t len = 1;
    if (c >= 0xF0) len = 4;
    else if (c >= 0xE0) len = 3;
    else if (c >= 0xC0) len = 2;
    len = std::min(len, s.size() - i);
    std::string cp = s.substr(i, len);
    if (len == 1 && c < 0x80) cp[0] = static_cast<char>(std::tolower(c));
    out.push_back(std::move(cp));
    i += len;
  }
  return out;
}

Tensor to_tensor(const DenseMatrix& m) {
  // Zero-width vocabularies become a single all-zero column.
  if (m.cols == 0) return Tensor::zeros({std::max<std::size_t>(m.rows, 1), 1});
  return Tensor::from_data({m.rows, m.cols}, m.values);
}

}  // namespace

void validate(const KgPair& pair) {
  for (const Kg* kg : {&pair.g1, &pair.g2}) {
    const std::string which = kg == &pair.g1 ? "g1" : "g2";
    const auto n = kg->n_entities();
    if (n == 0) throw ValidationError(which + " has no entities");
    for (const auto& t : kg->rel_triples) {
      if (t.head >= n || t.tail >= n || t.relation >= kg->n_relations) {
        throw ValidationError(which + " triple (" + std::to_string(t.head) + ", " +
                              std::to_string(t.relation) + ", " + std::to_string(t.tail) +
                              ") references an unknown id");
      }
    }
    for (const auto& a : kg->attr_pairs) {
      if (a.entity >= n || a.attribute >= kg->n_attributes) {
        throw ValidationError(which + " attribute incidence (" + std::to_string(a.entity) +
                              ", " + std::to_string(a.attribute) + ") references an unknown id");
      }
    }
    if (kg->image_mask.size() != n || kg->image_rows.rows != n) {
      throw ValidationError(which + " image features do not cover every entity");
    }
  }
  std::set<std::size_t> left, right;
  for (const auto& [a, b] : pair.reference) {
    if (a >= pair.g1.n_entities() || b >= pair.g2.n_entities()) {
      throw ValidationError("reference pair (" + std::to_string(a) + ", " + std::to_string(b) +
                            ") references an unknown entity");
    }
    if (!left.insert(a).second || !right.insert(b).second) {
      throw ValidationError("reference alignment is not one-to-one at (" + std::to_string(a) +
                            ", " + std::to_string(b) + ")");
    }
  }
}

WordVectors load_word_vectors(const fs::path& path) {
  LineReader r(path);
  WordVectors wv;
  std::string line;
  while (r.next(line)) {
    auto f = split_ws(line);
    if (f.size() < 2) r.fail("expected <token> <f1> ... <fD>");
    if (wv.dim == 0) wv.dim = f.size() - 1;
    if (f.size() - 1 != wv.dim) {
      r.fail("vector width " + std::to_string(f.size() - 1) + " differs from " +
             std::to_string(wv.dim));
    }
    std::vector<double> v;
    v.reserve(wv.dim);
    for (std::size_t k = 1; k < f.size(); ++k) v.push_back(parse_double(r, f[k]));
    wv.table.emplace(std::string(f[0]), std::move(v));
  }
  return wv;
}

ImageFeatures load_image_features(const std::optional<fs::path>& path, std::size_t n,
                                  std::size_t dim, std::uint64_t rng_seed) {
  std::vector<std::pair<std::size_t, std::vector<double>>> present;
  if (path) {
    LineReader r(*path);
    std::string line;
    while (r.next(line)) {
      auto tab = line.find('\t');
      if (tab == std::string::npos) r.fail("expected <entity>\\t<f1> ... <fD>");
      const auto id = parse_id(r, std::string_view(line).substr(0, tab));
      if (id >= n) {
        throw ValidationError(r.file + ":" + std::to_string(r.line_no) + ": entity " +
                              std::to_string(id) + " out of range");
      }
      auto f = split_ws(std::string_view(line).substr(tab + 1));
      if (dim == 0) dim = f.size();
      if (f.size() != dim || dim == 0) {
        r.fail("feature width " + std::to_string(f.size()) + " differs from " +
               std::to_string(dim));
      }
      std::vector<double> v;
      v.reserve(dim);
      for (auto field : f) v.push_back(parse_double(r, field));
      present.emplace_back(id, std::move(v));
    }
  }
  if (dim == 0) throw ValidationError("image feature width is unknown");
  ImageFeatures out;
  out.rows = {n, dim, std::vector<double>(n * dim)};
  out.mask.assign(n, false);
  std::mt19937_64 rng(rng_seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& v : out.rows.values) v = normal(rng);
  for (auto& [id, v] : present) {
    std::copy(v.begin(), v.end(), out.rows.row(id).begin());
    out.mask[id] = true;
  }
  return out;
}

KgPair load_kg_pair(const fs::path& dir, const LoadOptions& options) {
  if (!fs::is_directory(dir)) throw IngestError("dataset directory not found: " + dir.string());
  KgPair pair;
  pair.g1 = read_kg(dir, 1);
  pair.g2 = read_kg(dir, 2);
  if (!fs::exists(dir / "ref_ent_ids")) {
    throw IngestError("missing dataset file " + (dir / "ref_ent_ids").string());
  }
  pair.reference = read_pairs(dir / "ref_ent_ids");

  std::size_t image_dim = 0;
  std::array<std::optional<fs::path>, 2> image_files;
  for (int side = 0; side < 2; ++side) {
    auto p = dir / ("img_features_" + std::to_string(side + 1));
    if (fs::exists(p)) image_files[side] = p;
  }
  // Both sides must agree on the width; take it from whichever file exists.
  for (auto& f : image_files) {
    if (!f || image_dim) continue;
    LineReader r(*f);
    std::string line;
    if (r.next(line)) {
      auto tab = line.find('\t');
      if (tab != std::string::npos) image_dim = split_ws(std::string_view(line).substr(tab + 1)).size();
    }
  }
  if (image_dim == 0) image_dim = options.default_image_dim;
  for (int side = 0; side < 2; ++side) {
    Kg& kg = side == 0 ? pair.g1 : pair.g2;
    auto img = load_image_features(image_files[side], kg.n_entities(), image_dim,
                                   options.seed * 2 + static_cast<std::uint64_t>(side) + 1);
    kg.image_rows = std::move(img.rows);
    kg.image_mask = std::move(img.mask);
  }
  if (fs::exists(dir / "word_vectors.txt")) pair.word_vectors = load_word_vectors(dir / "word_vectors.txt");

  validate(pair);
  auto splits = split_alignments(pair.reference, options.train_ratio, options.dev_fraction,
                                 options.seed);
  pair.train_seeds = std::move(splits.train);
  pair.dev_seeds = std::move(splits.dev);
  pair.test_pairs = std::move(splits.test);
  return pair;
}

void write_kg_pair(const KgPair& pair, const fs::path& dir) {
  fs::create_directories(dir);
  auto open = [&](const std::string& name) {
    std::ofstream out(dir / name, std::ios::binary);
    if (!out) throw IngestError("cannot write " + (dir / name).string());
    return out;
  };
  for (int side = 1; side <= 2; ++side) {
    const Kg& kg = side == 1 ? pair.g1 : pair.g2;
    const std::string sfx = "_" + std::to_string(side);
    {
      auto out = open("ent_ids" + sfx);
      for (std::size_t i = 0; i < kg.names.size(); ++i) out << i << '\t' << kg.names[i] << '\n';
    }
    {
      auto out = open("triples" + sfx);
      for (const auto& t : kg.rel_triples) out << t.head << '\t' << t.relation << '\t' << t.tail << '\n';
    }
    {
      auto out = open("attrs" + sfx);
      for (const auto& a : kg.attr_pairs) out << a.entity << '\t' << a.attribute << '\n';
    }
    const bool any_image = std::find(kg.image_mask.begin(), kg.image_mask.end(), true) !=
                           kg.image_mask.end();
    if (any_image) {
      auto out = open("img_features" + sfx);
      for (std::size_t i = 0; i < kg.n_entities(); ++i) {
        if (!kg.image_mask[i]) continue;
        out << i << '\t';
        auto row = kg.image_rows.row(i);
        for (std::size_t k = 0; k < row.size(); ++k) out << (k ? " " : "") << format_double(row[k]);
        out << '\n';
      }
    }
  }
  {
    auto out = open("ref_ent_ids");
    for (const auto& [a, b] : pair.reference) out << a << '\t' << b << '\n';
  }
  if (pair.word_vectors) {
    auto out = open("word_vectors.txt");
    for (const auto& [token, v] : pair.word_vectors->table) {
      out << token;
      for (double x : v) out << ' ' << format_double(x);
      out << '\n';
    }
  }
}

BowFeatures build_bow_features(const Kg& kg) {
  return build_bow_features(kg, kg.n_relations, kg.n_attributes);
}

BowFeatures build_bow_features(const Kg& kg, std::size_t n_relations, std::size_t n_attributes) {
  const auto n = kg.n_entities();
  BowFeatures f;
  f.u_rel = {n, n_relations, std::vector<double>(n * n_relations, 0.0)};
  f.u_attr = {n, n_attributes, std::vector<double>(n * n_attributes, 0.0)};
  for (const auto& t : kg.rel_triples) {
    f.u_rel.values[t.head * n_relations + t.relation] = 1.0;
    f.u_rel.values[t.tail * n_relations + t.relation] = 1.0;
  }
  for (const auto& a : kg.attr_pairs) f.u_attr.values[a.entity * n_attributes + a.attribute] = 1.0;
  return f;
}

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

DenseMatrix build_name_features(std::span<const std::string> names, const WordVectors* wv,
                                std::size_t bigram_dim) {
  if (bigram_dim == 0) throw ContractError("build_name_features: bigram_dim must be positive");
  const std::size_t word_dim = wv ? wv->dim : 0;
  const std::size_t width = word_dim + bigram_dim;
  DenseMatrix out{names.size(), width, std::vector<double>(names.size() * width, 0.0)};
  for (std::size_t i = 0; i < names.size(); ++i) {
    auto row = out.row(i);
    if (wv) {
      std::size_t found = 0;
      std::istringstream tokens(names[i]);
      std::string tok;
      while (tokens >> tok) {
        auto it = wv->table.find(tok);
        if (it == wv->table.end()) {
          std::string lower = tok;
          std::transform(lower.begin(), lower.end(), lower.begin(),
                         [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
          it = wv->table.find(lower);
        }
        if (it == wv->table.end()) continue;
        for (std::size_t k = 0; k < word_dim; ++k) row[k] += it->second[k];
        ++found;
      }
      if (found > 1)
        for (std::size_t k = 0; k < word_dim; ++k) row[k] /= static_cast<double>(found);
    }
    auto cps = utf8_codepoints(names[i]);
    for (std::size_t k = 0; k + 1 < cps.size(); ++k) {
      const auto slot = fnv1a(cps[k] + cps[k + 1]) % bigram_dim;
      row[word_dim + slot] += 1.0;
    }
    double ss = 0.0;
    for (std::size_t k = word_dim; k < width; ++k) ss += row[k] * row[k];
    if (ss > 0.0) {
      const double norm = std::sqrt(ss);
      for (std::size_t k = word_dim; k < width; ++k) row[k] /= norm;
    }
  }
  return out;
}

Splits split_alignments(std::span<const EntityPair> pairs, double train_ratio,
                        double dev_fraction, std::uint64_t rng_seed) {
  if (pairs.empty()) throw ValidationError("split_alignments: no reference pairs");
  if (!(train_ratio > 0.0 && train_ratio < 1.0)) {
    throw ValidationError("split_alignments: train_ratio must lie in (0, 1)");
  }
  if (!(dev_fraction >= 0.0 && dev_fraction < 1.0)) {
    throw ValidationError("split_alignments: dev_fraction must lie in [0, 1)");
  }
  std::vector<EntityPair> order(pairs.begin(), pairs.end());
  std::mt19937_64 rng(rng_seed);
  shuffle(order, rng);
  const auto n = order.size();
  const auto pool = static_cast<std::size_t>(std::llround(train_ratio * static_cast<double>(n)));
  const auto dev = static_cast<std::size_t>(std::llround(dev_fraction * static_cast<double>(pool)));
  Splits s;
  s.dev.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(dev));
  s.train.assign(order.begin() + static_cast<std::ptrdiff_t>(dev),
                 order.begin() + static_cast<std::ptrdiff_t>(pool));
  s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(pool), order.end());
  return s;
}

std::vector<std::vector<std::size_t>> build_adjacency(const Kg& kg) {
  const auto n = kg.n_entities();
  std::vector<std::vector<std::size_t>> adj(n);
  for (std::size_t i = 0; i < n; ++i) adj[i].push_back(i);
  for (const auto& t : kg.rel_triples) {
    if (t.head == t.tail) continue;
    adj[t.head].push_back(t.tail);
    adj[t.tail].push_back(t.head);
  }
  for (auto& row : adj) {
    std::sort(row.begin(), row.end());
    row.erase(std::unique(row.begin(), row.end()), row.end());
  }
  return adj;
}

FeatureBundle build_features(const KgPair& pair, std::size_t bigram_dim) {
  validate(pair);
  const auto n1 = pair.g1.n_entities();
  const auto n2 = pair.g2.n_entities();
  const auto n_rel = std::max(pair.g1.n_relations, pair.g2.n_relations);
  const auto n_attr = std::max(pair.g1.n_attributes, pair.g2.n_attributes);
  if (pair.g1.image_rows.cols != pair.g2.image_rows.cols) {
    throw ValidationError("image feature widths differ between the graphs");
  }

  auto stack = [](const DenseMatrix& a, const DenseMatrix& b) {
    DenseMatrix out{a.rows + b.rows, a.cols, a.values};
    out.values.insert(out.values.end(), b.values.begin(), b.values.end());
    return out;
  };

  FeatureBundle f;
  f.n1 = n1;
  f.n2 = n2;
  auto bow1 = build_bow_features(pair.g1, n_rel, n_attr);
  auto bow2 = build_bow_features(pair.g2, n_rel, n_attr);
  f.u_rel = to_tensor(stack(bow1.u_rel, bow2.u_rel));
  f.u_attr = to_tensor(stack(bow1.u_attr, bow2.u_attr));

  const WordVectors* wv = pair.word_vectors ? &*pair.word_vectors : nullptr;
  std::vector<std::string> names = pair.g1.names;
  names.insert(names.end(), pair.g2.names.begin(), pair.g2.names.end());
  f.u_name = to_tensor(build_name_features(names, wv, bigram_dim));
  f.u_img = to_tensor(stack(pair.g1.image_rows, pair.g2.image_rows));
  f.img_mask = pair.g1.image_mask;
  f.img_mask.insert(f.img_mask.end(), pair.g2.image_mask.begin(), pair.g2.image_mask.end());

  f.adjacency = build_adjacency(pair.g1);
  for (auto row : build_adjacency(pair.g2)) {
    for (auto& j : row) j += n1;
    f.adjacency.push_back(std::move(row));
  }
  return f;
}

}  // namespace mmkg
