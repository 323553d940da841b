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
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mmkg/tensor.hpp"

namespace mmkg {

struct Triple {
  std::size_t head = 0;
  std::size_t relation = 0;
  std::size_t tail = 0;
  friend bool operator==(const Triple&, const Triple&) = default;
};

struct AttrPair {
  std::size_t entity = 0;
  std::size_t attribute = 0;
  friend bool operator==(const AttrPair&, const AttrPair&) = default;
};

/// (id in g1, id in g2)
using EntityPair = std::pair<std::size_t, std::size_t>;

/// Row-major dense matrix of plain values.
struct DenseMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  std::span<const double> row(std::size_t i) const {
    return {values.data() + i * cols, cols};
  }
  std::span<double> row(std::size_t i) { return {values.data() + i * cols, cols}; }
  friend bool operator==(const DenseMatrix&, const DenseMatrix&) = default;
};

struct Kg {
  std::vector<std::string> names;
  std::vector<Triple> rel_triples;
  std::vector<AttrPair> attr_pairs;
  std::size_t n_relations = 0;
  std::size_t n_attributes = 0;
  /// n x D_v. Rows with image_mask false are seeded random fill.
  DenseMatrix image_rows;
  std::vector<bool> image_mask;

  std::size_t n_entities() const { return names.size(); }
  friend bool operator==(const Kg&, const Kg&) = default;
};

/// Pre-trained token vectors in GloVe text layout.
struct WordVectors {
  std::size_t dim = 0;
  std::map<std::string, std::vector<double>> table;
  friend bool operator==(const WordVectors&, const WordVectors&) = default;
};

struct KgPair {
  Kg g1;
  Kg g2;
  /// Every reference alignment in file order.
  std::vector<EntityPair> reference;
  std::vector<EntityPair> train_seeds;
  std::vector<EntityPair> dev_seeds;
  std::vector<EntityPair> test_pairs;
  std::vector<EntityPair> pseudo_seeds;
  std::optional<WordVectors> word_vectors;
  friend bool operator==(const KgPair&, const KgPair&) = default;
};

struct LoadOptions {
  double train_ratio = 0.3;
  double dev_fraction = 0.1;
  std::uint64_t seed = 42;
  /// Width of the random visual fill when no image file is present.
  std::size_t default_image_dim = 32;
};

/// Reads the tab-separated dataset layout (ent_ids_{1,2}, triples_{1,2},
/// attrs_{1,2}, ref_ent_ids, optional img_features_{1,2} and
/// word_vectors.txt), validates ids, and splits the reference alignment.
KgPair load_kg_pair(const std::filesystem::path& dir, const LoadOptions& options = {});

/// Writes the same layout. Only rows with image_mask set are written.
void write_kg_pair(const KgPair& pair, const std::filesystem::path& dir);

/// Throws ValidationError if an id is out of range or the reference is not
/// one-to-one.
void validate(const KgPair& pair);

WordVectors load_word_vectors(const std::filesystem::path& path);

struct ImageFeatures {
  DenseMatrix rows;
  std::vector<bool> mask;
};

/// Rows present in the file are copied with mask=true; every other row is a
/// standard-normal draw from `rng_seed`. `dim` 0 means "take width from file".
ImageFeatures load_image_features(const std::optional<std::filesystem::path>& path,
                                  std::size_t n, std::size_t dim, std::uint64_t rng_seed);

struct BowFeatures {
  DenseMatrix u_rel;
  DenseMatrix u_attr;
};

/// Binary incidence rows. A relation counts for an entity in either the head
/// or the tail role.
BowFeatures build_bow_features(const Kg& kg);
BowFeatures build_bow_features(const Kg& kg, std::size_t n_relations, std::size_t n_attributes);

inline constexpr std::size_t kDefaultBigramDim = 512;

/// FNV-1a, 64 bit.
std::uint64_t fnv1a(std::string_view bytes);

/// Word part (mean of known token vectors, width wv->dim or 0) followed by
/// an L2-normalized hashed character-bigram count vector over the lowercased
/// name.
DenseMatrix build_name_features(std::span<const std::string> names, const WordVectors* wv,
                                std::size_t bigram_dim = kDefaultBigramDim);

struct Splits {
  std::vector<EntityPair> train;
  std::vector<EntityPair> dev;
  std::vector<EntityPair> test;
};

/// Seeded shuffle; round(train_ratio * n) pairs go to the seed pool, of which
/// round(dev_fraction * pool) become dev; the rest is test.
Splits split_alignments(std::span<const EntityPair> pairs, double train_ratio,
                        double dev_fraction, std::uint64_t rng_seed);

/// Encoder inputs over the disjoint union of both graphs: g1 entities keep
/// their ids, g2 entity j becomes n1 + j. Relation and attribute vocabularies
/// are shared between the graphs.
struct FeatureBundle {
  std::size_t n1 = 0;
  std::size_t n2 = 0;
  Tensor u_rel;
  Tensor u_attr;
  Tensor u_name;
  Tensor u_img;
  std::vector<bool> img_mask;
  /// Sorted neighbor lists, each containing the entity itself exactly once.
  std::vector<std::vector<std::size_t>> adjacency;

  std::size_t n_total() const { return n1 + n2; }
};

FeatureBundle build_features(const KgPair& pair, std::size_t bigram_dim = kDefaultBigramDim);

/// Undirected neighbor lists with self-loops for one graph.
std::vector<std::vector<std::size_t>> build_adjacency(const Kg& kg);

}  // namespace mmkg
