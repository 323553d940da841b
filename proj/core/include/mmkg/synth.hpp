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

#include <cstdint>
#include <filesystem>
#include <string>

#include "mmkg/kgdata.hpp"

namespace mmkg {

/// Parameters of a synthetic pair of knowledge graphs. g2 is a relabeled
/// copy of a random g1; every entity carries a hidden latent vector from
/// which both sides derive their names and image features independently.
struct SynthSpec {
  std::size_t n_entities = 200;
  std::size_t n_relations = 20;
  std::size_t n_attributes = 40;
  /// Triples per entity in g1.
  double edge_factor = 5.0;
  std::size_t attrs_per_entity = 3;
  /// Standard deviation of the Gaussian noise added to the latent before
  /// each side renders its name and image features.
  double feature_noise = 0.1;
  /// Per-incidence probability that a relation label or attribute is
  /// resampled when copied into g2.
  double p_drop = 0.1;
  /// Probability that a copied triple has its tail moved to a random entity.
  double p_rewire = 0.0;
  std::size_t latent_dim = 8;
  std::size_t image_dim = 32;
  /// Fraction of entities (per side) that have an image at all.
  double image_coverage = 1.0;
  /// Names are `name_tokens` words of `token_length` letters; each letter
  /// quantizes one latent coordinate into `name_levels` bins.
  std::size_t name_tokens = 2;
  std::size_t token_length = 4;
  std::size_t name_levels = 4;
  /// Width of the emitted word-vector table (0 = no word_vectors.txt).
  std::size_t word_dim = 16;

  friend bool operator==(const SynthSpec&, const SynthSpec&) = default;
};

/// Throws ValidationError for an infeasible spec.
void validate(const SynthSpec& spec);

SynthSpec parse_synth_spec(const std::string& json_text);
std::string to_json(const SynthSpec& spec);

/// Builds the pair in memory. The reference alignment is the hidden
/// permutation in g1 order; no split is applied.
KgPair synth_generate(const SynthSpec& spec, std::uint64_t rng_seed);

/// synth_generate followed by write_kg_pair.
void synth_write(const SynthSpec& spec, std::uint64_t rng_seed,
                 const std::filesystem::path& dir);

}  // namespace mmkg
