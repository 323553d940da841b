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
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mmkg/kgdata.hpp"
#include "mmkg/tensor.hpp"

namespace mmkg {

enum class Modality : std::size_t { Structure = 0, Relation, Attribute, Name, Visual };
inline constexpr std::size_t kNumModalities = 5;
inline constexpr std::array<Modality, kNumModalities> kAllModalities = {
    Modality::Structure, Modality::Relation, Modality::Attribute, Modality::Name,
    Modality::Visual};

constexpr std::size_t index(Modality m) { return static_cast<std::size_t>(m); }
std::string_view modality_name(Modality m);
std::optional<Modality> parse_modality(std::string_view name);

/// Which modalities take part in encoding, fusion and the losses.
struct ModalitySet {
  std::array<bool, kNumModalities> on{true, true, true, true, true};

  bool enabled(Modality m) const { return on[index(m)]; }
  void set(Modality m, bool value) { on[index(m)] = value; }
  std::size_t count() const;
  std::vector<Modality> list() const;
  friend bool operator==(const ModalitySet&, const ModalitySet&) = default;
};

struct ModelDims {
  std::size_t struct_dim = 300;  // width of every GAT hidden layer
  std::size_t modal_dim = 100;   // width of the relation/attribute/name/visual maps
  std::size_t heads = 2;
  std::size_t gat_layers = 2;
  double leaky_slope = 0.2;
  double dropout = 0.0;
  friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

/// One attention head with a diagonal transform: w_diag holds diag(W), attn
/// is the 2d-vector scoring [W h_i ++ W h_j].
struct GatHeadParams {
  Tensor w_diag;
  Tensor attn;
};

struct Affine {
  Tensor weight;  // in x out
  Tensor bias;    // out
};

struct ModelParams {
  Tensor entity_embed;                              // (n1+n2) x struct_dim
  std::vector<std::vector<GatHeadParams>> gat;      // [layer][head]
  std::array<Affine, kNumModalities> affine;        // unused for Structure
  Tensor fusion_logits;                             // |M|
  Tensor uncert_icl;                                // s, alpha = exp(s/2)
  Tensor uncert_ial;                                // beta likewise

  /// Every trainable tensor with a stable name, in a fixed order.
  std::vector<std::pair<std::string, Tensor>> named() const;
  std::vector<Tensor> all() const;
  /// Deep copy; the copy shares no storage with this.
  ModelParams clone() const;
  static ModelParams from_named(const std::vector<std::pair<std::string, Tensor>>& named,
                                const ModelDims& dims);
};

/// Seeded initialization: entity embeddings uniform in +-1/sqrt(d), affine
/// weights Glorot-uniform, GAT vectors Glorot-uniform, biases and logits zero.
ModelParams init_params(const ModelDims& dims, const FeatureBundle& features,
                        std::uint64_t seed);

/// Flattened adjacency: edge e aggregates src[e] into dst[e].
struct EdgeList {
  std::vector<std::size_t> dst;
  std::vector<std::size_t> src;
  std::size_t num_nodes = 0;
};

EdgeList make_edges(const std::vector<std::vector<std::size_t>>& adjacency);

enum class HeadCombine { Concat, Mean };

/// Attention coefficients of one head, aligned with edges.dst/src.
Tensor gat_attention(const Tensor& h_in, const EdgeList& edges, const GatHeadParams& head,
                     double leaky_slope = 0.2);

/// out_k[i] = ReLU(sum_j alpha_k[i][j] * h_in[j]); heads concatenated or averaged.
Tensor gat_layer(const Tensor& h_in, const EdgeList& edges, std::span<const GatHeadParams> heads,
                 HeadCombine combine, double leaky_slope = 0.2);

/// Stacked GAT over the disjoint union graph. Hidden layers average their
/// heads; the last layer concatenates them.
Tensor structure_encode(const ModelParams& params, const EdgeList& edges,
                        const ModelDims& dims);

/// u W + b, no nonlinearity.
Tensor linear_encode(const Tensor& u, const Affine& affine);
Tensor visual_encode(const Tensor& u_img, const Affine& affine);

/// Concatenation of softmax(logits)[m] * l2_normalize(h_m) over the given
/// embeddings. `logits` has one entry per embedding.
Tensor fuse_joint(const std::vector<Tensor>& modal, const Tensor& logits);

struct ModalEmbeddings {
  std::array<Tensor, kNumModalities> modal;  // undefined if disabled
  Tensor joint;
  Tensor fusion_weights;  // over the enabled modalities, in modality order

  const Tensor& operator[](Modality m) const { return modal[index(m)]; }
};

/// Full-graph forward pass over both graphs. `dropout_rng` is only drawn from
/// when dims.dropout > 0.
ModalEmbeddings forward_all(const ModelParams& params, const FeatureBundle& features,
                            const EdgeList& edges, const ModelDims& dims,
                            const ModalitySet& modalities,
                            std::mt19937_64* dropout_rng = nullptr);

}  // namespace mmkg
