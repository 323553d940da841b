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

#include "mmkg/encoders.hpp"

#include <cmath>
#include <map>

#include "mmkg/errors.hpp"
#include "mmkg/ops.hpp"

namespace mmkg {

namespace {

constexpr std::array<std::string_view, kNumModalities> kNames = {
    "structure", "relation", "attribute", "name", "visual"};

Tensor uniform_param(Shape shape, double limit, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-limit, limit);
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  std::vector<double> data(n);
  for (auto& v : data) v = dist(rng);
  return Tensor::from_data(std::move(shape), std::move(data), true);
}

Tensor copy_param(const Tensor& t) {
  return Tensor::from_data(t.shape(), {t.data().begin(), t.data().end()}, true);
}

const Tensor& feature_for(const FeatureBundle& f, Modality m) {
  switch (m) {
    case Modality::Relation: return f.u_rel;
    case Modality::Attribute: return f.u_attr;
    case Modality::Name: return f.u_name;
    case Modality::Visual: return f.u_img;
    case Modality::Structure: break;
  }
  throw ContractError("structure has no input feature matrix");
}

}  // namespace

std::string_view modality_name(Modality m) { return kNames[index(m)]; }

std::optional<Modality> parse_modality(std::string_view name) {
  for (auto m : kAllModalities)
    if (kNames[index(m)] == name) return m;
  return std::nullopt;
}

std::size_t ModalitySet::count() const {
  std::size_t n = 0;
  for (bool b : on) n += b;
  return n;
}

std::vector<Modality> ModalitySet::list() const {
  std::vector<Modality> out;
  for (auto m : kAllModalities)
    if (enabled(m)) out.push_back(m);
  return out;
}

std::vector<std::pair<std::string, Tensor>> ModelParams::named() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("entity_embed", entity_embed);
  for (std::size_t l = 0; l < gat.size(); ++l) {
    for (std::size_t k = 0; k < gat[l].size(); ++k) {
      const auto prefix = "gat." + std::to_string(l) + "." + std::to_string(k) + ".";
      out.emplace_back(prefix + "w_diag", gat[l][k].w_diag);
      out.emplace_back(prefix + "attn", gat[l][k].attn);
    }
  }
  for (auto m : kAllModalities) {
    if (m == Modality::Structure) continue;
    const auto prefix = "affine." + std::string(modality_name(m)) + ".";
    out.emplace_back(prefix + "weight", affine[index(m)].weight);
    out.emplace_back(prefix + "bias", affine[index(m)].bias);
  }
  out.emplace_back("fusion_logits", fusion_logits);
  out.emplace_back("uncert_icl", uncert_icl);
  out.emplace_back("uncert_ial", uncert_ial);
  return out;
}

std::vector<Tensor> ModelParams::all() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named()) out.push_back(t);
  return out;
}

ModelParams ModelParams::clone() const {
  std::vector<std::pair<std::string, Tensor>> copied;
  for (auto& [name, t] : named()) copied.emplace_back(name, copy_param(t));
  ModelDims dims;
  dims.gat_layers = gat.size();
  dims.heads = gat.empty() ? 0 : gat[0].size();
  return from_named(copied, dims);
}

ModelParams ModelParams::from_named(const std::vector<std::pair<std::string, Tensor>>& named,
                                    const ModelDims& dims) {
  std::map<std::string, Tensor> by_name(named.begin(), named.end());
  auto take = [&](const std::string& key) {
    auto it = by_name.find(key);
    if (it == by_name.end()) throw ValidationError("model parameters lack '" + key + "'");
    return it->second;
  };
  ModelParams p;
  p.entity_embed = take("entity_embed");
  p.gat.resize(dims.gat_layers);
  for (std::size_t l = 0; l < dims.gat_layers; ++l) {
    for (std::size_t k = 0; k < dims.heads; ++k) {
      const auto prefix = "gat." + std::to_string(l) + "." + std::to_string(k) + ".";
      p.gat[l].push_back({take(prefix + "w_diag"), take(prefix + "attn")});
    }
  }
  for (auto m : kAllModalities) {
    if (m == Modality::Structure) continue;
    const auto prefix = "affine." + std::string(modality_name(m)) + ".";
    p.affine[index(m)] = {take(prefix + "weight"), take(prefix + "bias")};
  }
  p.fusion_logits = take("fusion_logits");
  p.uncert_icl = take("uncert_icl");
  p.uncert_ial = take("uncert_ial");
  return p;
}

ModelParams init_params(const ModelDims& dims, const FeatureBundle& features, std::uint64_t seed) {
  if (dims.struct_dim == 0 || dims.modal_dim == 0 || dims.heads == 0 || dims.gat_layers == 0) {
    throw ConfigError("model dimensions, heads and layers must be positive");
  }
  std::mt19937_64 rng(seed);
  ModelParams p;
  const double d = static_cast<double>(dims.struct_dim);
  p.entity_embed = uniform_param({features.n_total(), dims.struct_dim}, 1.0 / std::sqrt(d), rng);
  p.gat.resize(dims.gat_layers);
  for (auto& layer : p.gat) {
    for (std::size_t k = 0; k < dims.heads; ++k) {
      GatHeadParams head;
      head.w_diag = Tensor::full({dims.struct_dim}, 1.0, true);
      head.attn = uniform_param({2 * dims.struct_dim}, std::sqrt(6.0 / (2.0 * d + 1.0)), rng);
      layer.push_back(std::move(head));
    }
  }
  for (auto m : kAllModalities) {
    if (m == Modality::Structure) continue;
    const auto in = feature_for(features, m).cols();
    const double limit = std::sqrt(6.0 / static_cast<double>(in + dims.modal_dim));
    p.affine[index(m)].weight = uniform_param({in, dims.modal_dim}, limit, rng);
    p.affine[index(m)].bias = Tensor::zeros({dims.modal_dim}, true);
  }
  p.fusion_logits = Tensor::zeros({kNumModalities}, true);
  p.uncert_icl = Tensor::zeros({kNumModalities}, true);
  p.uncert_ial = Tensor::zeros({kNumModalities}, true);
  return p;
}

EdgeList make_edges(const std::vector<std::vector<std::size_t>>& adjacency) {
  EdgeList e;
  e.num_nodes = adjacency.size();
  for (std::size_t i = 0; i < adjacency.size(); ++i) {
    for (auto j : adjacency[i]) {
      if (j >= adjacency.size()) {
        throw IndexError("adjacency of " + std::to_string(i) + " names unknown entity " +
                         std::to_string(j));
      }
      e.dst.push_back(i);
      e.src.push_back(j);
    }
  }
  return e;
}

Tensor gat_attention(const Tensor& h_in, const EdgeList& edges, const GatHeadParams& head,
                     double leaky_slope) {
  const std::size_t d = h_in.cols();
  if (head.w_diag.numel() != d || head.attn.numel() != 2 * d) {
    throw DimensionError("gat head of width " + std::to_string(head.w_diag.numel()) +
                         " applied to input " + shape_str(h_in.shape()));
  }
  if (h_in.rows() != edges.num_nodes) {
    throw DimensionError("gat input has " + std::to_string(h_in.rows()) + " rows for " +
                         std::to_string(edges.num_nodes) + " nodes");
  }
  auto wh = mul_row(h_in, head.w_diag);
  auto self_score = matmul(wh, reshape(slice(head.attn, 0, d), {d, 1}));
  auto nbr_score = matmul(wh, reshape(slice(head.attn, d, d), {d, 1}));
  auto scores = add(gather_rows(self_score, edges.dst), gather_rows(nbr_score, edges.src));
  scores = reshape(leaky_relu(scores, leaky_slope), {edges.dst.size()});
  return segment_softmax(scores, edges.dst, edges.num_nodes);
}

Tensor gat_layer(const Tensor& h_in, const EdgeList& edges, std::span<const GatHeadParams> heads,
                 HeadCombine combine, double leaky_slope) {
  if (heads.empty()) throw ContractError("gat_layer needs at least one head");
  auto neighbors = gather_rows(h_in, edges.src);
  std::vector<Tensor> outs;
  for (const auto& head : heads) {
    auto alpha = gat_attention(h_in, edges, head, leaky_slope);
    outs.push_back(relu(segment_weighted_sum(neighbors, alpha, edges.dst, edges.num_nodes)));
  }
  if (outs.size() == 1) return outs[0];
  if (combine == HeadCombine::Concat) return concat_cols(outs);
  Tensor acc = outs[0];
  for (std::size_t k = 1; k < outs.size(); ++k) acc = add(acc, outs[k]);
  return scale(acc, 1.0 / static_cast<double>(outs.size()));
}

Tensor structure_encode(const ModelParams& params, const EdgeList& edges, const ModelDims& dims) {
  if (params.entity_embed.cols() != dims.struct_dim) {
    throw DimensionError("entity embedding width " + std::to_string(params.entity_embed.cols()) +
                         " differs from struct_dim " + std::to_string(dims.struct_dim));
  }
  Tensor h = params.entity_embed;
  for (std::size_t l = 0; l < params.gat.size(); ++l) {
    const bool last = l + 1 == params.gat.size();
    h = gat_layer(h, edges, params.gat[l], last ? HeadCombine::Concat : HeadCombine::Mean,
                  dims.leaky_slope);
  }
  return h;
}

Tensor linear_encode(const Tensor& u, const Affine& affine) {
  return add_row(matmul(u, affine.weight), affine.bias);
}

Tensor visual_encode(const Tensor& u_img, const Affine& affine) {
  return linear_encode(u_img, affine);
}

Tensor fuse_joint(const std::vector<Tensor>& modal, const Tensor& logits) {
  if (modal.empty()) throw ContractError("fuse_joint needs at least one modality");
  if (logits.numel() != modal.size()) {
    throw DimensionError("fuse_joint: " + std::to_string(logits.numel()) + " logits for " +
                         std::to_string(modal.size()) + " modalities");
  }
  const auto m = modal.size();
  auto weights = reshape(row_softmax(reshape(logits, {1, m})), {m});
  std::vector<Tensor> parts;
  for (std::size_t k = 0; k < m; ++k) {
    if (modal[k].rows() != modal[0].rows()) {
      throw DimensionError("fuse_joint: modality row counts differ");
    }
    parts.push_back(mul_scalar(l2_normalize_rows(modal[k]), slice(weights, k, 1)));
  }
  return concat_cols(parts);
}

ModalEmbeddings forward_all(const ModelParams& params, const FeatureBundle& features,
                            const EdgeList& edges, const ModelDims& dims,
                            const ModalitySet& modalities, std::mt19937_64* dropout_rng) {
  if (modalities.count() == 0) throw ConfigError("at least one modality must be enabled");
  ModalEmbeddings out;
  std::vector<Tensor> enabled;
  std::vector<std::size_t> logit_index;
  for (auto m : modalities.list()) {
    Tensor h = m == Modality::Structure
                   ? structure_encode(params, edges, dims)
                   : linear_encode(feature_for(features, m), params.affine[index(m)]);
    if (dims.dropout > 0.0 && dropout_rng) h = dropout(h, dims.dropout, *dropout_rng);
    out.modal[index(m)] = h;
    enabled.push_back(h);
    logit_index.push_back(index(m));
  }
  auto logits = gather_rows(params.fusion_logits, logit_index);
  out.joint = fuse_joint(enabled, logits);
  out.fusion_weights = reshape(row_softmax(reshape(logits, {1, logits.numel()})), {logits.numel()});
  return out;
}

}  // namespace mmkg
