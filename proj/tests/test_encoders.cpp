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
#include <numeric>

#include "mmkg/encoders.hpp"
#include "mmkg/errors.hpp"
#include "mmkg/gradcheck.hpp"
#include "mmkg/ops.hpp"
#include "mmkg/synth.hpp"
#include "test_util.hpp"

using namespace mmkg;
using mmkg::test::random_matrix;

namespace {

GatHeadParams random_head(std::size_t d, std::mt19937_64& rng, bool grad = false) {
  return {random_matrix(1, d, rng, grad), random_matrix(1, 2 * d, rng, grad)};
}

GatHeadParams as_vectors(const GatHeadParams& h, bool grad) {
  auto a = h.w_diag.data(), b = h.attn.data();
  return {Tensor::vector({a.begin(), a.end()}, grad), Tensor::vector({b.begin(), b.end()}, grad)};
}

// 5 nodes: path 0-1-2-3 plus 4 hanging off 1.
std::vector<std::vector<std::size_t>> small_graph() {
  return {{0, 1}, {0, 1, 2, 4}, {1, 2, 3}, {2, 3}, {1, 4}};
}

double row_norm(const Tensor& t, std::size_t i, std::size_t lo, std::size_t hi) {
  double s = 0.0;
  for (std::size_t c = lo; c < hi; ++c) s += t(i, c) * t(i, c);
  return std::sqrt(s);
}

FeatureBundle small_bundle(std::size_t n = 24) {
  SynthSpec spec;
  spec.n_entities = n;
  spec.word_dim = 0;
  return build_features(synth_generate(spec, 6), 32);
}

}  // namespace

TEST_CASE("attention of an isolated entity") {
  std::mt19937_64 rng(1);
  auto edges = make_edges({{0}});
  auto h = random_matrix(1, 3, rng);
  auto head = as_vectors(random_head(3, rng), false);
  auto alpha = gat_attention(h, edges, head);
  CHECK(alpha(0) == doctest::Approx(1.0).epsilon(1e-15));
  std::vector<GatHeadParams> heads{head};
  auto out = gat_layer(h, edges, heads, HeadCombine::Mean);
  for (std::size_t c = 0; c < 3; ++c) CHECK(out(0, c) == std::max(0.0, h(0, c)));
}

TEST_CASE("zero attention vector averages the neighbourhood") {
  std::mt19937_64 rng(2);
  auto edges = make_edges(small_graph());
  auto h = random_matrix(5, 4, rng);
  GatHeadParams head{Tensor::vector({1, 2, 3, 4}), Tensor::zeros({8})};
  std::vector<GatHeadParams> heads{head};
  auto out = gat_layer(h, edges, heads, HeadCombine::Concat);
  const auto adj = small_graph();
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t c = 0; c < 4; ++c) {
      double m = 0.0;
      for (auto j : adj[i]) m += h(j, c);
      m /= static_cast<double>(adj[i].size());
      CHECK(out(i, c) == doctest::Approx(std::max(0.0, m)).epsilon(1e-13));
    }
  }
}

TEST_CASE("attention rows are probability vectors and gradients check") {
  std::mt19937_64 rng(3);
  const auto adj = small_graph();
  auto edges = make_edges(adj);
  auto h = random_matrix(5, 3, rng, true);
  auto head = as_vectors(random_head(3, rng), true);
  auto alpha = gat_attention(h, edges, head);
  std::vector<double> rows(5, 0.0);
  for (std::size_t e = 0; e < edges.dst.size(); ++e) {
    CHECK(alpha(e) >= 0.0);
    rows[edges.dst[e]] += alpha(e);
  }
  for (double s : rows) CHECK(std::abs(s - 1.0) < 1e-12);

  std::vector<Tensor> params{h, head.w_diag, head.attn};
  std::vector<GatHeadParams> heads{head, as_vectors(random_head(3, rng), true)};
  params.push_back(heads[1].w_diag);
  params.push_back(heads[1].attn);
  auto f = [&] { return sum(mul(gat_layer(h, edges, heads, HeadCombine::Concat),
                                gat_layer(h, edges, heads, HeadCombine::Concat))); };
  CHECK(grad_check(f, params) < 1e-5);
  CHECK_THROWS_AS(make_edges({{0, 3}}), IndexError);
}

TEST_CASE("structure encoder shapes, isolation and equivariance") {
  auto f = small_bundle();
  ModelDims dims;
  dims.struct_dim = 8;
  dims.modal_dim = 5;
  auto params = init_params(dims, f, 1);
  auto edges = make_edges(f.adjacency);
  auto out = structure_encode(params, edges, dims);
  CHECK(out.rows() == f.n_total());
  CHECK(out.cols() == 16);

  SUBCASE("self-loops only give a per-row ReLU chain") {
    std::vector<std::vector<std::size_t>> iso(f.n_total());
    for (std::size_t i = 0; i < iso.size(); ++i) iso[i] = {i};
    auto h = structure_encode(params, make_edges(iso), dims);
    const auto& x = params.entity_embed;
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t c = 0; c < 8; ++c) {
        CHECK(h(i, c) == doctest::Approx(std::max(0.0, x(i, c))).epsilon(1e-14));
        CHECK(h(i, 8 + c) == doctest::Approx(std::max(0.0, x(i, c))).epsilon(1e-14));
      }
  }
  SUBCASE("relabelling entities permutes the output rows") {
    const std::size_t n = f.n_total();
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937_64 rng(4);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<std::vector<std::size_t>> adj(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (auto j : f.adjacency[i]) adj[perm[i]].push_back(perm[j]);
      std::sort(adj[perm[i]].begin(), adj[perm[i]].end());
    }
    std::vector<std::size_t> inverse(n);
    for (std::size_t i = 0; i < n; ++i) inverse[perm[i]] = i;
    auto p2 = params.clone();
    p2.entity_embed = gather_rows(params.entity_embed, inverse).detach();
    auto h = structure_encode(p2, make_edges(adj), dims);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < 16; ++c) CHECK(h(perm[i], c) == doctest::Approx(out(i, c)).epsilon(1e-12));
  }
}

TEST_CASE("affine encoders") {
  std::mt19937_64 rng(5);
  Affine aff{random_matrix(4, 3, rng, true), Tensor::vector({0.5, -1.0, 2.0}, true)};
  auto zero_in = linear_encode(Tensor::zeros({2, 4}), aff);
  for (std::size_t c = 0; c < 3; ++c) CHECK(zero_in(1, c) == aff.bias(c));
  auto none = visual_encode(random_matrix(2, 4, rng), Affine{Tensor::zeros({4, 3}), Tensor::zeros({3})});
  for (double v : none.data()) CHECK(v == 0.0);
  auto u = random_matrix(3, 4, rng);
  std::vector<Tensor> params{aff.weight, aff.bias};
  CHECK(grad_check([&] { auto y = linear_encode(u, aff); return sum(mul(y, y)); }, params) < 1e-6);
  CHECK(grad_check([&] { return sum(exp(visual_encode(u, aff))); }, params) < 1e-6);
  CHECK_THROWS_AS(linear_encode(Tensor::zeros({2, 5}), aff), DimensionError);
}

TEST_CASE("joint fusion") {
  std::mt19937_64 rng(6);
  std::vector<Tensor> modal;
  for (int m = 0; m < 5; ++m) modal.push_back(random_matrix(3, 2 + m, rng));
  auto joint = fuse_joint(modal, Tensor::zeros({5}));
  CHECK(joint.cols() == 2 + 3 + 4 + 5 + 6);
  for (std::size_t i = 0; i < 3; ++i) {
    std::size_t lo = 0;
    for (int m = 0; m < 5; ++m) {
      CHECK(row_norm(joint, i, lo, lo + 2 + m) == doctest::Approx(0.2).epsilon(1e-13));
      lo += 2 + m;
    }
    CHECK(row_norm(joint, i, 0, lo) == doctest::Approx(1.0 / std::sqrt(5.0)).epsilon(1e-13));
  }
  auto logits = Tensor::vector({0.3, -1.0, 2.0, 0.0, 0.5});
  auto base = fuse_joint(modal, logits);
  auto shifted = fuse_joint(modal, add_scalar(logits, 4.0));
  auto rescaled_modal = modal;
  rescaled_modal[2] = scale(modal[2], 9.0);
  auto rescaled = fuse_joint(rescaled_modal, logits);
  for (std::size_t k = 0; k < base.numel(); ++k) {
    CHECK(shifted.data()[k] == doctest::Approx(base.data()[k]).epsilon(1e-13));
    CHECK(rescaled.data()[k] == doctest::Approx(base.data()[k]).epsilon(1e-13));
  }
}

TEST_CASE("full forward pass") {
  auto f = small_bundle();
  SUBCASE("default widths") {
    ModelDims dims;
    auto params = init_params(dims, f, 2);
    auto emb = forward_all(params, f, make_edges(f.adjacency), dims, ModalitySet{});
    CHECK(emb[Modality::Structure].cols() == 600);
    for (auto m : {Modality::Relation, Modality::Attribute, Modality::Name, Modality::Visual})
      CHECK(emb[m].cols() == 100);
    CHECK(emb.joint.cols() == 1000);
    CHECK(emb.joint.rows() == f.n_total());
  }
  SUBCASE("disabling a modality drops its segment and renormalizes") {
    ModelDims dims;
    dims.struct_dim = 6;
    dims.modal_dim = 4;
    auto params = init_params(dims, f, 2);
    ModalitySet mods;
    mods.set(Modality::Name, false);
    auto emb = forward_all(params, f, make_edges(f.adjacency), dims, mods);
    CHECK_FALSE(emb[Modality::Name].defined());
    CHECK(emb.joint.cols() == 12 + 4 * 3);
    CHECK(emb.fusion_weights.numel() == 4);
    double s = 0.0;
    for (double w : emb.fusion_weights.data()) s += w;
    CHECK(s == doctest::Approx(1.0).epsilon(1e-15));
  }
  SUBCASE("bit-identical across calls") {
    ModelDims dims;
    dims.struct_dim = 6;
    dims.modal_dim = 4;
    auto params = init_params(dims, f, 2);
    auto edges = make_edges(f.adjacency);
    auto a = forward_all(params, f, edges, dims, ModalitySet{});
    auto b = forward_all(params, f, edges, dims, ModalitySet{});
    CHECK(std::equal(a.joint.data().begin(), a.joint.data().end(), b.joint.data().begin()));
  }
}

TEST_CASE("parameter naming round trip") {
  auto f = small_bundle(10);
  ModelDims dims;
  dims.struct_dim = 4;
  dims.modal_dim = 3;
  auto p = init_params(dims, f, 3);
  auto named = p.named();
  CHECK(named.front().first == "entity_embed");
  auto q = ModelParams::from_named(named, dims);
  auto again = q.named();
  REQUIRE(again.size() == named.size());
  for (std::size_t i = 0; i < named.size(); ++i) {
    CHECK(again[i].first == named[i].first);
    CHECK(std::equal(again[i].second.data().begin(), again[i].second.data().end(),
                     named[i].second.data().begin()));
  }
  auto c = p.clone();
  c.entity_embed.mutable_data()[0] += 1.0;
  CHECK(c.entity_embed(0, 0) != p.entity_embed(0, 0));
  named.pop_back();
  CHECK_THROWS_AS(ModelParams::from_named(named, dims), ValidationError);
  CHECK(parse_modality("visual") == Modality::Visual);
  CHECK_FALSE(parse_modality("smell"));
}
