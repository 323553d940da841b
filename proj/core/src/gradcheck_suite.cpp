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

#include "mmkg/gradcheck_suite.hpp"

#include <algorithm>
#include <functional>
#include <random>

#include "mmkg/encoders.hpp"
#include "mmkg/gradcheck.hpp"
#include "mmkg/losses.hpp"
#include "mmkg/ops.hpp"

namespace mmkg {

namespace {

constexpr double kOpTol = 1e-6;
constexpr double kEncoderTol = 1e-5;
constexpr double kLossTol = 1e-4;
// Step for the end-to-end objective. At 1e-6 the rounding noise of a loss
// built from a dozen softmaxes swamps coordinates with |g| below 1e-6.
constexpr double kDeepEps = 1e-4;

class Micro {
 public:
  explicit Micro(std::uint64_t seed) : rng_(seed) {}

  // Entries bounded away from zero so piecewise ops stay off their kinks.
  Tensor param(Shape shape, double lo = 0.2, double hi = 1.0) {
    std::uniform_real_distribution<double> mag(lo, hi);
    std::size_t n = 1;
    for (auto e : shape) n *= e;
    std::vector<double> v(n);
    for (auto& x : v) x = (rng_() & 1 ? 1.0 : -1.0) * mag(rng_);
    return Tensor::from_data(std::move(shape), std::move(v), true);
  }
  Tensor positive(Shape shape) {
    auto t = param(std::move(shape));
    for (auto& x : t.mutable_data()) x = std::abs(x) + 0.1;
    return t;
  }
  // Fixed random weights turning a tensor into a scalar objective.
  Tensor probe(const Tensor& t) {
    auto w = param(t.shape());
    return sum(mul(t, w.detach()));
  }
  std::mt19937_64& rng() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

// Ring over n nodes with self-loops and one chord.
EdgeList micro_edges(std::size_t n) {
  std::vector<std::vector<std::size_t>> adj(n);
  for (std::size_t i = 0; i < n; ++i) {
    adj[i] = {i, (i + 1) % n, (i + n - 1) % n};
  }
  adj[0].push_back(n / 2);
  adj[n / 2].push_back(0);
  return make_edges(adj);
}

}  // namespace

std::vector<GradcheckResult> run_gradcheck_suite(std::uint64_t seed) {
  std::vector<GradcheckResult> out;
  Micro m(seed);
  auto check = [&](const std::string& name, double tol, std::vector<Tensor> params,
                   std::function<Tensor()> f, double eps = 1e-6) {
    out.push_back({name, grad_check(f, params, eps), tol});
  };

  {
    auto a = m.param({3, 4}), b = m.param({4, 2});
    auto w = m.param({3, 2}).detach();
    check("matmul", kOpTol, {a, b}, [=] { return sum(mul(matmul(a, b), w)); });
  }
  {
    auto a = m.param({3, 4});
    auto w = m.param({4, 3}).detach();
    check("transpose", kOpTol, {a}, [=] { return sum(mul(transpose(a), w)); });
  }
  {
    auto a = m.param({2, 3}), b = m.param({2, 3});
    auto w = m.param({2, 3}).detach();
    check("add/sub/mul", kOpTol, {a, b},
          [=] { return sum(mul(add(mul(a, b), sub(a, scale(b, 0.5))), w)); });
  }
  {
    auto a = m.param({3, 4}), r = m.param({4}), s = m.param({4});
    auto w = m.param({3, 4}).detach();
    check("add_row/mul_row", kOpTol, {a, r, s},
          [=] { return sum(mul(add_row(mul_row(a, s), r), w)); });
  }
  {
    auto a = m.param({2, 3}), c = m.param({1});
    auto w = m.param({2, 3}).detach();
    check("scale/add_scalar/mul_scalar", kOpTol, {a, c},
          [=] { return sum(mul(add_scalar(scale(mul_scalar(a, c), 1.7), 0.3), w)); });
  }
  {
    auto a = m.param({2, 3}, 0.2, 1.0);
    auto p = m.positive({2, 3});
    auto w = m.param({2, 3}).detach();
    check("exp/log", kOpTol, {a, p}, [=] { return sum(mul(add(exp(a), log(p)), w)); });
  }
  {
    auto a = m.param({3, 3});
    auto w = m.param({3, 3}).detach();
    check("relu/leaky_relu", kOpTol, {a},
          [=] { return sum(mul(add(relu(a), leaky_relu(a, 0.2)), w)); });
  }
  {
    auto a = m.param({3, 4});
    auto w = m.param({3}).detach();
    check("sum/mean/row_sum", kOpTol, {a},
          [=] { return add(scale(sum(mul(row_sum(a), w)), 0.5), mean(mul(a, a))); });
  }
  {
    auto a = m.param({2, 3}), b = m.param({2, 2}), c = m.param({1, 5});
    auto w = m.param({5, 3}).detach();
    check("concat/reshape", kOpTol, {a, b, c}, [=] {
      return sum(mul(reshape(concat_rows({concat_cols({a, b}), c}), {5, 3}), w));
    });
  }
  {
    auto a = m.param({4, 3});
    std::vector<std::size_t> rows = {2, 0, 2, 3};
    std::vector<std::size_t> cols = {0, 2, 1, 1, 0, 0, 2, 2};
    auto w = m.param({4, 2}).detach();
    check("gather_rows/gather_cols", kOpTol, {a},
          [=] { return sum(mul(gather_cols(gather_rows(a, rows), cols, 2), w)); });
  }
  {
    auto a = m.param({6});
    auto w = m.param({3}).detach();
    check("slice", kOpTol, {a}, [=] { return sum(mul(slice(a, 2, 3), w)); });
  }
  {
    auto x = m.param({3, 4});
    std::vector<std::size_t> labels = {1, 3, 0};
    check("row_softmax cross entropy", kOpTol, {x}, [=] {
      auto picked = gather_cols(row_softmax(x, 0.7), labels, 1);
      return scale(mean(log(picked)), -1.0);
    });
  }
  {
    auto x = m.param({3, 4});
    auto w = m.param({3, 4}).detach();
    check("log_row_softmax", kOpTol, {x}, [=] { return sum(mul(log_row_softmax(x, 1.3), w)); });
  }
  {
    auto x = m.param({3, 4});
    auto w = m.param({3, 4}).detach();
    check("l2_normalize_rows", kOpTol, {x}, [=] { return sum(mul(l2_normalize_rows(x), w)); });
  }
  {
    auto s = m.param({6}), v = m.param({6, 3});
    std::vector<std::size_t> seg = {0, 0, 1, 2, 2, 2};
    auto w = m.param({3, 3}).detach();
    check("segment_softmax/segment_weighted_sum", kOpTol, {s, v}, [=] {
      return sum(mul(segment_weighted_sum(v, segment_softmax(s, seg, 3), seg, 3), w));
    });
  }

  // Encoders on five nodes.
  const auto edges = micro_edges(5);
  {
    auto h = m.param({5, 4});
    GatHeadParams head{m.param({4}), m.param({8})};
    auto w = m.param({5, 4}).detach();
    check("gat_layer (single head)", kEncoderTol, {h, head.w_diag, head.attn}, [=] {
      std::vector<GatHeadParams> heads{head};
      return sum(mul(gat_layer(h, edges, heads, HeadCombine::Concat), w));
    });
  }
  {
    ModelDims dims;
    dims.struct_dim = 4;
    ModelParams p;
    p.entity_embed = m.param({5, 4});
    p.gat.resize(2);
    for (auto& layer : p.gat)
      for (int k = 0; k < 2; ++k) layer.push_back({m.param({4}), m.param({8})});
    std::vector<Tensor> params{p.entity_embed};
    for (auto& layer : p.gat)
      for (auto& head : layer) {
        params.push_back(head.w_diag);
        params.push_back(head.attn);
      }
    auto w = m.param({5, 8}).detach();
    check("structure_encode", kEncoderTol, params,
          [=] { return sum(mul(structure_encode(p, edges, dims), w)); });
  }
  {
    auto u = m.param({5, 6});
    Affine a{m.param({6, 3}), m.param({3})};
    auto w = m.param({5, 3}).detach();
    check("linear_encode", kEncoderTol, {u, a.weight, a.bias},
          [=] { return sum(mul(linear_encode(u, a), w)); });
  }
  {
    auto u = m.param({5, 4});
    Affine a{m.param({4, 3}), m.param({3})};
    auto w = m.param({5, 3}).detach();
    check("visual_encode", kEncoderTol, {a.weight, a.bias},
          [=] { return sum(mul(visual_encode(u.detach(), a), w)); });
  }
  {
    auto h1 = m.param({5, 3}), h2 = m.param({5, 2}), logits = m.param({2});
    auto w = m.param({5, 5}).detach();
    check("fuse_joint", kEncoderTol, {h1, h2, logits},
          [=] { return sum(mul(fuse_joint({h1, h2}, logits), w)); });
  }

  // Losses.
  {
    auto l = m.param({3, 4}), r = m.param({3, 4});
    auto w = m.param({3, 5}).detach();
    check("alignment_distribution", kLossTol, {l, r},
          [=] { return sum(mul(alignment_distribution(l, r, 0.5).prob, w)); });
  }
  {
    auto l = m.param({4, 3}), r = m.param({4, 3});
    check("icl_loss", kLossTol, {l, r}, [=] { return icl_loss(l, r, 0.5); });
  }
  {
    auto jl = m.param({3, 5}), jr = m.param({3, 5}), ml = m.param({3, 2}), mr = m.param({3, 2});
    check("ial_loss", kLossTol, {ml, mr}, [=] { return ial_loss(jl, jr, ml, mr, 4.0); });
  }
  {
    // Six entities (a three-node path per graph), three modalities, every
    // trainable tensor including fusion logits and uncertainty logs.
    const std::size_t n = 3;
    std::vector<std::vector<std::size_t>> adj(2 * n);
    for (std::size_t side = 0; side < 2; ++side) {
      for (std::size_t i = 0; i < n; ++i) adj[side * n + i].push_back(side * n + i);
      for (std::size_t i = 0; i + 1 < n; ++i) {
        const std::size_t a = side * n + i, b = a + 1;
        adj[a].push_back(b);
        adj[b].push_back(a);
      }
    }
    for (auto& l : adj) {
      std::sort(l.begin(), l.end());
      l.erase(std::unique(l.begin(), l.end()), l.end());
    }
    FeatureBundle f;
    f.n1 = f.n2 = n;
    f.u_rel = m.param({2 * n, 3}).detach();
    f.u_attr = Tensor::zeros({2 * n, 1});
    f.u_name = m.param({2 * n, 4}).detach();
    f.u_img = Tensor::zeros({2 * n, 1});
    f.img_mask.assign(2 * n, false);
    f.adjacency = adj;
    const auto e = make_edges(adj);

    ModelDims dims;
    dims.struct_dim = 4;
    dims.modal_dim = 3;
    ModelParams p = init_params(dims, f, seed);
    for (auto& [name, t] : p.named()) {
      std::uniform_real_distribution<double> jitter(-0.3, 0.3);
      for (auto& x : t.mutable_data()) x += jitter(m.rng());
    }
    ModalitySet mods;
    mods.on = {true, true, false, true, false};
    LossConfig cfg;
    cfg.tau1 = 0.5;
    BatchPairs batch{{0, 1, 2}, {1, 2, 0}};
    std::vector<Tensor> used;
    for (auto& [name, t] : p.named()) {
      if (name.rfind("affine.attribute", 0) == 0 || name.rfind("affine.visual", 0) == 0) continue;
      used.push_back(t);
    }
    // The teacher carries no gradient, so the probes hold it at its value
    // for the unperturbed parameters.
    Tensor teacher_l, teacher_r;
    {
      NoGradGuard no_grad;
      auto b = batch_embeddings(forward_all(p, f, e, dims, mods), batch, n, mods);
      teacher_l = b.joint_left;
      teacher_r = b.joint_right;
    }
    check("total_loss", kLossTol, used, [=] {
      auto b = batch_embeddings(forward_all(p, f, e, dims, mods), batch, n, mods);
      b.teacher_left = teacher_l;
      b.teacher_right = teacher_r;
      return total_loss(b, p.uncert_icl, p.uncert_ial, mods, cfg).total;
    }, kDeepEps);
  }
  return out;
}

}  // namespace mmkg
