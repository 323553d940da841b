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

#include "mmkg/errors.hpp"
#include "mmkg/gradcheck_suite.hpp"
#include "mmkg/losses.hpp"
#include "mmkg/ops.hpp"
#include "test_util.hpp"

using namespace mmkg;
using mmkg::test::random_matrix;

namespace {

Tensor copy_of(const Tensor& t, bool grad) {
  return Tensor::from_data(t.shape(), {t.data().begin(), t.data().end()}, grad);
}

BatchEmbeddings random_batch(std::size_t b, std::mt19937_64& rng, const ModalitySet& mods) {
  BatchEmbeddings e;
  for (auto m : mods.list()) {
    e.left[index(m)] = random_matrix(b, 3 + index(m), rng);
    e.right[index(m)] = random_matrix(b, 3 + index(m), rng);
  }
  e.joint_left = random_matrix(b, 6, rng);
  e.joint_right = random_matrix(b, 6, rng);
  return e;
}

}  // namespace

TEST_CASE("alignment distribution closed forms") {
  SUBCASE("identical rows spread evenly over 2B-1 candidates") {
    auto x = Tensor::full({4, 3}, 0.7);
    auto q = alignment_distribution(x, x, 0.1);
    CHECK(q.prob.cols() == 7);
    for (double v : q.prob.data()) CHECK(std::abs(v - 1.0 / 7.0) < 1e-15);
    CHECK(std::abs(icl_loss(x, x, 0.1).item() - std::log(7.0)) < 1e-9);
  }
  SUBCASE("orthogonal negatives, unit temperature") {
    auto l = Tensor::matrix({{1, 0}, {0, 1}});
    auto q = alignment_distribution(l, l, 1.0);
    const double e = std::exp(1.0);
    CHECK(q.prob(0, AlignmentDistribution::kPositiveColumn) == doctest::Approx(e / (e + 2)).epsilon(1e-14));
  }
  SUBCASE("perfectly separated batch") {
    auto l = Tensor::matrix({{1, 0}, {-1, 0}});
    const double expect = std::log(1.0 + 2.0 * std::exp(-20.0));
    const double got = icl_loss(l, scale(l, 3.0), 0.1).item();
    CHECK(std::abs(got - expect) < 1e-12);
    CHECK(got < 1e-7);
  }
  SUBCASE("contract checks") {
    auto one = Tensor::zeros({1, 3});
    CHECK_THROWS_AS(alignment_distribution(one, one, 1.0), ContractError);
    auto two = Tensor::full({2, 3}, 1.0);
    CHECK_THROWS_AS(alignment_distribution(two, two, 0.0), ContractError);
    CHECK_THROWS_AS(alignment_distribution(two, Tensor::zeros({2, 4}), 1.0), DimensionError);
  }
}

TEST_CASE("alignment distribution rows are probability vectors and scale free") {
  std::mt19937_64 rng(3);
  auto l = random_matrix(5, 4, rng);
  auto r = random_matrix(5, 4, rng);
  auto q = alignment_distribution(l, r, 0.3);
  std::vector<double> scales{0.5, 2.0, 3.0, 7.0, 0.1};
  std::vector<double> ls(l.data().begin(), l.data().end()), rs(r.data().begin(), r.data().end());
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t c = 0; c < 4; ++c) {
      ls[i * 4 + c] *= scales[i];
      rs[i * 4 + c] *= scales[4 - i];
    }
  auto q2 = alignment_distribution(Tensor::from_data({5, 4}, ls), Tensor::from_data({5, 4}, rs), 0.3);
  for (std::size_t i = 0; i < 5; ++i) {
    double s = 0.0;
    for (std::size_t c = 0; c < 9; ++c) {
      s += q.prob(i, c);
      CHECK(std::abs(q.prob(i, c) - q2.prob(i, c)) < 1e-13);
    }
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
  auto hot = alignment_distribution(l, r, 1e6);
  for (double v : hot.prob.data()) CHECK(std::abs(v - 1.0 / 9.0) < 1e-6);
}

TEST_CASE("contrastive loss is symmetric in the two graphs") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    auto l = random_matrix(6, 5, rng);
    auto r = random_matrix(6, 5, rng);
    CHECK(std::abs(icl_loss(l, r).item() - icl_loss(r, l).item()) < 1e-12);
  }
}

TEST_CASE("distillation loss") {
  std::mt19937_64 rng(5);
  SUBCASE("zero when the modality equals the joint") {
    auto l = random_matrix(5, 4, rng);
    auto r = random_matrix(5, 4, rng);
    CHECK(std::abs(ial_loss(l, r, l, r).item()) < 1e-12);
  }
  SUBCASE("non-negative") {
    for (int trial = 0; trial < 100; ++trial) {
      const std::size_t b = 2 + trial % 6;
      auto v = ial_loss(random_matrix(b, 4, rng), random_matrix(b, 4, rng), random_matrix(b, 3, rng),
                        random_matrix(b, 3, rng), 0.5 + trial % 5);
      CHECK(v.item() >= 0.0);
    }
  }
  SUBCASE("no gradient reaches the teacher") {
    auto jl = random_matrix(4, 5, rng, true);
    auto jr = random_matrix(4, 5, rng, true);
    auto ml = random_matrix(4, 3, rng, true);
    auto mr = random_matrix(4, 3, rng, true);
    auto loss = ial_loss(jl, jr, ml, mr, 2.0);
    loss.backward();
    CHECK_FALSE(jl.has_grad());
    CHECK_FALSE(jr.has_grad());
    CHECK(ml.has_grad());
    auto tape = GradTape::record(loss);
    CHECK_FALSE(tape.contains(jl));
    CHECK_FALSE(tape.contains(jr));
  }
  SUBCASE("gradient equals that of the cross-entropy against the teacher") {
    auto jl = random_matrix(3, 4, rng);
    auto jr = random_matrix(3, 4, rng);
    auto ml = random_matrix(3, 4, rng, true);
    auto mr = random_matrix(3, 4, rng, true);
    const double tau = 4.0;
    ial_loss(jl, jr, ml, mr, tau).backward();
    std::vector<double> g_kl(ml.grad().begin(), ml.grad().end());
    ml.clear_grad();
    mr.clear_grad();
    auto p12 = alignment_distribution(jl, jr, tau).prob.detach();
    auto p21 = alignment_distribution(jr, jl, tau).prob.detach();
    auto ce = add(sum(mul(p12, alignment_distribution(ml, mr, tau).log_prob)),
                  sum(mul(p21, alignment_distribution(mr, ml, tau).log_prob)));
    scale(ce, -0.5 / 3.0).backward();
    for (std::size_t i = 0; i < g_kl.size(); ++i) CHECK(g_kl[i] == doctest::Approx(ml.grad()[i]).epsilon(1e-12));
  }
}

TEST_CASE("total loss") {
  std::mt19937_64 rng(6);
  ModalitySet mods;
  LossConfig cfg;
  SUBCASE("unit weights add the parts") {
    auto batch = random_batch(4, rng, mods);
    auto parts = total_loss(batch, Tensor::zeros({5}), Tensor::zeros({5}), mods, cfg);
    double expect = parts.icl_joint;
    for (std::size_t k = 0; k < 5; ++k) expect += *parts.icl[k] + *parts.ial[k];
    CHECK(std::abs(parts.total_value() - expect) < 1e-12);
    CHECK(parts.alpha[0] == 1.0);
  }
  SUBCASE("the parts re-sum to the total") {
    for (int trial = 0; trial < 20; ++trial) {
      mods.set(Modality::Visual, trial % 2 == 0);
      auto batch = random_batch(3 + trial % 4, rng, mods);
      auto s = random_matrix(1, 5, rng), t = random_matrix(1, 5, rng);
      auto parts = total_loss(batch, reshape(s, {5}), reshape(t, {5}), mods, cfg);
      CHECK(std::abs(resum(parts, cfg) - parts.total_value()) < 1e-10);
    }
  }
  SUBCASE("ablation switches drop their terms") {
    auto batch = random_batch(4, rng, mods);
    cfg.icl = false;
    auto parts = total_loss(batch, Tensor::zeros({5}), Tensor::zeros({5}), mods, cfg);
    CHECK_FALSE(parts.icl[0].has_value());
    CHECK(parts.ial[0].has_value());
  }
  SUBCASE("a non-finite weight is named") {
    auto batch = random_batch(3, rng, mods);
    auto bad = Tensor::vector({0, 0, NAN, 0, 0});
    try {
      total_loss(batch, bad, Tensor::zeros({5}), mods, cfg);
      FAIL("expected an error");
    } catch (const NumericError& e) {
      CHECK(std::string(e.what()).find("attribute") != std::string::npos);
    }
  }
}

TEST_CASE("learned weight is stationary at alpha squared = 2 l") {
  const double l = 0.5;
  auto f = [&](double a) { return l / (a * a) + std::log(a); };
  const double h = 1e-5;
  CHECK(std::abs((f(1.0 + h) - f(1.0 - h)) / (2 * h)) < 1e-6);
  // Same point in the log parameterization used for training.
  auto s = Tensor::vector({0.0}, true);
  add(scale(exp(scale(s, -1.0)), l), scale(s, 0.5)).backward();
  CHECK(std::abs(s.grad()[0]) < 1e-12);
}

TEST_CASE("gradient check suite passes") {
  for (const auto& r : run_gradcheck_suite()) {
    INFO(r.component);
    CHECK(r.passed());
  }
}
