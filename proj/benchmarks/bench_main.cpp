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

#include <benchmark/benchmark.h>

#include <random>

#include "mmkg/encoders.hpp"
#include "mmkg/losses.hpp"
#include "mmkg/ops.hpp"
#include "mmkg/synth.hpp"
#include "mmkg/train.hpp"

using namespace mmkg;

namespace {

Tensor random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed, bool grad = false) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  std::vector<double> v(rows * cols);
  for (auto& x : v) x = n(rng);
  return Tensor::from_data({rows, cols}, std::move(v), grad);
}

struct Setup {
  KgPair pair;
  FeatureBundle features;
  EdgeList edges;

  explicit Setup(std::size_t n) {
    SynthSpec spec;
    spec.n_entities = n;
    pair = synth_generate(spec, 1);
    auto s = split_alignments(pair.reference, 0.3, 0.1, 42);
    pair.train_seeds = s.train;
    pair.dev_seeds = s.dev;
    pair.test_pairs = s.test;
    features = build_features(pair);
    edges = make_edges(features.adjacency);
  }
};

}  // namespace

static void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  auto a = random_matrix(n, n, 1), b = random_matrix(n, n, 2);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(256)->Arg(512);

static void BM_MatmulBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) {
    state.PauseTiming();
    auto a = random_matrix(n, n, 1, true), b = random_matrix(n, n, 2, true);
    state.ResumeTiming();
    sum(matmul(a, b)).backward();
  }
}
BENCHMARK(BM_MatmulBackward)->Arg(256);

static void BM_StructureForwardBackward(benchmark::State& state) {
  Setup s(static_cast<std::size_t>(state.range(0)));
  ModelDims dims;
  auto params = init_params(dims, s.features, 3);
  for (auto _ : state) {
    auto h = structure_encode(params, s.edges, dims);
    sum(h).backward();
  }
}
BENCHMARK(BM_StructureForwardBackward)->Arg(200)->Unit(benchmark::kMillisecond);

static void BM_IclLoss(benchmark::State& state) {
  const auto b = static_cast<std::size_t>(state.range(0));
  auto l = random_matrix(b, 100, 4, true), r = random_matrix(b, 100, 5, true);
  for (auto _ : state) icl_loss(l, r).backward();
}
BENCHMARK(BM_IclLoss)->Arg(64)->Arg(512);

static void BM_TrainEpoch(benchmark::State& state) {
  Setup s(200);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.eval_every = 1;
  for (auto _ : state) benchmark::DoNotOptimize(train(cfg, s.pair, s.features));
}
BENCHMARK(BM_TrainEpoch)->Unit(benchmark::kMillisecond)->Iterations(3);
BENCHMARK_MAIN();
