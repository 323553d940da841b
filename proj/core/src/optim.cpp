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

#include "mmkg/optim.hpp"

#include <cmath>
#include <string>

#include "mmkg/errors.hpp"

namespace mmkg {

AdamWState make_adamw_state(std::span<const Tensor> params, AdamWOptions options) {
  AdamWState state;
  state.options = options;
  for (const auto& p : params) {
    state.m.emplace_back(p.numel(), 0.0);
    state.v.emplace_back(p.numel(), 0.0);
  }
  return state;
}

void adamw_step(AdamWState& state, std::span<Tensor> params,
                std::span<const std::span<const double>> grads) {
  if (params.size() != state.m.size() || grads.size() != params.size()) {
    throw DimensionError("adamw_step: " + std::to_string(params.size()) + " params, " +
                         std::to_string(grads.size()) + " grads, state for " +
                         std::to_string(state.m.size()));
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto n = params[k].numel();
    if (state.m[k].size() != n || (!grads[k].empty() && grads[k].size() != n)) {
      throw DimensionError("adamw_step: parameter " + std::to_string(k) + " of shape " +
                           shape_str(params[k].shape()) + " disagrees with its state/gradient");
    }
  }
  const auto& o = state.options;
  state.t += 1;
  const double bias1 = 1.0 - std::pow(o.beta1, static_cast<double>(state.t));
  const double bias2 = 1.0 - std::pow(o.beta2, static_cast<double>(state.t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto g = grads[k];
    if (g.empty()) continue;
    auto theta = params[k].mutable_data();
    auto& m = state.m[k];
    auto& v = state.v[k];
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double gi = g[i];
      theta[i] -= o.lr * o.weight_decay * theta[i];
      m[i] = o.beta1 * m[i] + (1.0 - o.beta1) * gi;
      v[i] = o.beta2 * v[i] + (1.0 - o.beta2) * gi * gi;
      const double m_hat = m[i] / bias1;
      const double v_hat = v[i] / bias2;
      theta[i] -= o.lr * m_hat / (std::sqrt(v_hat) + o.eps);
    }
  }
}

void adamw_step(AdamWState& state, std::span<Tensor> params) {
  std::vector<std::span<const double>> grads;
  grads.reserve(params.size());
  for (const auto& p : params) grads.push_back(p.grad());
  adamw_step(state, params, grads);
}

AdamW::AdamW(std::vector<Tensor> params, AdamWOptions options)
    : params_(std::move(params)), state_(make_adamw_state(params_, options)) {}

void AdamW::zero_grad() {
  for (auto& p : params_) p.clear_grad();
}

void AdamW::step() { adamw_step(state_, params_); }

}  // namespace mmkg
