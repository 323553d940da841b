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
#include <span>
#include <vector>

#include "mmkg/tensor.hpp"

namespace mmkg {

struct AdamWOptions {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  friend bool operator==(const AdamWOptions&, const AdamWOptions&) = default;
};

/// Per-parameter first/second moments plus the shared step counter.
struct AdamWState {
  AdamWOptions options;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::uint64_t t = 0;
};

AdamWState make_adamw_state(std::span<const Tensor> params, AdamWOptions options = {});

/// One decoupled-weight-decay Adam update of every parameter in place:
///   theta -= lr * wd * theta
///   theta -= lr * m_hat / (sqrt(v_hat) + eps)
/// A parameter with no accumulated gradient (never reached by backward since
/// its last clear) is skipped entirely, weight decay included. Increments t.
void adamw_step(AdamWState& state, std::span<Tensor> params);

/// Same update with gradients supplied separately; grads[i] must match the
/// element count of params[i] or be empty (skip).
void adamw_step(AdamWState& state, std::span<Tensor> params,
                std::span<const std::span<const double>> grads);

class AdamW {
 public:
  AdamW(std::vector<Tensor> params, AdamWOptions options = {});

  void zero_grad();
  void step();

  const AdamWState& state() const { return state_; }
  const std::vector<Tensor>& params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  AdamWState state_;
};

}  // namespace mmkg
