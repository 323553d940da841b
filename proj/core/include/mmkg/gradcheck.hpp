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

#include <functional>
#include <span>

#include "mmkg/tensor.hpp"

namespace mmkg {

/// Largest relative disagreement between the analytic gradient of `f` and
/// central differences (f(x+eps) - f(x-eps)) / (2 eps), over every coordinate
/// of every parameter. The denominator is max(|analytic|, |numeric|, 1e-8).
///
/// `f` must rebuild its graph on each call and return a scalar. Parameters
/// are perturbed in place and restored; their gradients are overwritten.
double grad_check(const std::function<Tensor()>& f, std::span<Tensor> params,
                  double eps = 1e-6);

}  // namespace mmkg
