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

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "mmkg/tensor.hpp"

namespace mmkg {

// Linear algebra
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// Elementwise, same shape on both sides.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

/// a[i][j] + b[j]; b is rank-1 with length cols(a).
Tensor add_row(const Tensor& a, const Tensor& b);
/// a[i][j] * b[j]; b is rank-1 with length cols(a).
Tensor mul_row(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);
/// Every element of a times the single element of s.
Tensor mul_scalar(const Tensor& a, const Tensor& s);

Tensor exp(const Tensor& a);
/// Natural log of max(a, floor). Clamped elements receive zero gradient.
Tensor log(const Tensor& a, double floor = 0.0);
Tensor relu(const Tensor& a);
Tensor leaky_relu(const Tensor& a, double negative_slope = 0.2);

// Reductions
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Per-row sum of a rank-2 tensor, rank-1 result.
Tensor row_sum(const Tensor& a);

// Shape plumbing
Tensor reshape(const Tensor& a, Shape shape);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor gather_rows(const Tensor& a, std::span<const std::size_t> index);
/// out[i][c] = a[i][index[i*width + c]]
Tensor gather_cols(const Tensor& a, std::span<const std::size_t> index,
                   std::size_t width);
/// Contiguous range of a rank-1 tensor.
Tensor slice(const Tensor& a, std::size_t begin, std::size_t length);

// Normalizations
/// softmax(x / temperature) per row.
Tensor row_softmax(const Tensor& x, double temperature = 1.0);
/// log softmax(x / temperature) per row.
Tensor log_row_softmax(const Tensor& x, double temperature = 1.0);
inline constexpr double kNormFloor = 1e-12;
/// Rows with Euclidean norm below kNormFloor pass through unchanged.
Tensor l2_normalize_rows(const Tensor& x);

// Sparse aggregation over an edge list.
/// Softmax of rank-1 scores within each segment.
Tensor segment_softmax(const Tensor& scores, std::span<const std::size_t> segments,
                       std::size_t num_segments);
/// out[s] = sum over e with segments[e]==s of weights[e] * values[e].
Tensor segment_weighted_sum(const Tensor& values, const Tensor& weights,
                            std::span<const std::size_t> segments,
                            std::size_t out_rows);

/// Inverted dropout; identity when p == 0.
Tensor dropout(const Tensor& a, double p, std::mt19937_64& rng);

inline Tensor detach(const Tensor& a) { return a.detach(); }

// Intra-op parallelism. Each output row is produced by exactly one worker, so
// results do not depend on the thread count.
void set_num_threads(std::size_t n);
std::size_t num_threads();

}  // namespace mmkg
