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
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mmkg {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);

namespace detail {

struct Node;
using NodePtr = std::shared_ptr<Node>;

/// One recorded value. Leaves have no inputs; an operation output keeps its
/// inputs alive and knows how to push its gradient back into them.
struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::uint64_t seq = 0;  // creation order; inputs always have smaller seq
  const char* op = "leaf";
  std::vector<NodePtr> inputs;
  std::function<void(Node&)> backward;

  bool is_leaf() const { return inputs.empty(); }
  std::vector<double>& ensure_grad();
};

std::uint64_t next_seq();

}  // namespace detail

/// Dense row-major array of doubles with optional reverse-mode history.
///
/// Copies share the underlying storage, so a Tensor is a cheap handle. Values
/// are never mutated after creation except through `mutable_data()` on leaves
/// (optimizer updates, finite-difference probes) and the gradient buffer.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor vector(std::vector<double> values, bool requires_grad = false);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows,
                       bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;
  /// First extent. For rank-1 tensors this is the length.
  std::size_t rows() const;
  /// Second extent, or 1 for rank-1 tensors.
  std::size_t cols() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  double operator()(std::size_t i) const;
  double operator()(std::size_t i, std::size_t j) const;
  double item() const;

  bool requires_grad() const;
  bool has_grad() const;
  /// Empty span when no gradient has been accumulated.
  std::span<const double> grad() const;
  void zero_grad();
  /// Drops the gradient buffer entirely; has_grad() becomes false.
  void clear_grad();

  const char* op_name() const;
  std::uint64_t id() const;
  bool is_leaf() const;

  /// Reverse pass from this scalar. Leaf gradients accumulate across calls;
  /// intermediate gradients are reset at the start of every pass.
  void backward() const;

  Tensor detach() const;

  const detail::NodePtr& node() const { return node_; }
  explicit Tensor(detail::NodePtr node) : node_(std::move(node)) {}

 private:
  detail::NodePtr node_;
};

/// Ordered record of the operations reachable from a root, inputs first.
class GradTape {
 public:
  static GradTape record(const Tensor& root);

  std::size_t size() const { return nodes_.size(); }
  bool contains(const Tensor& t) const;
  /// Names of recorded operations in topological order.
  std::vector<std::string> op_names() const;
  const std::vector<detail::NodePtr>& nodes() const { return nodes_; }

 private:
  std::vector<detail::NodePtr> nodes_;
};

bool grad_enabled();

/// Disables history recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace testing {
/// Fault injection for verification tooling: the backward rule of the named
/// operation receives a scaled upstream gradient. Empty name disables it.
void corrupt_backward(std::string op_name, double factor = 1.5);
}  // namespace testing

}  // namespace mmkg
