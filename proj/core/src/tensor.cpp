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

#include "mmkg/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <numeric>
#include <unordered_set>

#include "mmkg/errors.hpp"

namespace mmkg {

namespace {

thread_local bool t_grad_enabled = true;

struct CorruptHook {
  std::string op;
  double factor = 1.0;
};
CorruptHook g_corrupt;

std::size_t product(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

detail::NodePtr make_leaf(Shape shape, std::vector<double> data, bool requires_grad) {
  for (auto extent : shape) {
    if (extent == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
  }
  if (product(shape) != data.size()) {
    throw DimensionError("shape " + shape_str(shape) + " does not match buffer of " +
                         std::to_string(data.size()));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  node->seq = detail::next_seq();
  return node;
}

const detail::Node& checked(const detail::NodePtr& node) {
  if (!node) throw ContractError("use of an undefined tensor");
  return *node;
}

}  // namespace

std::string shape_str(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

namespace detail {

std::vector<double>& Node::ensure_grad() {
  if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  return grad;
}

std::uint64_t next_seq() {
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;
}

}  // namespace detail

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto n = product(shape);
  return Tensor(make_leaf(std::move(shape), std::vector<double>(n, 0.0), requires_grad));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto n = product(shape);
  return Tensor(make_leaf(std::move(shape), std::vector<double>(n, value), requires_grad));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  return Tensor(make_leaf(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(make_leaf({1}, {value}, requires_grad));
}

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
  Shape shape{values.size()};
  return Tensor(make_leaf(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows,
                      bool requires_grad) {
  if (rows.size() == 0) throw DimensionError("matrix literal needs at least one row");
  const std::size_t cols = rows.begin()->size();
  std::vector<double> data;
  data.reserve(rows.size() * cols);
  for (const auto& row : rows) {
    if (row.size() != cols) throw DimensionError("ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor(make_leaf({rows.size(), cols}, std::move(data), requires_grad));
}

const Shape& Tensor::shape() const { return checked(node_).shape; }
std::size_t Tensor::numel() const { return checked(node_).data.size(); }
std::size_t Tensor::rows() const { return shape().at(0); }
std::size_t Tensor::cols() const { return rank() >= 2 ? shape()[1] : 1; }

std::span<const double> Tensor::data() const { return checked(node_).data; }

std::span<double> Tensor::mutable_data() {
  if (!checked(node_).is_leaf()) {
    throw ContractError(std::string("mutable_data on non-leaf tensor produced by ") + node_->op);
  }
  return node_->data;
}

double Tensor::operator()(std::size_t i) const { return data()[i]; }
double Tensor::operator()(std::size_t i, std::size_t j) const { return data()[i * cols() + j]; }

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

bool Tensor::requires_grad() const { return checked(node_).requires_grad; }
bool Tensor::has_grad() const { return !checked(node_).grad.empty(); }
std::span<const double> Tensor::grad() const { return checked(node_).grad; }

void Tensor::zero_grad() {
  checked(node_);
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

void Tensor::clear_grad() {
  checked(node_);
  node_->grad.clear();
  node_->grad.shrink_to_fit();
}

const char* Tensor::op_name() const { return checked(node_).op; }
std::uint64_t Tensor::id() const { return checked(node_).seq; }
bool Tensor::is_leaf() const { return checked(node_).is_leaf(); }

Tensor Tensor::detach() const {
  const auto& n = checked(node_);
  return Tensor(make_leaf(n.shape, n.data, false));
}

GradTape GradTape::record(const Tensor& root) {
  GradTape tape;
  if (!root.defined()) return tape;
  std::unordered_set<const detail::Node*> seen;
  std::vector<detail::NodePtr> stack_owner{root.node()};
  while (!stack_owner.empty()) {
    auto node = std::move(stack_owner.back());
    stack_owner.pop_back();
    if (!node->requires_grad || !seen.insert(node.get()).second) continue;
    for (const auto& in : node->inputs) stack_owner.push_back(in);
    tape.nodes_.push_back(std::move(node));
  }
  // Sequence numbers are assigned at creation, so ascending seq is a valid
  // topological order.
  std::sort(tape.nodes_.begin(), tape.nodes_.end(),
            [](const auto& a, const auto& b) { return a->seq < b->seq; });
  return tape;
}

bool GradTape::contains(const Tensor& t) const {
  return std::any_of(nodes_.begin(), nodes_.end(),
                     [&](const auto& n) { return n.get() == t.node().get(); });
}

std::vector<std::string> GradTape::op_names() const {
  std::vector<std::string> names;
  names.reserve(nodes_.size());
  for (const auto& n : nodes_) names.emplace_back(n->op);
  return names;
}

void Tensor::backward() const {
  const auto& root = checked(node_);
  if (root.data.size() != 1) {
    throw ContractError("backward() requires a scalar, got shape " + shape_str(root.shape));
  }
  if (!root.requires_grad) throw ContractError("backward() on a tensor with no recorded history");
  auto tape = GradTape::record(*this);
  for (const auto& n : tape.nodes()) {
    if (!n->is_leaf()) n->grad.assign(n->data.size(), 0.0);
  }
  node_->ensure_grad()[0] += 1.0;
  const auto& nodes = tape.nodes();
  for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
    auto& n = **it;
    if (n.is_leaf() || !n.backward) continue;
    if (!g_corrupt.op.empty() && g_corrupt.op == n.op) {
      for (auto& g : n.grad) g *= g_corrupt.factor;
    }
    n.backward(n);
  }
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

namespace testing {
void corrupt_backward(std::string op_name, double factor) {
  g_corrupt.op = std::move(op_name);
  g_corrupt.factor = factor;
}
}  // namespace testing

}  // namespace mmkg
