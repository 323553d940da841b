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

#include "mmkg/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <thread>

#include "mmkg/errors.hpp"

namespace mmkg {

namespace {

using detail::Node;
using detail::NodePtr;

std::size_t g_threads = 1;

template <class Fn>
void parallel_rows(std::size_t n, Fn&& fn) {
  const std::size_t workers = std::min(g_threads, n);
  if (workers <= 1 || n < 64) {
    fn(std::size_t{0}, n);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 1; w < workers; ++w) {
    const std::size_t lo = w * chunk;
    const std::size_t hi = std::min(n, lo + chunk);
    if (lo < hi) pool.emplace_back([&fn, lo, hi] { fn(lo, hi); });
  }
  fn(std::size_t{0}, std::min(n, chunk));
  for (auto& t : pool) t.join();
}

/// Builds an op output. History is recorded only when grad mode is on and at
/// least one input requires a gradient.
Tensor make_op(const char* name, Shape shape, std::vector<double> data,
               std::vector<NodePtr> inputs, std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->seq = detail::next_seq();
  node->op = name;
  bool needs = false;
  if (grad_enabled()) {
    for (const auto& in : inputs) needs = needs || in->requires_grad;
  }
  if (needs) {
    node->requires_grad = true;
    node->inputs = std::move(inputs);
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

/// Gradient buffer of an input, or nullptr if it takes no gradient.
std::vector<double>* grad_of(Node& self, std::size_t k) {
  auto& in = *self.inputs[k];
  return in.requires_grad ? &in.ensure_grad() : nullptr;
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + " expects a matrix, got " + shape_str(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
  }
}

void require_finite(std::span<const double> data, const char* op) {
  for (double v : data) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite input");
  }
}

template <class Fwd, class Bwd>
Tensor unary(const char* name, const Tensor& a, Fwd fwd, Bwd dydx) {
  auto x = a.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = fwd(x[i]);
  return make_op(name, a.shape(), std::move(out), {a.node()}, [dydx](Node& self) {
    auto* ga = grad_of(self, 0);
    if (!ga) return;
    const auto& x = self.inputs[0]->data;
    for (std::size_t i = 0; i < x.size(); ++i) (*ga)[i] += self.grad[i] * dydx(x[i], self.data[i]);
  });
}

}  // namespace

void set_num_threads(std::size_t n) { g_threads = std::max<std::size_t>(1, n); }
std::size_t num_threads() { return g_threads; }

namespace {

// C[i,:] += sum_p A[i,p] * B[p,:] for rows [lo, hi). Four rows share every
// load of B; each element still sums over p in order, so a row's result does
// not depend on how rows are partitioned.
void gemm_rows(const double* A, const double* B, double* C, std::size_t lo, std::size_t hi,
               std::size_t k, std::size_t n) {
  std::size_t i = lo;
  for (; i + 4 <= hi; i += 4) {
    double* c0 = C + i * n;
    double* c1 = c0 + n;
    double* c2 = c1 + n;
    double* c3 = c2 + n;
    const double* a0 = A + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double x0 = a0[p], x1 = a0[k + p], x2 = a0[2 * k + p], x3 = a0[3 * k + p];
      if (x0 == 0.0 && x1 == 0.0 && x2 == 0.0 && x3 == 0.0) continue;
      const double* b = B + p * n;
      for (std::size_t j = 0; j < n; ++j) {
        const double bj = b[j];
        c0[j] += x0 * bj;
        c1[j] += x1 * bj;
        c2[j] += x2 * bj;
        c3[j] += x3 * bj;
      }
    }
  }
  for (; i < hi; ++i) {
    double* c = C + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double x = A[i * k + p];
      if (x == 0.0) continue;
      const double* b = B + p * n;
      for (std::size_t j = 0; j < n; ++j) c[j] += x * b[j];
    }
  }
}

std::vector<double> transposed(std::span<const double> x, std::size_t m, std::size_t n) {
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = x[i * n + j];
  return out;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  const double* A = a.data().data();
  const double* B = b.data().data();
  parallel_rows(m, [&](std::size_t lo, std::size_t hi) { gemm_rows(A, B, out.data(), lo, hi, k, n); });
  return make_op("matmul", {m, n}, std::move(out), {a.node(), b.node()},
                 [m, k, n](Node& self) {
                   const auto& A = self.inputs[0]->data;
                   const auto& B = self.inputs[1]->data;
                   const auto& G = self.grad;
                   if (auto* ga = grad_of(self, 0)) {
                     // dA = dC * B^T
                     const auto bt = transposed(B, k, n);
                     parallel_rows(m, [&](std::size_t lo, std::size_t hi) {
                       gemm_rows(G.data(), bt.data(), ga->data(), lo, hi, n, k);
                     });
                   }
                   if (auto* gb = grad_of(self, 1)) {
                     // dB = A^T * dC, partitioned over rows of B.
                     const auto at = transposed(A, m, k);
                     parallel_rows(k, [&](std::size_t lo, std::size_t hi) {
                       gemm_rows(at.data(), G.data(), gb->data(), lo, hi, m, n);
                     });
                   }
                 });
}

Tensor transpose(const Tensor& a) {
  require_rank2(a, "transpose");
  const std::size_t m = a.rows(), n = a.cols();
  auto x = a.data();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = x[i * n + j];
  return make_op("transpose", {n, m}, std::move(out), {a.node()}, [m, n](Node& self) {
    auto* ga = grad_of(self, 0);
    if (!ga) return;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) (*ga)[i * n + j] += self.grad[j * m + i];
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  auto x = a.data(), y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
  return make_op("add", a.shape(), std::move(out), {a.node(), b.node()}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (auto* g = grad_of(self, k))
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  auto x = a.data(), y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - y[i];
  return make_op("sub", a.shape(), std::move(out), {a.node(), b.node()}, [](Node& self) {
    if (auto* g = grad_of(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    if (auto* g = grad_of(self, 1))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= self.grad[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  auto x = a.data(), y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
  return make_op("mul", a.shape(), std::move(out), {a.node(), b.node()}, [](Node& self) {
    const auto& x = self.inputs[0]->data;
    const auto& y = self.inputs[1]->data;
    if (auto* g = grad_of(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * y[i];
    if (auto* g = grad_of(self, 1))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * x[i];
  });
}

namespace {
void require_row_vector(const Tensor& a, const Tensor& b, const char* op) {
  require_rank2(a, op);
  if (b.rank() != 1 || b.rows() != a.cols()) {
    throw DimensionError(std::string(op) + ": row operand " + shape_str(b.shape()) +
                         " does not fit " + shape_str(a.shape()));
  }
}
}  // namespace

Tensor add_row(const Tensor& a, const Tensor& b) {
  require_row_vector(a, b, "add_row");
  const std::size_t m = a.rows(), n = a.cols();
  auto x = a.data(), y = b.data();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = x[i * n + j] + y[j];
  return make_op("add_row", a.shape(), std::move(out), {a.node(), b.node()},
                 [m, n](Node& self) {
                   if (auto* g = grad_of(self, 0))
                     for (std::size_t i = 0; i < m * n; ++i) (*g)[i] += self.grad[i];
                   if (auto* g = grad_of(self, 1))
                     for (std::size_t i = 0; i < m; ++i)
                       for (std::size_t j = 0; j < n; ++j) (*g)[j] += self.grad[i * n + j];
                 });
}

Tensor mul_row(const Tensor& a, const Tensor& b) {
  require_row_vector(a, b, "mul_row");
  const std::size_t m = a.rows(), n = a.cols();
  auto x = a.data(), y = b.data();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = x[i * n + j] * y[j];
  return make_op("mul_row", a.shape(), std::move(out), {a.node(), b.node()},
                 [m, n](Node& self) {
                   const auto& x = self.inputs[0]->data;
                   const auto& y = self.inputs[1]->data;
                   if (auto* g = grad_of(self, 0))
                     for (std::size_t i = 0; i < m; ++i)
                       for (std::size_t j = 0; j < n; ++j)
                         (*g)[i * n + j] += self.grad[i * n + j] * y[j];
                   if (auto* g = grad_of(self, 1))
                     for (std::size_t i = 0; i < m; ++i)
                       for (std::size_t j = 0; j < n; ++j)
                         (*g)[j] += self.grad[i * n + j] * x[i * n + j];
                 });
}

Tensor scale(const Tensor& a, double factor) {
  return unary(
      "scale", a, [factor](double x) { return x * factor; },
      [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double value) {
  return unary(
      "add_scalar", a, [value](double x) { return x + value; },
      [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& a, const Tensor& s) {
  if (s.numel() != 1) throw DimensionError("mul_scalar: factor must have one element, got " +
                                           shape_str(s.shape()));
  const double f = s.data()[0];
  auto x = a.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * f;
  return make_op("mul_scalar", a.shape(), std::move(out), {a.node(), s.node()},
                 [](Node& self) {
                   const auto& x = self.inputs[0]->data;
                   const double f = self.inputs[1]->data[0];
                   if (auto* g = grad_of(self, 0))
                     for (std::size_t i = 0; i < x.size(); ++i) (*g)[i] += self.grad[i] * f;
                   if (auto* g = grad_of(self, 1)) {
                     double acc = 0.0;
                     for (std::size_t i = 0; i < x.size(); ++i) acc += self.grad[i] * x[i];
                     (*g)[0] += acc;
                   }
                 });
}

Tensor exp(const Tensor& a) {
  return unary(
      "exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a, double floor) {
  return unary(
      "log", a, [floor](double x) { return std::log(std::max(x, floor)); },
      [floor](double x, double) { return x > floor ? 1.0 / x : 0.0; });
}

Tensor relu(const Tensor& a) {
  return unary(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor leaky_relu(const Tensor& a, double negative_slope) {
  return unary(
      "leaky_relu", a, [negative_slope](double x) { return x > 0.0 ? x : negative_slope * x; },
      [negative_slope](double x, double) { return x > 0.0 ? 1.0 : negative_slope; });
}

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  return make_op("sum", {1}, {acc}, {a.node()}, [](Node& self) {
    if (auto* g = grad_of(self, 0))
      for (auto& v : *g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  const double n = static_cast<double>(a.numel());
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  return make_op("mean", {1}, {acc / n}, {a.node()}, [n](Node& self) {
    if (auto* g = grad_of(self, 0))
      for (auto& v : *g) v += self.grad[0] / n;
  });
}

Tensor row_sum(const Tensor& a) {
  require_rank2(a, "row_sum");
  const std::size_t m = a.rows(), n = a.cols();
  auto x = a.data();
  std::vector<double> out(m, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i] += x[i * n + j];
  return make_op("row_sum", {m}, std::move(out), {a.node()}, [m, n](Node& self) {
    if (auto* g = grad_of(self, 0))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) (*g)[i * n + j] += self.grad[i];
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  if (n != a.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                         shape_str(shape));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  return make_op("reshape", std::move(shape), std::move(out), {a.node()}, [](Node& self) {
    if (auto* g = grad_of(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t m = parts[0].rows();
  std::vector<std::size_t> widths;
  std::vector<NodePtr> inputs;
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_rank2(p, "concat_cols");
    if (p.rows() != m) {
      throw DimensionError("concat_cols: row counts differ, " + shape_str(parts[0].shape()) +
                           " vs " + shape_str(p.shape()));
    }
    widths.push_back(p.cols());
    inputs.push_back(p.node());
    total += p.cols();
  }
  std::vector<double> out(m * total);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto x = parts[k].data();
    const std::size_t w = widths[k];
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(x.data() + i * w, w, out.data() + i * total + off);
    off += w;
  }
  return make_op("concat_cols", {m, total}, std::move(out), std::move(inputs),
                 [m, total, widths](Node& self) {
                   std::size_t off = 0;
                   for (std::size_t k = 0; k < widths.size(); ++k) {
                     const std::size_t w = widths[k];
                     if (auto* g = grad_of(self, k))
                       for (std::size_t i = 0; i < m; ++i)
                         for (std::size_t j = 0; j < w; ++j)
                           (*g)[i * w + j] += self.grad[i * total + off + j];
                     off += w;
                   }
                 });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t n = parts[0].cols();
  std::vector<NodePtr> inputs;
  std::vector<std::size_t> sizes;
  std::vector<double> out;
  std::size_t m = 0;
  for (const auto& p : parts) {
    require_rank2(p, "concat_rows");
    if (p.cols() != n) {
      throw DimensionError("concat_rows: column counts differ, " +
                           shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
    }
    out.insert(out.end(), p.data().begin(), p.data().end());
    inputs.push_back(p.node());
    sizes.push_back(p.numel());
    m += p.rows();
  }
  return make_op("concat_rows", {m, n}, std::move(out), std::move(inputs),
                 [sizes](Node& self) {
                   std::size_t off = 0;
                   for (std::size_t k = 0; k < sizes.size(); ++k) {
                     if (auto* g = grad_of(self, k))
                       for (std::size_t i = 0; i < sizes[k]; ++i) (*g)[i] += self.grad[off + i];
                     off += sizes[k];
                   }
                 });
}

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> index) {
  if (index.empty()) throw DimensionError("gather_rows: empty index");
  const std::size_t m = a.rows();
  const std::size_t w = a.numel() / m;
  for (auto r : index) {
    if (r >= m) {
      throw IndexError("gather_rows: row " + std::to_string(r) + " out of range for " +
                       shape_str(a.shape()));
    }
  }
  auto x = a.data();
  std::vector<double> out(index.size() * w);
  for (std::size_t i = 0; i < index.size(); ++i)
    std::copy_n(x.data() + index[i] * w, w, out.data() + i * w);
  Shape shape = a.shape();
  shape[0] = index.size();
  std::vector<std::size_t> idx(index.begin(), index.end());
  return make_op("gather_rows", std::move(shape), std::move(out), {a.node()},
                 [idx = std::move(idx), w](Node& self) {
                   auto* g = grad_of(self, 0);
                   if (!g) return;
                   for (std::size_t i = 0; i < idx.size(); ++i)
                     for (std::size_t j = 0; j < w; ++j)
                       (*g)[idx[i] * w + j] += self.grad[i * w + j];
                 });
}

Tensor gather_cols(const Tensor& a, std::span<const std::size_t> index, std::size_t width) {
  require_rank2(a, "gather_cols");
  const std::size_t m = a.rows(), n = a.cols();
  if (width == 0 || index.size() != m * width) {
    throw DimensionError("gather_cols: index of " + std::to_string(index.size()) +
                         " entries does not give width " + std::to_string(width) + " for " +
                         shape_str(a.shape()));
  }
  for (auto c : index) {
    if (c >= n) {
      throw IndexError("gather_cols: column " + std::to_string(c) + " out of range for " +
                       shape_str(a.shape()));
    }
  }
  auto x = a.data();
  std::vector<double> out(m * width);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t c = 0; c < width; ++c) out[i * width + c] = x[i * n + index[i * width + c]];
  std::vector<std::size_t> idx(index.begin(), index.end());
  return make_op("gather_cols", {m, width}, std::move(out), {a.node()},
                 [idx = std::move(idx), m, n, width](Node& self) {
                   auto* g = grad_of(self, 0);
                   if (!g) return;
                   for (std::size_t i = 0; i < m; ++i)
                     for (std::size_t c = 0; c < width; ++c)
                       (*g)[i * n + idx[i * width + c]] += self.grad[i * width + c];
                 });
}

Tensor slice(const Tensor& a, std::size_t begin, std::size_t length) {
  if (a.rank() != 1) throw DimensionError("slice expects a vector, got " + shape_str(a.shape()));
  if (length == 0 || begin + length > a.numel()) {
    throw IndexError("slice [" + std::to_string(begin) + ", " + std::to_string(begin + length) +
                     ") out of range for " + shape_str(a.shape()));
  }
  std::vector<double> out(a.data().begin() + static_cast<std::ptrdiff_t>(begin),
                          a.data().begin() + static_cast<std::ptrdiff_t>(begin + length));
  return make_op("slice", {length}, std::move(out), {a.node()}, [begin, length](Node& self) {
    if (auto* g = grad_of(self, 0))
      for (std::size_t i = 0; i < length; ++i) (*g)[begin + i] += self.grad[i];
  });
}

namespace {

void check_softmax_args(const Tensor& x, double temperature, const char* op) {
  if (!(temperature > 0.0)) {
    throw ContractError(std::string(op) + ": temperature must be positive, got " +
                        std::to_string(temperature));
  }
  require_finite(x.data(), op);
}

/// Row-wise softmax of x/t and its log, stabilized by the row maximum.
void softmax_rows(std::span<const double> x, std::size_t m, std::size_t n, double t,
                  std::vector<double>& prob, std::vector<double>* logp) {
  prob.resize(m * n);
  if (logp) logp->resize(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = x.data() + i * n;
    double mx = row[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double e = std::exp((row[j] - mx) / t);
      prob[i * n + j] = e;
      z += e;
    }
    const double logz = std::log(z);
    for (std::size_t j = 0; j < n; ++j) {
      prob[i * n + j] /= z;
      if (logp) (*logp)[i * n + j] = (row[j] - mx) / t - logz;
    }
  }
}

}  // namespace

Tensor row_softmax(const Tensor& x, double temperature) {
  check_softmax_args(x, temperature, "row_softmax");
  const std::size_t m = x.rank() == 1 ? 1 : x.rows();
  const std::size_t n = x.numel() / m;
  std::vector<double> prob;
  softmax_rows(x.data(), m, n, temperature, prob, nullptr);
  return make_op("row_softmax", x.shape(), std::move(prob), {x.node()},
                 [m, n, temperature](Node& self) {
                   auto* g = grad_of(self, 0);
                   if (!g) return;
                   const auto& y = self.data;
                   for (std::size_t i = 0; i < m; ++i) {
                     double dot = 0.0;
                     for (std::size_t j = 0; j < n; ++j) dot += self.grad[i * n + j] * y[i * n + j];
                     for (std::size_t j = 0; j < n; ++j)
                       (*g)[i * n + j] += y[i * n + j] * (self.grad[i * n + j] - dot) / temperature;
                   }
                 });
}

Tensor log_row_softmax(const Tensor& x, double temperature) {
  check_softmax_args(x, temperature, "log_row_softmax");
  const std::size_t m = x.rank() == 1 ? 1 : x.rows();
  const std::size_t n = x.numel() / m;
  std::vector<double> prob, logp;
  softmax_rows(x.data(), m, n, temperature, prob, &logp);
  return make_op("log_row_softmax", x.shape(), std::move(logp), {x.node()},
                 [m, n, temperature, prob = std::move(prob)](Node& self) {
                   auto* g = grad_of(self, 0);
                   if (!g) return;
                   for (std::size_t i = 0; i < m; ++i) {
                     double gs = 0.0;
                     for (std::size_t j = 0; j < n; ++j) gs += self.grad[i * n + j];
                     for (std::size_t j = 0; j < n; ++j)
                       (*g)[i * n + j] +=
                           (self.grad[i * n + j] - prob[i * n + j] * gs) / temperature;
                   }
                 });
}

Tensor l2_normalize_rows(const Tensor& x) {
  const std::size_t m = x.rank() == 1 ? 1 : x.rows();
  const std::size_t n = x.numel() / m;
  auto v = x.data();
  std::vector<double> out(v.begin(), v.end());
  std::vector<double> norms(m);
  for (std::size_t i = 0; i < m; ++i) {
    double ss = 0.0;
    for (std::size_t j = 0; j < n; ++j) ss += v[i * n + j] * v[i * n + j];
    norms[i] = std::sqrt(ss);
    if (norms[i] < kNormFloor) continue;
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= norms[i];
  }
  return make_op("l2_normalize_rows", x.shape(), std::move(out), {x.node()},
                 [m, n, norms = std::move(norms)](Node& self) {
                   auto* g = grad_of(self, 0);
                   if (!g) return;
                   const auto& y = self.data;
                   for (std::size_t i = 0; i < m; ++i) {
                     if (norms[i] < kNormFloor) {
                       for (std::size_t j = 0; j < n; ++j) (*g)[i * n + j] += self.grad[i * n + j];
                       continue;
                     }
                     // d(x/|x|) = (g - y (g.y)) / |x|
                     double dot = 0.0;
                     for (std::size_t j = 0; j < n; ++j) dot += self.grad[i * n + j] * y[i * n + j];
                     for (std::size_t j = 0; j < n; ++j)
                       (*g)[i * n + j] += (self.grad[i * n + j] - y[i * n + j] * dot) / norms[i];
                   }
                 });
}

Tensor segment_softmax(const Tensor& scores, std::span<const std::size_t> segments,
                       std::size_t num_segments) {
  if (scores.rank() != 1 || scores.numel() != segments.size()) {
    throw DimensionError("segment_softmax: scores " + shape_str(scores.shape()) +
                         " do not match " + std::to_string(segments.size()) + " segments");
  }
  require_finite(scores.data(), "segment_softmax");
  const std::size_t e = segments.size();
  for (auto s : segments) {
    if (s >= num_segments) {
      throw IndexError("segment_softmax: segment " + std::to_string(s) + " >= " +
                       std::to_string(num_segments));
    }
  }
  auto x = scores.data();
  std::vector<double> mx(num_segments, -std::numeric_limits<double>::infinity());
  for (std::size_t k = 0; k < e; ++k) mx[segments[k]] = std::max(mx[segments[k]], x[k]);
  std::vector<double> out(e), z(num_segments, 0.0);
  for (std::size_t k = 0; k < e; ++k) {
    out[k] = std::exp(x[k] - mx[segments[k]]);
    z[segments[k]] += out[k];
  }
  for (std::size_t k = 0; k < e; ++k) out[k] /= z[segments[k]];
  std::vector<std::size_t> seg(segments.begin(), segments.end());
  return make_op("segment_softmax", {e}, std::move(out), {scores.node()},
                 [seg = std::move(seg), num_segments](Node& self) {
                   auto* g = grad_of(self, 0);
                   if (!g) return;
                   const auto& y = self.data;
                   std::vector<double> dot(num_segments, 0.0);
                   for (std::size_t k = 0; k < seg.size(); ++k) dot[seg[k]] += self.grad[k] * y[k];
                   for (std::size_t k = 0; k < seg.size(); ++k)
                     (*g)[k] += y[k] * (self.grad[k] - dot[seg[k]]);
                 });
}

Tensor segment_weighted_sum(const Tensor& values, const Tensor& weights,
                            std::span<const std::size_t> segments, std::size_t out_rows) {
  require_rank2(values, "segment_weighted_sum");
  const std::size_t e = values.rows(), d = values.cols();
  if (weights.numel() != e || segments.size() != e) {
    throw DimensionError("segment_weighted_sum: values " + shape_str(values.shape()) +
                         ", weights " + shape_str(weights.shape()) + ", " +
                         std::to_string(segments.size()) + " segment ids");
  }
  for (auto s : segments) {
    if (s >= out_rows) {
      throw IndexError("segment_weighted_sum: segment " + std::to_string(s) + " >= " +
                       std::to_string(out_rows));
    }
  }
  auto v = values.data();
  auto w = weights.data();
  std::vector<double> out(out_rows * d, 0.0);
  for (std::size_t k = 0; k < e; ++k) {
    double* o = out.data() + segments[k] * d;
    const double* row = v.data() + k * d;
    for (std::size_t j = 0; j < d; ++j) o[j] += w[k] * row[j];
  }
  std::vector<std::size_t> seg(segments.begin(), segments.end());
  return make_op("segment_weighted_sum", {out_rows, d}, std::move(out),
                 {values.node(), weights.node()}, [seg = std::move(seg), d](Node& self) {
                   const auto& v = self.inputs[0]->data;
                   const auto& w = self.inputs[1]->data;
                   auto* gv = grad_of(self, 0);
                   auto* gw = grad_of(self, 1);
                   for (std::size_t k = 0; k < seg.size(); ++k) {
                     const double* go = self.grad.data() + seg[k] * d;
                     if (gv)
                       for (std::size_t j = 0; j < d; ++j) (*gv)[k * d + j] += w[k] * go[j];
                     if (gw) {
                       double acc = 0.0;
                       for (std::size_t j = 0; j < d; ++j) acc += v[k * d + j] * go[j];
                       (*gw)[k] += acc;
                     }
                   }
                 });
}

Tensor dropout(const Tensor& a, double p, std::mt19937_64& rng) {
  if (p < 0.0 || p >= 1.0) throw ContractError("dropout: p must lie in [0, 1)");
  if (p == 0.0) return a;
  std::bernoulli_distribution keep(1.0 - p);
  std::vector<double> mask(a.numel());
  for (auto& m : mask) m = keep(rng) ? 1.0 / (1.0 - p) : 0.0;
  return mul(a, Tensor::from_data(a.shape(), std::move(mask)));
}

}  // namespace mmkg
