// SPDX-License-Identifier: Apache-2.0
#include "mcl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "mcl/errors.hpp"

MCL_BEGIN_NAMESPACE

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

std::string shape_to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

// --- Tensor ----------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return from_values(std::move(shape), std::vector<Real>(n, Real{0}), requires_grad);
}

Tensor Tensor::from_values(Shape shape, std::vector<Real> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("tensor shape " + shape_to_string(shape) + " does not hold " +
                         std::to_string(values.size()) + " values");
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(Real value) { return from_values({}, {value}); }

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::numel() const { return node_->values.size(); }

std::size_t Tensor::rows() const {
  const auto& s = node_->shape;
  return s.empty() ? 1 : s[0];
}

std::size_t Tensor::cols() const {
  const std::size_t r = rows();
  return r == 0 ? (node_->shape.size() > 1 ? node_->shape[1] : 1) : numel() / r;
}

std::span<const Real> Tensor::values() const { return node_->values; }
std::span<Real> Tensor::mutable_values() { return node_->values; }
bool Tensor::requires_grad() const { return node_->requires_grad; }
bool Tensor::has_grad() const { return !node_->grad.empty(); }
std::span<const Real> Tensor::grad() const { return node_->grad; }
std::span<Real> Tensor::mutable_grad() { return node_->ensure_grad(); }
void Tensor::zero_grad() {
  node_->grad.clear();
  node_->grad.shrink_to_fit();
}

Real Tensor::item() const {
  if (numel() != 1) {
    throw ContractError("item() on tensor of shape " + shape_to_string(shape()));
  }
  return node_->values[0];
}

Tensor Tensor::detach() const { return from_values(node_->shape, node_->values, false); }

// --- Tape ------------------------------------------------------------------

Tape Tape::record(const Tensor& root) {
  Tape tape;
  if (!root.defined() || !root.requires_grad()) return tape;
  std::unordered_set<const Node*> visited;
  // Iterative post-order DFS: a node is emitted after all of its inputs.
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  visited.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      tape.order_.push_back(node);
      stack.pop_back();
    }
  }
  return tape;
}

void Tape::replay() const {
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    Node* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward() requires a scalar loss, got shape " +
                        (loss.defined() ? shape_to_string(loss.shape()) : std::string("<undefined>")));
  }
  if (!loss.requires_grad()) return;
  Tape tape = Tape::record(loss);
  // Interior gradients are per-call; leaves accumulate.
  for (Node* node : tape.order()) {
    if (node->backward) node->grad.clear();
  }
  loss.node()->ensure_grad()[0] += Real{1};
  tape.replay();
}

// --- helpers ---------------------------------------------------------------

namespace {

NodePtr make_output(Shape shape, std::vector<Real> values, const char* op,
                    std::initializer_list<const Tensor*> inputs) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  node->op = op;
  for (const Tensor* t : inputs) node->requires_grad = node->requires_grad || t->requires_grad();
  if (node->requires_grad) {
    for (const Tensor* t : inputs) node->inputs.push_back(t->node_ptr());
  }
  return node;
}

// Gradient sink for input `i`, or nullptr when that input needs none.
Real* grad_sink(Node& self, std::size_t i) {
  Node& in = *self.inputs[i];
  return in.requires_grad ? in.ensure_grad().data() : nullptr;
}

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got shape " + shape_to_string(t.shape()));
  }
}

}  // namespace

// --- Linear algebra --------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw DimensionError("matmul: inner dimensions differ for " + shape_to_string(a.shape()) + " and " +
                         shape_to_string(b.shape()));
  }
  std::vector<Real> out(m * n, Real{0});
  const Real* A = a.values().data();
  const Real* B = b.values().data();
  for (std::size_t i = 0; i < m; ++i) {
    Real* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const Real aip = A[i * k + p];
      const Real* brow = B + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += aip * brow[j];
    }
  }
  auto node = make_output({m, n}, std::move(out), "matmul", {&a, &b});
  if (node->requires_grad) {
    node->backward = [m, k, n](Node& self) {
      const Real* G = self.grad.data();
      const Real* A = self.inputs[0]->values.data();
      const Real* B = self.inputs[1]->values.data();
      if (Real* dA = grad_sink(self, 0)) {
        for (std::size_t i = 0; i < m; ++i) {
          const Real* grow = G + i * n;
          for (std::size_t p = 0; p < k; ++p) {
            const Real* brow = B + p * n;
            Real s = 0;
            for (std::size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
            dA[i * k + p] += s;
          }
        }
      }
      if (Real* dB = grad_sink(self, 1)) {
        for (std::size_t i = 0; i < m; ++i) {
          const Real* grow = G + i * n;
          for (std::size_t p = 0; p < k; ++p) {
            const Real aip = A[i * k + p];
            Real* drow = dB + p * n;
            for (std::size_t j = 0; j < n; ++j) drow[j] += aip * grow[j];
          }
        }
      }
    };
  }
  return Tensor(std::move(node));
}

Tensor matmul_transposed(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_transposed");
  require_matrix(b, "matmul_transposed");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[0];
  if (b.shape()[1] != k) {
    throw DimensionError("matmul_transposed: inner dimensions differ for " + shape_to_string(a.shape()) +
                         " and transpose of " + shape_to_string(b.shape()));
  }
  std::vector<Real> out(m * n);
  const Real* A = a.values().data();
  const Real* B = b.values().data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      Real s = 0;
      for (std::size_t p = 0; p < k; ++p) s += A[i * k + p] * B[j * k + p];
      out[i * n + j] = s;
    }
  }
  auto node = make_output({m, n}, std::move(out), "matmul_transposed", {&a, &b});
  if (node->requires_grad) {
    node->backward = [m, k, n](Node& self) {
      const Real* G = self.grad.data();
      const Real* A = self.inputs[0]->values.data();
      const Real* B = self.inputs[1]->values.data();
      if (Real* dA = grad_sink(self, 0)) {
        for (std::size_t i = 0; i < m; ++i) {
          Real* drow = dA + i * k;
          for (std::size_t j = 0; j < n; ++j) {
            const Real g = G[i * n + j];
            const Real* brow = B + j * k;
            for (std::size_t p = 0; p < k; ++p) drow[p] += g * brow[p];
          }
        }
      }
      if (Real* dB = grad_sink(self, 1)) {
        for (std::size_t i = 0; i < m; ++i) {
          const Real* arow = A + i * k;
          for (std::size_t j = 0; j < n; ++j) {
            const Real g = G[i * n + j];
            Real* drow = dB + j * k;
            for (std::size_t p = 0; p < k; ++p) drow[p] += g * arow[p];
          }
        }
      }
    };
  }
  return Tensor(std::move(node));
}

// --- Elementwise -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("add: shapes " + shape_to_string(a.shape()) + " and " + shape_to_string(b.shape()));
  }
  std::vector<Real> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  auto node = make_output(a.shape(), std::move(out), "add", {&a, &b});
  if (node->requires_grad) {
    node->backward = [](Node& self) {
      const std::size_t n = self.grad.size();
      for (std::size_t input = 0; input < 2; ++input) {
        if (Real* d = grad_sink(self, input)) {
          for (std::size_t i = 0; i < n; ++i) d[i] += self.grad[i];
        }
      }
    };
  }
  return Tensor(std::move(node));
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_matrix(x, "add_bias");
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  if (bias.numel() != n) {
    throw DimensionError("add_bias: bias " + shape_to_string(bias.shape()) + " for rows of " +
                         shape_to_string(x.shape()));
  }
  std::vector<Real> out(x.values().begin(), x.values().end());
  const Real* b = bias.values().data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += b[j];
  }
  auto node = make_output(x.shape(), std::move(out), "add_bias", {&x, &bias});
  if (node->requires_grad) {
    node->backward = [m, n](Node& self) {
      const Real* G = self.grad.data();
      if (Real* dx = grad_sink(self, 0)) {
        for (std::size_t i = 0; i < m * n; ++i) dx[i] += G[i];
      }
      if (Real* db = grad_sink(self, 1)) {
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < n; ++j) db[j] += G[i * n + j];
        }
      }
    };
  }
  return Tensor(std::move(node));
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("mul: shapes " + shape_to_string(a.shape()) + " and " + shape_to_string(b.shape()));
  }
  std::vector<Real> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  auto node = make_output(a.shape(), std::move(out), "mul", {&a, &b});
  if (node->requires_grad) {
    node->backward = [](Node& self) {
      const std::size_t n = self.grad.size();
      const auto& av = self.inputs[0]->values;
      const auto& bv = self.inputs[1]->values;
      if (Real* da = grad_sink(self, 0)) {
        for (std::size_t i = 0; i < n; ++i) da[i] += self.grad[i] * bv[i];
      }
      if (Real* db = grad_sink(self, 1)) {
        for (std::size_t i = 0; i < n; ++i) db[i] += self.grad[i] * av[i];
      }
    };
  }
  return Tensor(std::move(node));
}

Tensor scale(const Tensor& x, Real factor) {
  std::vector<Real> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] * factor;
  auto node = make_output(x.shape(), std::move(out), "scale", {&x});
  if (node->requires_grad) {
    node->backward = [factor](Node& self) {
      Real* dx = grad_sink(self, 0);
      for (std::size_t i = 0; i < self.grad.size(); ++i) dx[i] += self.grad[i] * factor;
    };
  }
  return Tensor(std::move(node));
}

Tensor sum(const Tensor& x) {
  double total = 0;
  for (Real v : x.values()) total += v;
  auto node = make_output({}, {static_cast<Real>(total)}, "sum", {&x});
  if (node->requires_grad) {
    node->backward = [](Node& self) {
      Real* dx = grad_sink(self, 0);
      const std::size_t n = self.inputs[0]->values.size();
      for (std::size_t i = 0; i < n; ++i) dx[i] += self.grad[0];
    };
  }
  return Tensor(std::move(node));
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: " + shape_to_string(x.shape()) + " to " + shape_to_string(shape));
  }
  std::vector<Real> out(x.values().begin(), x.values().end());
  auto node = make_output(std::move(shape), std::move(out), "reshape", {&x});
  if (node->requires_grad) {
    node->backward = [](Node& self) {
      Real* dx = grad_sink(self, 0);
      for (std::size_t i = 0; i < self.grad.size(); ++i) dx[i] += self.grad[i];
    };
  }
  return Tensor(std::move(node));
}

Tensor gelu(const Tensor& x) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  std::vector<Real> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x.values()[i];
    out[i] = static_cast<Real>(0.5 * v * (1.0 + std::erf(v * kInvSqrt2)));
  }
  auto node = make_output(x.shape(), std::move(out), "gelu", {&x});
  if (node->requires_grad) {
    node->backward = [](Node& self) {
      constexpr double kInvSqrt2 = 0.70710678118654752440;
      constexpr double kInvSqrt2Pi = 0.39894228040143267794;
      Real* dx = grad_sink(self, 0);
      const auto& xv = self.inputs[0]->values;
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        const double v = xv[i];
        const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
        dx[i] += static_cast<Real>(self.grad[i] * (cdf + v * pdf));
      }
    };
  }
  return Tensor(std::move(node));
}

Tensor dropout(const Tensor& x, Real rate, Rng& rng) {
  if (rate < Real{0} || rate >= Real{1}) throw ContractError("dropout rate must lie in [0, 1)");
  if (rate == Real{0}) return x;
  const Real keep_scale = Real{1} / (Real{1} - rate);
  std::vector<Real> mask(x.numel());
  for (auto& m : mask) m = rng.uniform() < static_cast<double>(rate) ? Real{0} : keep_scale;
  std::vector<Real> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] * mask[i];
  auto node = make_output(x.shape(), std::move(out), "dropout", {&x});
  if (node->requires_grad) {
    node->backward = [mask = std::move(mask)](Node& self) {
      Real* dx = grad_sink(self, 0);
      for (std::size_t i = 0; i < self.grad.size(); ++i) dx[i] += self.grad[i] * mask[i];
    };
  }
  return Tensor(std::move(node));
}

// --- Row ops ---------------------------------------------------------------

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, Real eps) {
  require_matrix(x, "layer_norm");
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  if (gain.numel() != n || bias.numel() != n) {
    throw DimensionError("layer_norm: gain/bias " + shape_to_string(gain.shape()) + "/" +
                         shape_to_string(bias.shape()) + " for rows of " + shape_to_string(x.shape()));
  }
  std::vector<Real> normalized(m * n);
  std::vector<Real> inv_std(m);
  std::vector<Real> out(m * n);
  const Real* X = x.values().data();
  const Real* g = gain.values().data();
  const Real* b = bias.values().data();
  for (std::size_t i = 0; i < m; ++i) {
    const Real* row = X + i * n;
    double mean = 0;
    for (std::size_t j = 0; j < n; ++j) mean += row[j];
    mean /= static_cast<double>(n);
    double var = 0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + static_cast<double>(eps));
    inv_std[i] = static_cast<Real>(is);
    for (std::size_t j = 0; j < n; ++j) {
      const Real xhat = static_cast<Real>((row[j] - mean) * is);
      normalized[i * n + j] = xhat;
      out[i * n + j] = xhat * g[j] + b[j];
    }
  }
  auto node = make_output(x.shape(), std::move(out), "layer_norm", {&x, &gain, &bias});
  if (node->requires_grad) {
    node->backward = [m, n, normalized = std::move(normalized), inv_std = std::move(inv_std)](Node& self) {
      const Real* G = self.grad.data();
      const Real* g = self.inputs[1]->values.data();
      Real* dx = grad_sink(self, 0);
      Real* dg = grad_sink(self, 1);
      Real* db = grad_sink(self, 2);
      for (std::size_t i = 0; i < m; ++i) {
        const Real* grow = G + i * n;
        const Real* xhat = normalized.data() + i * n;
        if (dg || db) {
          for (std::size_t j = 0; j < n; ++j) {
            if (dg) dg[j] += grow[j] * xhat[j];
            if (db) db[j] += grow[j];
          }
        }
        if (dx) {
          double mean_d = 0, mean_dx = 0;
          for (std::size_t j = 0; j < n; ++j) {
            const double d = static_cast<double>(grow[j]) * g[j];
            mean_d += d;
            mean_dx += d * xhat[j];
          }
          mean_d /= static_cast<double>(n);
          mean_dx /= static_cast<double>(n);
          for (std::size_t j = 0; j < n; ++j) {
            const double d = static_cast<double>(grow[j]) * g[j];
            dx[i * n + j] += static_cast<Real>(inv_std[i] * (d - mean_d - xhat[j] * mean_dx));
          }
        }
      }
    };
  }
  return Tensor(std::move(node));
}

Tensor softmax_rows(const Tensor& x) {
  require_matrix(x, "softmax_rows");
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  std::vector<Real> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    const Real* row = x.values().data() + i * n;
    const Real mx = n ? *std::max_element(row, row + n) : Real{0};
    double total = 0;
    for (std::size_t j = 0; j < n; ++j) total += std::exp(static_cast<double>(row[j] - mx));
    for (std::size_t j = 0; j < n; ++j) {
      out[i * n + j] = static_cast<Real>(std::exp(static_cast<double>(row[j] - mx)) / total);
    }
  }
  auto node = make_output(x.shape(), std::move(out), "softmax_rows", {&x});
  if (node->requires_grad) {
    node->backward = [m, n](Node& self) {
      Real* dx = grad_sink(self, 0);
      const Real* Y = self.values.data();
      const Real* G = self.grad.data();
      for (std::size_t i = 0; i < m; ++i) {
        double dot = 0;
        for (std::size_t j = 0; j < n; ++j) dot += static_cast<double>(G[i * n + j]) * Y[i * n + j];
        for (std::size_t j = 0; j < n; ++j) {
          dx[i * n + j] += static_cast<Real>(Y[i * n + j] * (G[i * n + j] - dot));
        }
      }
    };
  }
  return Tensor(std::move(node));
}

Tensor embedding(const Tensor& table, std::span<const std::int32_t> ids) {
  require_matrix(table, "embedding");
  const std::size_t vocab = table.shape()[0], width = table.shape()[1];
  std::vector<Real> out(ids.size() * width);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw IndexError("embedding: token id " + std::to_string(ids[i]) + " outside vocabulary of size " +
                       std::to_string(vocab));
    }
    const Real* src = table.values().data() + static_cast<std::size_t>(ids[i]) * width;
    std::copy(src, src + width, out.begin() + static_cast<std::ptrdiff_t>(i * width));
  }
  auto node = make_output({ids.size(), width}, std::move(out), "embedding", {&table});
  if (node->requires_grad) {
    node->backward = [width, ids = std::vector<std::int32_t>(ids.begin(), ids.end())](Node& self) {
      Real* dt = grad_sink(self, 0);
      for (std::size_t i = 0; i < ids.size(); ++i) {
        Real* dst = dt + static_cast<std::size_t>(ids[i]) * width;
        const Real* src = self.grad.data() + i * width;
        for (std::size_t j = 0; j < width; ++j) dst[j] += src[j];
      }
    };
  }
  return Tensor(std::move(node));
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  require_matrix(x, "gather_rows");
  const std::size_t m = x.shape()[0], width = x.shape()[1];
  std::vector<Real> out(rows.size() * width);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= m) {
      throw IndexError("gather_rows: row " + std::to_string(rows[i]) + " outside " + shape_to_string(x.shape()));
    }
    const Real* src = x.values().data() + rows[i] * width;
    std::copy(src, src + width, out.begin() + static_cast<std::ptrdiff_t>(i * width));
  }
  auto node = make_output({rows.size(), width}, std::move(out), "gather_rows", {&x});
  if (node->requires_grad) {
    node->backward = [width, rows = std::vector<std::size_t>(rows.begin(), rows.end())](Node& self) {
      Real* dx = grad_sink(self, 0);
      for (std::size_t i = 0; i < rows.size(); ++i) {
        Real* dst = dx + rows[i] * width;
        const Real* src = self.grad.data() + i * width;
        for (std::size_t j = 0; j < width; ++j) dst[j] += src[j];
      }
    };
  }
  return Tensor(std::move(node));
}

// --- Attention -------------------------------------------------------------

std::size_t AttentionLayout::total_rows() const {
  std::size_t total = 0;
  for (std::size_t len : lengths) total += len;
  return total;
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& rel_bias,
                 const AttentionLayout& layout) {
  require_matrix(q, "attention");
  if (k.shape() != q.shape() || v.shape() != q.shape()) {
    throw DimensionError("attention: q/k/v shapes " + shape_to_string(q.shape()) + ", " +
                         shape_to_string(k.shape()) + ", " + shape_to_string(v.shape()));
  }
  const std::size_t rows = q.shape()[0], width = q.shape()[1], heads = layout.heads;
  if (heads == 0 || width % heads != 0) throw DimensionError("attention: width not divisible by heads");
  if (layout.total_rows() != rows || layout.key_valid.size() != rows ||
      layout.offsets.size() != layout.lengths.size()) {
    throw DimensionError("attention: layout does not cover " + shape_to_string(q.shape()));
  }
  if (rel_bias.rank() != 2 || rel_bias.shape()[1] != heads) {
    throw DimensionError("attention: bias table " + shape_to_string(rel_bias.shape()) + " for " +
                         std::to_string(heads) + " heads");
  }
  const std::size_t buckets = rel_bias.shape()[0];
  const std::size_t dh = width / heads;
  const Real inv_sqrt = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(dh)));

  std::vector<std::size_t> prob_offset(layout.lengths.size());
  std::size_t prob_total = 0;
  for (std::size_t s = 0; s < layout.lengths.size(); ++s) {
    prob_offset[s] = prob_total;
    prob_total += heads * layout.lengths[s] * layout.lengths[s];
    if (layout.lengths[s] > layout.max_distance + 1) {
      throw DimensionError("attention: sequence longer than bucket lookup");
    }
  }
  std::vector<Real> probs(prob_total, Real{0});
  std::vector<Real> out(rows * width, Real{0});
  const Real* Q = q.values().data();
  const Real* K = k.values().data();
  const Real* V = v.values().data();
  const Real* B = rel_bias.values().data();
  std::vector<double> scores;

  for (std::size_t s = 0; s < layout.lengths.size(); ++s) {
    const std::size_t o = layout.offsets[s], len = layout.lengths[s];
    scores.assign(len, 0.0);
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t c0 = h * dh;
      Real* P = probs.data() + prob_offset[s] + h * len * len;
      for (std::size_t i = 0; i < len; ++i) {
        const Real* qi = Q + (o + i) * width + c0;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < len; ++j) {
          if (!layout.key_valid[o + j]) continue;
          const Real* kj = K + (o + j) * width + c0;
          Real dot = 0;
          for (std::size_t t = 0; t < dh; ++t) dot += qi[t] * kj[t];
          const auto bucket = static_cast<std::size_t>(
              layout.bucket(static_cast<std::ptrdiff_t>(j) - static_cast<std::ptrdiff_t>(i)));
          if (bucket >= buckets) throw IndexError("attention: bucket outside bias table");
          scores[j] = static_cast<double>(dot * inv_sqrt + B[bucket * heads + h]);
          mx = std::max(mx, scores[j]);
        }
        if (mx == -std::numeric_limits<double>::infinity()) continue;  // no valid keys
        double total = 0;
        for (std::size_t j = 0; j < len; ++j) {
          if (layout.key_valid[o + j]) total += std::exp(scores[j] - mx);
        }
        Real* oi = out.data() + (o + i) * width + c0;
        for (std::size_t j = 0; j < len; ++j) {
          if (!layout.key_valid[o + j]) continue;
          const Real p = static_cast<Real>(std::exp(scores[j] - mx) / total);
          P[i * len + j] = p;
          const Real* vj = V + (o + j) * width + c0;
          for (std::size_t t = 0; t < dh; ++t) oi[t] += p * vj[t];
        }
      }
    }
  }

  auto node = make_output({rows, width}, std::move(out), "attention", {&q, &k, &v, &rel_bias});
  if (node->requires_grad) {
    node->backward = [layout, probs = std::move(probs), prob_offset = std::move(prob_offset), width, heads, dh,
                      inv_sqrt](Node& self) {
      const Real* G = self.grad.data();
      const Real* Q = self.inputs[0]->values.data();
      const Real* K = self.inputs[1]->values.data();
      const Real* V = self.inputs[2]->values.data();
      Real* dQ = grad_sink(self, 0);
      Real* dK = grad_sink(self, 1);
      Real* dV = grad_sink(self, 2);
      Real* dB = grad_sink(self, 3);
      std::vector<Real> dP, dS;
      for (std::size_t s = 0; s < layout.lengths.size(); ++s) {
        const std::size_t o = layout.offsets[s], len = layout.lengths[s];
        dP.assign(len, Real{0});
        dS.assign(len, Real{0});
        for (std::size_t h = 0; h < heads; ++h) {
          const std::size_t c0 = h * dh;
          const Real* P = probs.data() + prob_offset[s] + h * len * len;
          for (std::size_t i = 0; i < len; ++i) {
            const Real* gi = G + (o + i) * width + c0;
            double row_dot = 0;
            for (std::size_t j = 0; j < len; ++j) {
              const Real p = P[i * len + j];
              if (!layout.key_valid[o + j]) {
                dP[j] = 0;
                continue;
              }
              const Real* vj = V + (o + j) * width + c0;
              Real d = 0;
              for (std::size_t t = 0; t < dh; ++t) d += gi[t] * vj[t];
              dP[j] = d;
              row_dot += static_cast<double>(p) * d;
              if (dV) {
                Real* dvj = dV + (o + j) * width + c0;
                for (std::size_t t = 0; t < dh; ++t) dvj[t] += p * gi[t];
              }
            }
            for (std::size_t j = 0; j < len; ++j) {
              dS[j] = layout.key_valid[o + j]
                          ? static_cast<Real>(P[i * len + j] * (static_cast<double>(dP[j]) - row_dot))
                          : Real{0};
            }
            const Real* qi = Q + (o + i) * width + c0;
            for (std::size_t j = 0; j < len; ++j) {
              const Real ds = dS[j];
              if (ds == Real{0}) continue;
              const Real* kj = K + (o + j) * width + c0;
              if (dQ) {
                Real* dqi = dQ + (o + i) * width + c0;
                for (std::size_t t = 0; t < dh; ++t) dqi[t] += ds * inv_sqrt * kj[t];
              }
              if (dK) {
                Real* dkj = dK + (o + j) * width + c0;
                for (std::size_t t = 0; t < dh; ++t) dkj[t] += ds * inv_sqrt * qi[t];
              }
              if (dB) {
                const auto bucket = static_cast<std::size_t>(
                    layout.bucket(static_cast<std::ptrdiff_t>(j) - static_cast<std::ptrdiff_t>(i)));
                dB[bucket * heads + h] += ds;
              }
            }
          }
        }
      }
    };
  }
  return Tensor(std::move(node));
}

// --- Losses ----------------------------------------------------------------

namespace {

double logistic(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Real sigmoid(Real z) { return static_cast<Real>(logistic(z)); }

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const std::int32_t> targets) {
  require_matrix(logits, "softmax_cross_entropy");
  const std::size_t n = logits.shape()[0], classes = logits.shape()[1];
  if (targets.size() != n) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         shape_to_string(logits.shape()));
  }
  for (std::int32_t t : targets) {
    if (t < 0 || static_cast<std::size_t>(t) >= classes) {
      throw IndexError("softmax_cross_entropy: target " + std::to_string(t) + " outside [0, " +
                       std::to_string(classes) + ")");
    }
  }
  if (n == 0) return Tensor::scalar(Real{0});
  std::vector<Real> probs(n * classes);
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const Real* row = logits.values().data() + i * classes;
    const double mx = *std::max_element(row, row + classes);
    double denom = 0;
    for (std::size_t j = 0; j < classes; ++j) denom += std::exp(row[j] - mx);
    const double log_denom = std::log(denom);
    for (std::size_t j = 0; j < classes; ++j) {
      probs[i * classes + j] = static_cast<Real>(std::exp(row[j] - mx) / denom);
    }
    total += log_denom + mx - row[static_cast<std::size_t>(targets[i])];
  }
  auto node = make_output({}, {static_cast<Real>(total / static_cast<double>(n))}, "softmax_cross_entropy",
                          {&logits});
  if (node->requires_grad) {
    node->backward = [n, classes, probs = std::move(probs),
                      targets = std::vector<std::int32_t>(targets.begin(), targets.end())](Node& self) {
      Real* dx = grad_sink(self, 0);
      const Real g = self.grad[0] / static_cast<Real>(n);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < classes; ++j) dx[i * classes + j] += g * probs[i * classes + j];
        dx[i * classes + static_cast<std::size_t>(targets[i])] -= g;
      }
    };
  }
  return Tensor(std::move(node));
}

Tensor sigmoid_bce(const Tensor& logits, std::span<const std::uint8_t> labels,
                   std::span<const std::size_t> positions) {
  const std::size_t n = logits.numel();
  if (labels.size() != n) {
    throw DimensionError("sigmoid_bce: " + std::to_string(labels.size()) + " labels for " +
                         shape_to_string(logits.shape()));
  }
  for (std::size_t p : positions) {
    if (p >= n) throw IndexError("sigmoid_bce: position " + std::to_string(p) + " outside " + std::to_string(n));
  }
  if (positions.empty()) return Tensor::scalar(Real{0});
  double total = 0;
  const Real* z = logits.values().data();
  for (std::size_t p : positions) {
    const double x = z[p];
    const double softplus = std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
    total += softplus - (labels[p] ? x : 0.0);
  }
  const double count = static_cast<double>(positions.size());
  auto node = make_output({}, {static_cast<Real>(total / count)}, "sigmoid_bce", {&logits});
  if (node->requires_grad) {
    node->backward = [count, labels = std::vector<std::uint8_t>(labels.begin(), labels.end()),
                      positions = std::vector<std::size_t>(positions.begin(), positions.end())](Node& self) {
      Real* dx = grad_sink(self, 0);
      const Real* z = self.inputs[0]->values.data();
      const double g = self.grad[0] / count;
      for (std::size_t p : positions) {
        dx[p] += static_cast<Real>(g * (logistic(z[p]) - (labels[p] ? 1.0 : 0.0)));
      }
    };
  }
  return Tensor(std::move(node));
}

MCL_END_NAMESPACE
