// SPDX-License-Identifier: Apache-2.0
#pragma once

// Dense row-major tensors with reverse-mode automatic differentiation.
//
// A Tensor is a cheap handle to a graph node. Ops on tensors that require
// gradients record their inputs and a gradient rule on the output node;
// backward() linearizes the reachable graph into a Tape and replays the rules
// in reverse. Everything is single-threaded: a graph and its tensors belong to
// the thread that built them.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mcl/real.hpp"
#include "mcl/rng.hpp"

MCL_BEGIN_NAMESPACE

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<Real> values;
  std::vector<Real> grad;  // empty until a gradient reaches this node
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  std::vector<Real>& ensure_grad() {
    if (grad.empty()) grad.assign(values.size(), Real{0});
    return grad;
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor from_values(Shape shape, std::vector<Real> values, bool requires_grad = false);
  static Tensor scalar(Real value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t numel() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const Real> values() const;
  /// Writable view of a leaf's values (parameter initialization, updates,
  /// finite-difference perturbation).
  std::span<Real> mutable_values();

  bool requires_grad() const;
  bool has_grad() const;
  std::span<const Real> grad() const;
  std::span<Real> mutable_grad();
  void zero_grad();

  Real item() const;
  Tensor detach() const;

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Reverse-topological schedule of the ops reachable from a loss.
class Tape {
 public:
  /// Every recorded op appears after all ops that produced its inputs.
  static Tape record(const Tensor& root);

  std::size_t size() const { return order_.size(); }
  std::span<detail::Node* const> order() const { return order_; }

  /// Runs gradient rules from the root back to the leaves.
  void replay() const;

 private:
  std::vector<detail::Node*> order_;
};

/// Populates grad of every requires_grad tensor reachable from `loss`.
/// Gradients accumulate across calls until zero_grad().
void backward(const Tensor& loss);

// --- Linear algebra --------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
/// a[m x k] times transpose(b[n x k]).
Tensor matmul_transposed(const Tensor& a, const Tensor& b);

// --- Elementwise -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
/// x[m x n] plus bias[n] on every row.
Tensor add_bias(const Tensor& x, const Tensor& bias);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, Real factor);
Tensor sum(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);
/// Exact (erf) GELU.
Tensor gelu(const Tensor& x);
/// Inverted dropout; identity when rate is zero.
Tensor dropout(const Tensor& x, Real rate, Rng& rng);

// --- Row ops ---------------------------------------------------------------

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, Real eps = Real(1e-5));
Tensor softmax_rows(const Tensor& x);
/// Rows of `table` selected by token id.
Tensor embedding(const Tensor& table, std::span<const std::int32_t> ids);
/// Subset of rows of x, in the given order.
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);

// --- Attention -------------------------------------------------------------

/// Packed batch of sequences for multi-head self-attention. Rows of the
/// q/k/v matrices are the concatenated positions of every sequence.
struct AttentionLayout {
  std::vector<std::size_t> offsets;
  std::vector<std::size_t> lengths;
  std::vector<std::uint8_t> key_valid;  // one per packed row; 0 = padding
  std::size_t heads = 1;
  /// bucket_by_distance[(j - i) + max_distance] is the bias-table row used
  /// for query i and key j.
  std::vector<std::int32_t> bucket_by_distance;
  std::size_t max_distance = 0;

  std::size_t total_rows() const;
  std::int32_t bucket(std::ptrdiff_t distance) const {
    return bucket_by_distance[static_cast<std::size_t>(distance + static_cast<std::ptrdiff_t>(max_distance))];
  }
};

/// softmax(q k^T / sqrt(d) + bias[bucket(j - i), head]) v per sequence and
/// head. Padding keys get zero weight. rel_bias is [buckets x heads].
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& rel_bias,
                 const AttentionLayout& layout);

// --- Losses ----------------------------------------------------------------

/// Mean over rows of -log softmax(logits)[target]. Zero rows give a zero loss.
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const std::int32_t> targets);

/// Mean over `positions` of the binary cross-entropy of sigmoid(logits)
/// against labels (1 = positive). Uses softplus(z) - y z. An empty position
/// set yields exactly zero with zero gradient.
Tensor sigmoid_bce(const Tensor& logits, std::span<const std::uint8_t> labels,
                   std::span<const std::size_t> positions);

/// Logistic function evaluated without overflow.
Real sigmoid(Real z);

MCL_END_NAMESPACE
