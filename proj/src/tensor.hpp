#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "error.hpp"

namespace mdkt {

using Shape = std::vector<std::size_t>;

namespace detail {

struct TensorNode {
  Shape shape;
  std::vector<double> data;
  // Persistent gradient, accumulated across backward passes. Materialized as
  // zeros for requires_grad leaves so "gradient is exactly zero" is a
  // checkable state, not an absence.
  std::vector<double> grad;
  bool requires_grad = false;
};

}  // namespace detail

// Dense row-major tensor of doubles. Value semantics over a shared node;
// operation results are never mutated in place. Rank 1 and 2 cover every
// computation in this project; scalars are rank-1 tensors of length 1.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor filled(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;
  bool is_scalar() const { return numel() == 1; }
  std::size_t rows() const;  // rank-2 only
  std::size_t cols() const;  // rank-2 only

  std::span<const double> data() const;
  // Direct storage access for exclusive owners (optimizer updates,
  // finite-difference probes). Never call on a tensor that is an input of a
  // live tape.
  std::span<double> mutable_data();
  double value() const;  // scalar tensors
  double at(std::size_t i) const;
  double at(std::size_t r, std::size_t c) const;

  bool requires_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  // Same values, cut off from differentiation.
  Tensor detach() const;

  detail::TensorNode* node() const { return node_.get(); }
  std::shared_ptr<detail::TensorNode> shared_node() const { return node_; }
  static Tensor wrap(std::shared_ptr<detail::TensorNode> node) { return Tensor(std::move(node)); }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorNode> node) : node_(std::move(node)) {}

  std::shared_ptr<detail::TensorNode> node_;
};

// Per-backward-pass gradient buffers, keyed by node. Intermediate gradients
// live only here; Tape::backward folds the leaf entries into the persistent
// node gradients at the end of the pass. This keeps repeated backward calls
// purely additive (two passes exactly double every leaf gradient).
class GradStore {
 public:
  std::span<double> of(const detail::TensorNode* node);
  const std::vector<double>* find(const detail::TensorNode* node) const;
  const std::unordered_map<const detail::TensorNode*, std::vector<double>>& entries() const {
    return store_;
  }

 private:
  std::unordered_map<const detail::TensorNode*, std::vector<double>> store_;
};

// Ordered record of executed operations with their backward rules.
// Single-owner: one tape per training step / evaluation, never shared across
// threads.
class Tape {
 public:
  using BackwardFn = std::function<void(GradStore&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::size_t size() const { return records_.size(); }
  void clear();

  // Accumulates d(loss)/d(leaf) into every requires_grad leaf reachable from
  // `loss`. `loss` must be a scalar produced on this tape.
  void backward(const Tensor& loss);

  void record(std::vector<std::shared_ptr<detail::TensorNode>> inputs,
              std::shared_ptr<detail::TensorNode> output, BackwardFn fn);
  bool produced(const detail::TensorNode* node) const { return outputs_.contains(node); }

 private:
  struct Record {
    std::vector<std::shared_ptr<detail::TensorNode>> inputs;
    std::shared_ptr<detail::TensorNode> output;
    BackwardFn backward;
  };

  std::vector<Record> records_;
  std::unordered_set<const detail::TensorNode*> outputs_;
};

// ----- operations ------------------------------------------------------
//
// Every operation validates shapes, rejects non-finite results, and records
// a backward rule when `tape` is non-null and some input participates in
// differentiation. Passing tape == nullptr evaluates without recording.

Tensor add(Tape* tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape* tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape* tape, const Tensor& a, const Tensor& b);  // elementwise
Tensor scale(Tape* tape, const Tensor& a, double c);
Tensor add_scalar(Tape* tape, const Tensor& a, double c);

Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b);
// m[r x c] + v[c], broadcast over rows
Tensor add_rowvec(Tape* tape, const Tensor& m, const Tensor& v);
// row i of m scaled by s[i]
Tensor scale_rows(Tape* tape, const Tensor& m, const Tensor& s);

Tensor relu(Tape* tape, const Tensor& a);  // subgradient at 0 is 0
Tensor log(Tape* tape, const Tensor& a);   // requires strictly positive entries
Tensor exp(Tape* tape, const Tensor& a);
Tensor sqrt(Tape* tape, const Tensor& a);  // subgradient at 0 is 0
Tensor clamp_min(Tape* tape, const Tensor& a, double floor);
Tensor pow_scalar(Tape* tape, const Tensor& a, double exponent);  // entries must be > 0

Tensor sum(Tape* tape, const Tensor& a);
Tensor mean(Tape* tape, const Tensor& a);
Tensor sum_rowwise(Tape* tape, const Tensor& a);   // [r x c] -> [r]
Tensor mean_colwise(Tape* tape, const Tensor& a);  // [r x c] -> [c]

// Stacks inputs along the row axis; rank-1 inputs are treated as single rows.
Tensor concat_rows(Tape* tape, std::span<const Tensor> parts);
// k rank-1 tensors of length n, as the columns of an [n x k] matrix.
Tensor stack_cols(Tape* tape, std::span<const Tensor> columns);
Tensor row_select(Tape* tape, const Tensor& a, std::span<const std::size_t> row_indices);
// Gathers entries by flat index into a rank-1 tensor.
Tensor select(Tape* tape, const Tensor& a, std::span<const std::size_t> flat_indices);
Tensor reshape(Tape* tape, const Tensor& a, Shape new_shape);

// Row-wise softmax with temperature; rows are shifted by their max before
// exponentiation so large magnitudes cannot overflow.
Tensor softmax_rows(Tape* tape, const Tensor& logits, double temperature);

// Sum over rows of sum_j p_j (ln p_j - ln q_j). Rows of p and q must be
// stochastic (non-negative, summing to 1 within 1e-9). Both log arguments
// are clamped below at 1e-12; the 0 ln 0 term is taken as 0.
Tensor kl_divergence(Tape* tape, const Tensor& p, const Tensor& q);

// D[i][j] = squared Euclidean distance between rows i and j of x, computed
// via the norm expansion with negatives clamped to zero and an exactly-zero
// diagonal.
Tensor pairwise_sq_euclidean(Tape* tape, const Tensor& x);

}  // namespace mdkt
