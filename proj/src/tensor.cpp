#include "tensor.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

namespace mdkt {

namespace {

using detail::TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

NodePtr make_node(Shape shape, std::vector<double> data, bool requires_grad) {
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  if (requires_grad) node->grad.assign(node->data.size(), 0.0);
  return node;
}

void ensure_finite(const std::vector<double>& data, const char* op) {
  for (double v : data) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string(op) + ": non-finite value in result");
    }
  }
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected rank-2 tensor, got " + shape_str(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

bool wants_grad(Tape* tape, std::initializer_list<const Tensor*> inputs) {
  if (tape == nullptr) return false;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

// Builds the result node and, when differentiation is active, records the
// backward rule produced by `make_fn` (which receives the output node so the
// rule can read the upstream gradient).
Tensor finish2(Tape* tape, const char* op, Shape shape, std::vector<double> data,
               std::initializer_list<const Tensor*> inputs,
               const std::function<Tape::BackwardFn(const NodePtr& out)>& make_fn) {
  ensure_finite(data, op);
  const bool rec = wants_grad(tape, inputs);
  NodePtr out = make_node(std::move(shape), std::move(data), rec);
  if (rec) {
    std::vector<NodePtr> in_nodes;
    in_nodes.reserve(inputs.size());
    for (const Tensor* t : inputs) in_nodes.push_back(t->shared_node());
    tape->record(std::move(in_nodes), out, make_fn(out));
  }
  return Tensor::wrap(out);
}

}  // namespace

// ----- Tensor ----------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  std::vector<double> data(shape_numel(shape), 0.0);
  return Tensor(make_node(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::filled(Shape shape, double value, bool requires_grad) {
  std::vector<double> data(shape_numel(shape), value);
  return Tensor(make_node(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("from_data: shape " + shape_str(shape) + " does not match " +
                     std::to_string(data.size()) + " values");
  }
  return Tensor(make_node(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_data({1}, {value}, requires_grad);
}

const Shape& Tensor::shape() const {
  if (!node_) throw UsageError("shape() on undefined tensor");
  return node_->shape;
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }

std::size_t Tensor::rows() const {
  require_rank2(*this, "rows");
  return shape()[0];
}

std::size_t Tensor::cols() const {
  require_rank2(*this, "cols");
  return shape()[1];
}

std::span<const double> Tensor::data() const {
  if (!node_) throw UsageError("data() on undefined tensor");
  return node_->data;
}

std::span<double> Tensor::mutable_data() {
  if (!node_) throw UsageError("mutable_data() on undefined tensor");
  return node_->data;
}

double Tensor::value() const {
  if (numel() != 1) throw ShapeError("value(): tensor is not scalar, shape " + shape_str(shape()));
  return node_->data[0];
}

double Tensor::at(std::size_t i) const {
  if (i >= node_->data.size()) throw ShapeError("at(): index out of range");
  return node_->data[i];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  require_rank2(*this, "at");
  if (r >= rows() || c >= cols()) throw ShapeError("at(): index out of range");
  return node_->data[r * cols() + c];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

std::span<const double> Tensor::grad() const {
  if (!node_) throw UsageError("grad() on undefined tensor");
  if (!node_->requires_grad) throw UsageError("grad() on a tensor that does not require grad");
  return node_->grad;
}

void Tensor::zero_grad() {
  if (!node_) return;
  std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach() const {
  if (!node_) throw UsageError("detach() on undefined tensor");
  return Tensor(make_node(node_->shape, node_->data, false));
}

// ----- GradStore / Tape -------------------------------------------------

std::span<double> GradStore::of(const detail::TensorNode* node) {
  auto it = store_.find(node);
  if (it == store_.end()) {
    it = store_.emplace(node, std::vector<double>(node->data.size(), 0.0)).first;
  }
  return it->second;
}

const std::vector<double>* GradStore::find(const detail::TensorNode* node) const {
  auto it = store_.find(node);
  return it == store_.end() ? nullptr : &it->second;
}

void Tape::clear() {
  records_.clear();
  outputs_.clear();
}

void Tape::record(std::vector<NodePtr> inputs, NodePtr output, BackwardFn fn) {
  outputs_.insert(output.get());
  records_.push_back(Record{std::move(inputs), std::move(output), std::move(fn)});
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw UsageError("backward: loss must be a scalar tensor");
  }
  if (!produced(loss.node())) {
    throw UsageError("backward: loss was not produced on this tape");
  }

  GradStore store;
  store.of(loss.node())[0] = 1.0;

  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    if (store.find(it->output.get()) == nullptr) continue;  // unreachable from loss
    it->backward(store);
  }

  // Fold accumulated gradients into persistent leaf storage. Leaves are the
  // nodes that were never produced by this tape.
  for (const auto& [node, g] : store.entries()) {
    if (outputs_.contains(node)) continue;
    auto* mutable_node = const_cast<detail::TensorNode*>(node);
    if (!mutable_node->requires_grad) continue;
    for (std::size_t i = 0; i < g.size(); ++i) mutable_node->grad[i] += g[i];
  }
}

// ----- elementwise ------------------------------------------------------

Tensor add(Tape* tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  auto an = a.shared_node();
  auto bn = b.shared_node();
  return finish2(tape, "add", a.shape(), std::move(out), {&a, &b}, [an, bn](const NodePtr& o) {
    return [an, bn, o](GradStore& gs) {
      auto go = gs.of(o.get());
      if (an->requires_grad) {
        auto ga = gs.of(an.get());
        for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
      }
      if (bn->requires_grad) {
        auto gb = gs.of(bn.get());
        for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i];
      }
    };
  });
}

Tensor sub(Tape* tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  auto an = a.shared_node();
  auto bn = b.shared_node();
  return finish2(tape, "sub", a.shape(), std::move(out), {&a, &b}, [an, bn](const NodePtr& o) {
    return [an, bn, o](GradStore& gs) {
      auto go = gs.of(o.get());
      if (an->requires_grad) {
        auto ga = gs.of(an.get());
        for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
      }
      if (bn->requires_grad) {
        auto gb = gs.of(bn.get());
        for (std::size_t i = 0; i < go.size(); ++i) gb[i] -= go[i];
      }
    };
  });
}

Tensor mul(Tape* tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  auto an = a.shared_node();
  auto bn = b.shared_node();
  return finish2(tape, "mul", a.shape(), std::move(out), {&a, &b}, [an, bn](const NodePtr& o) {
    return [an, bn, o](GradStore& gs) {
      auto go = gs.of(o.get());
      if (an->requires_grad) {
        auto ga = gs.of(an.get());
        for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * bn->data[i];
      }
      if (bn->requires_grad) {
        auto gb = gs.of(bn.get());
        for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * an->data[i];
      }
    };
  });
}

Tensor scale(Tape* tape, const Tensor& a, double c) {
  if (!std::isfinite(c)) throw NumericError("scale: non-finite factor");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * c;
  auto an = a.shared_node();
  return finish2(tape, "scale", a.shape(), std::move(out), {&a}, [an, c](const NodePtr& o) {
    return [an, c, o](GradStore& gs) {
      auto go = gs.of(o.get());
      auto ga = gs.of(an.get());
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * c;
    };
  });
}

Tensor add_scalar(Tape* tape, const Tensor& a, double c) {
  if (!std::isfinite(c)) throw NumericError("add_scalar: non-finite addend");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + c;
  auto an = a.shared_node();
  return finish2(tape, "add_scalar", a.shape(), std::move(out), {&a}, [an](const NodePtr& o) {
    return [an, o](GradStore& gs) {
      auto go = gs.of(o.get());
      auto ga = gs.of(an.get());
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
    };
  });
}

// ----- linear algebra ---------------------------------------------------

Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw ShapeError("matmul: inner extents disagree, " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  {
    const double* A = a.data().data();
    const double* B = b.data().data();
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t p = 0; p < k; ++p) {
        const double av = A[i * k + p];
        if (av == 0.0) continue;
        const double* brow = B + p * n;
        double* orow = out.data() + i * n;
        for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
      }
    }
  }
  auto an = a.shared_node();
  auto bn = b.shared_node();
  return finish2(tape, "matmul", {m, n}, std::move(out), {&a, &b},
                 [an, bn, m, k, n](const NodePtr& o) {
                   return [an, bn, m, k, n, o](GradStore& gs) {
                     auto go = gs.of(o.get());
                     if (an->requires_grad) {
                       // dA = G * B^T
                       auto ga = gs.of(an.get());
                       const double* B = bn->data.data();
                       for (std::size_t i = 0; i < m; ++i) {
                         for (std::size_t j = 0; j < n; ++j) {
                           const double g = go[i * n + j];
                           if (g == 0.0) continue;
                           const double* brow = B + 0;
                           for (std::size_t p = 0; p < k; ++p) {
                             ga[i * k + p] += g * brow[p * n + j];
                           }
                         }
                       }
                     }
                     if (bn->requires_grad) {
                       // dB = A^T * G
                       auto gb = gs.of(bn.get());
                       const double* A = an->data.data();
                       for (std::size_t i = 0; i < m; ++i) {
                         for (std::size_t p = 0; p < k; ++p) {
                           const double av = A[i * k + p];
                           if (av == 0.0) continue;
                           for (std::size_t j = 0; j < n; ++j) {
                             gb[p * n + j] += av * go[i * n + j];
                           }
                         }
                       }
                     }
                   };
                 });
}

Tensor add_rowvec(Tape* tape, const Tensor& m, const Tensor& v) {
  require_rank2(m, "add_rowvec");
  if (v.rank() != 1 || v.shape()[0] != m.cols()) {
    throw ShapeError("add_rowvec: vector " + shape_str(v.shape()) + " does not match matrix " +
                     shape_str(m.shape()));
  }
  const std::size_t r = m.rows(), c = m.cols();
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = m.at(i, j) + v.at(j);
  }
  auto mn = m.shared_node();
  auto vn = v.shared_node();
  return finish2(tape, "add_rowvec", {r, c}, std::move(out), {&m, &v},
                 [mn, vn, r, c](const NodePtr& o) {
                   return [mn, vn, r, c, o](GradStore& gs) {
                     auto go = gs.of(o.get());
                     if (mn->requires_grad) {
                       auto gm = gs.of(mn.get());
                       for (std::size_t i = 0; i < go.size(); ++i) gm[i] += go[i];
                     }
                     if (vn->requires_grad) {
                       auto gv = gs.of(vn.get());
                       for (std::size_t i = 0; i < r; ++i) {
                         for (std::size_t j = 0; j < c; ++j) gv[j] += go[i * c + j];
                       }
                     }
                   };
                 });
}

Tensor scale_rows(Tape* tape, const Tensor& m, const Tensor& s) {
  require_rank2(m, "scale_rows");
  if (s.rank() != 1 || s.shape()[0] != m.rows()) {
    throw ShapeError("scale_rows: scale vector " + shape_str(s.shape()) +
                     " does not match matrix " + shape_str(m.shape()));
  }
  const std::size_t r = m.rows(), c = m.cols();
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = m.at(i, j) * s.at(i);
  }
  auto mn = m.shared_node();
  auto sn = s.shared_node();
  return finish2(tape, "scale_rows", {r, c}, std::move(out), {&m, &s},
                 [mn, sn, r, c](const NodePtr& o) {
                   return [mn, sn, r, c, o](GradStore& gs) {
                     auto go = gs.of(o.get());
                     if (mn->requires_grad) {
                       auto gm = gs.of(mn.get());
                       for (std::size_t i = 0; i < r; ++i) {
                         for (std::size_t j = 0; j < c; ++j) {
                           gm[i * c + j] += go[i * c + j] * sn->data[i];
                         }
                       }
                     }
                     if (sn->requires_grad) {
                       auto gv = gs.of(sn.get());
                       for (std::size_t i = 0; i < r; ++i) {
                         double acc = 0.0;
                         for (std::size_t j = 0; j < c; ++j) {
                           acc += go[i * c + j] * mn->data[i * c + j];
                         }
                         gv[i] += acc;
                       }
                     }
                   };
                 });
}

// ----- nonlinearities ---------------------------------------------------

Tensor relu(Tape* tape, const Tensor& a) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] > 0.0 ? a.data()[i] : 0.0;
  auto an = a.shared_node();
  return finish2(tape, "relu", a.shape(), std::move(out), {&a}, [an](const NodePtr& o) {
    return [an, o](GradStore& gs) {
      auto go = gs.of(o.get());
      auto ga = gs.of(an.get());
      for (std::size_t i = 0; i < go.size(); ++i) {
        if (an->data[i] > 0.0) ga[i] += go[i];
      }
    };
  });
}

Tensor log(Tape* tape, const Tensor& a) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (a.data()[i] <= 0.0) throw NumericError("log: non-positive entry");
    out[i] = std::log(a.data()[i]);
  }
  auto an = a.shared_node();
  return finish2(tape, "log", a.shape(), std::move(out), {&a}, [an](const NodePtr& o) {
    return [an, o](GradStore& gs) {
      auto go = gs.of(o.get());
      auto ga = gs.of(an.get());
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] / an->data[i];
    };
  });
}

Tensor exp(Tape* tape, const Tensor& a) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(a.data()[i]);
  auto an = a.shared_node();
  return finish2(tape, "exp", a.shape(), std::move(out), {&a}, [an](const NodePtr& o) {
    return [an, o](GradStore& gs) {
      auto go = gs.of(o.get());
      auto ga = gs.of(an.get());
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * o->data[i];
    };
  });
}

Tensor sqrt(Tape* tape, const Tensor& a) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (a.data()[i] < 0.0) throw NumericError("sqrt: negative entry");
    out[i] = std::sqrt(a.data()[i]);
  }
  auto an = a.shared_node();
  return finish2(tape, "sqrt", a.shape(), std::move(out), {&a}, [an](const NodePtr& o) {
    return [an, o](GradStore& gs) {
      auto go = gs.of(o.get());
      auto ga = gs.of(an.get());
      for (std::size_t i = 0; i < go.size(); ++i) {
        if (an->data[i] > 0.0) ga[i] += go[i] * 0.5 / o->data[i];
      }
    };
  });
}

Tensor clamp_min(Tape* tape, const Tensor& a, double floor) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(a.data()[i], floor);
  auto an = a.shared_node();
  return finish2(tape, "clamp_min", a.shape(), std::move(out), {&a}, [an, floor](const NodePtr& o) {
    return [an, floor, o](GradStore& gs) {
      auto go = gs.of(o.get());
      auto ga = gs.of(an.get());
      for (std::size_t i = 0; i < go.size(); ++i) {
        if (an->data[i] > floor) ga[i] += go[i];
      }
    };
  });
}

Tensor pow_scalar(Tape* tape, const Tensor& a, double exponent) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (a.data()[i] <= 0.0) throw NumericError("pow_scalar: non-positive base");
    out[i] = std::pow(a.data()[i], exponent);
  }
  auto an = a.shared_node();
  return finish2(tape, "pow_scalar", a.shape(), std::move(out), {&a},
                 [an, exponent](const NodePtr& o) {
                   return [an, exponent, o](GradStore& gs) {
                     auto go = gs.of(o.get());
                     auto ga = gs.of(an.get());
                     for (std::size_t i = 0; i < go.size(); ++i) {
                       ga[i] += go[i] * exponent * o->data[i] / an->data[i];
                     }
                   };
                 });
}

// ----- reductions -------------------------------------------------------

Tensor sum(Tape* tape, const Tensor& a) {
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  auto an = a.shared_node();
  return finish2(tape, "sum", {1}, {acc}, {&a}, [an](const NodePtr& o) {
    return [an, o](GradStore& gs) {
      const double g = gs.of(o.get())[0];
      auto ga = gs.of(an.get());
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
    };
  });
}

Tensor mean(Tape* tape, const Tensor& a) {
  if (a.numel() == 0) throw ShapeError("mean: empty tensor");
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  const double n = static_cast<double>(a.numel());
  auto an = a.shared_node();
  return finish2(tape, "mean", {1}, {acc / n}, {&a}, [an, n](const NodePtr& o) {
    return [an, n, o](GradStore& gs) {
      const double g = gs.of(o.get())[0] / n;
      auto ga = gs.of(an.get());
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
    };
  });
}

Tensor sum_rowwise(Tape* tape, const Tensor& a) {
  require_rank2(a, "sum_rowwise");
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<double> out(r, 0.0);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[i] += a.at(i, j);
  }
  auto an = a.shared_node();
  return finish2(tape, "sum_rowwise", {r}, std::move(out), {&a}, [an, r, c](const NodePtr& o) {
    return [an, r, c, o](GradStore& gs) {
      auto go = gs.of(o.get());
      auto ga = gs.of(an.get());
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += go[i];
      }
    };
  });
}

Tensor mean_colwise(Tape* tape, const Tensor& a) {
  require_rank2(a, "mean_colwise");
  const std::size_t r = a.rows(), c = a.cols();
  if (r == 0) throw ShapeError("mean_colwise: no rows");
  std::vector<double> out(c, 0.0);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[j] += a.at(i, j);
  }
  for (std::size_t j = 0; j < c; ++j) out[j] /= static_cast<double>(r);
  auto an = a.shared_node();
  return finish2(tape, "mean_colwise", {c}, std::move(out), {&a}, [an, r, c](const NodePtr& o) {
    return [an, r, c, o](GradStore& gs) {
      auto go = gs.of(o.get());
      auto ga = gs.of(an.get());
      const double inv = 1.0 / static_cast<double>(r);
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += go[j] * inv;
      }
    };
  });
}

// ----- restructuring ----------------------------------------------------

namespace {

// rank-1 tensors participate in row stacking as single rows
std::pair<std::size_t, std::size_t> as_rows(const Tensor& t) {
  if (t.rank() == 1) return {1, t.shape()[0]};
  if (t.rank() == 2) return {t.rows(), t.cols()};
  throw ShapeError("concat_rows: rank must be 1 or 2");
}

}  // namespace

Tensor concat_rows(Tape* tape, std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t c = as_rows(parts[0]).second;
  std::size_t total_rows = 0;
  for (const Tensor& t : parts) {
    auto [tr, tc] = as_rows(t);
    if (tc != c) throw ShapeError("concat_rows: column extents disagree");
    total_rows += tr;
  }
  std::vector<double> out;
  out.reserve(total_rows * c);
  bool any_grad = false;
  for (const Tensor& t : parts) {
    out.insert(out.end(), t.data().begin(), t.data().end());
    any_grad = any_grad || t.requires_grad();
  }
  ensure_finite(out, "concat_rows");
  const bool rec = tape != nullptr && any_grad;
  NodePtr node = make_node({total_rows, c}, std::move(out), rec);
  if (rec) {
    std::vector<NodePtr> in_nodes;
    in_nodes.reserve(parts.size());
    for (const Tensor& t : parts) in_nodes.push_back(t.shared_node());
    NodePtr out_node = node;
    tape->record(in_nodes, node, [in_nodes, out_node](GradStore& gs) {
      auto go = gs.of(out_node.get());
      std::size_t offset = 0;
      for (const NodePtr& in : in_nodes) {
        const std::size_t n = in->data.size();
        if (in->requires_grad) {
          auto gi = gs.of(in.get());
          for (std::size_t i = 0; i < n; ++i) gi[i] += go[offset + i];
        }
        offset += n;
      }
    });
  }
  return Tensor::wrap(node);
}

Tensor stack_cols(Tape* tape, std::span<const Tensor> columns) {
  if (columns.empty()) throw ShapeError("stack_cols: no inputs");
  const std::size_t n = columns[0].numel();
  for (const Tensor& t : columns) {
    if (t.rank() != 1 || t.numel() != n) {
      throw ShapeError("stack_cols: inputs must be rank-1 of equal length");
    }
  }
  const std::size_t k = columns.size();
  std::vector<double> out(n * k);
  bool any_grad = false;
  for (std::size_t j = 0; j < k; ++j) {
    for (std::size_t i = 0; i < n; ++i) out[i * k + j] = columns[j].at(i);
    any_grad = any_grad || columns[j].requires_grad();
  }
  ensure_finite(out, "stack_cols");
  const bool rec = tape != nullptr && any_grad;
  NodePtr node = make_node({n, k}, std::move(out), rec);
  if (rec) {
    std::vector<NodePtr> in_nodes;
    in_nodes.reserve(k);
    for (const Tensor& t : columns) in_nodes.push_back(t.shared_node());
    NodePtr out_node = node;
    tape->record(in_nodes, node, [in_nodes, out_node, n, k](GradStore& gs) {
      auto go = gs.of(out_node.get());
      for (std::size_t j = 0; j < k; ++j) {
        if (!in_nodes[j]->requires_grad) continue;
        auto gi = gs.of(in_nodes[j].get());
        for (std::size_t i = 0; i < n; ++i) gi[i] += go[i * k + j];
      }
    });
  }
  return Tensor::wrap(node);
}

Tensor row_select(Tape* tape, const Tensor& a, std::span<const std::size_t> row_indices) {
  require_rank2(a, "row_select");
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<double> out;
  out.reserve(row_indices.size() * c);
  for (std::size_t idx : row_indices) {
    if (idx >= r) throw ShapeError("row_select: row index out of range");
    out.insert(out.end(), a.data().begin() + idx * c, a.data().begin() + (idx + 1) * c);
  }
  std::vector<std::size_t> rows_copy(row_indices.begin(), row_indices.end());
  auto an = a.shared_node();
  return finish2(tape, "row_select", {row_indices.size(), c}, std::move(out), {&a},
                 [an, rows_copy = std::move(rows_copy), c](const NodePtr& o) {
                   return [an, rows_copy, c, o](GradStore& gs) {
                     auto go = gs.of(o.get());
                     auto ga = gs.of(an.get());
                     for (std::size_t i = 0; i < rows_copy.size(); ++i) {
                       for (std::size_t j = 0; j < c; ++j) {
                         ga[rows_copy[i] * c + j] += go[i * c + j];
                       }
                     }
                   };
                 });
}

Tensor select(Tape* tape, const Tensor& a, std::span<const std::size_t> flat_indices) {
  std::vector<double> out;
  out.reserve(flat_indices.size());
  for (std::size_t idx : flat_indices) {
    if (idx >= a.numel()) throw ShapeError("select: flat index out of range");
    out.push_back(a.data()[idx]);
  }
  std::vector<std::size_t> idx_copy(flat_indices.begin(), flat_indices.end());
  auto an = a.shared_node();
  return finish2(tape, "select", {flat_indices.size()}, std::move(out), {&a},
                 [an, idx_copy = std::move(idx_copy)](const NodePtr& o) {
                   return [an, idx_copy, o](GradStore& gs) {
                     auto go = gs.of(o.get());
                     auto ga = gs.of(an.get());
                     for (std::size_t i = 0; i < idx_copy.size(); ++i) {
                       ga[idx_copy[i]] += go[i];
                     }
                   };
                 });
}

Tensor reshape(Tape* tape, const Tensor& a, Shape new_shape) {
  if (shape_numel(new_shape) != a.numel()) {
    throw ShapeError("reshape: element count mismatch for " + shape_str(new_shape));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  auto an = a.shared_node();
  return finish2(tape, "reshape", std::move(new_shape), std::move(out), {&a},
                 [an](const NodePtr& o) {
                   return [an, o](GradStore& gs) {
                     auto go = gs.of(o.get());
                     auto ga = gs.of(an.get());
                     for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
                   };
                 });
}

// ----- softmax / KL / distances ------------------------------------------

Tensor softmax_rows(Tape* tape, const Tensor& logits, double temperature) {
  require_rank2(logits, "softmax_rows");
  if (!(temperature > 0.0)) throw ConfigError("softmax_rows: temperature must be positive");
  const std::size_t r = logits.rows(), c = logits.cols();
  if (c == 0) throw ShapeError("softmax_rows: empty rows");
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    double m = logits.at(i, 0);
    for (std::size_t j = 1; j < c; ++j) m = std::max(m, logits.at(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double e = std::exp((logits.at(i, j) - m) / temperature);
      out[i * c + j] = e;
      z += e;
    }
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= z;
  }
  auto ln = logits.shared_node();
  return finish2(tape, "softmax_rows", {r, c}, std::move(out), {&logits},
                 [ln, r, c, temperature](const NodePtr& o) {
                   return [ln, r, c, temperature, o](GradStore& gs) {
                     auto go = gs.of(o.get());
                     auto gl = gs.of(ln.get());
                     for (std::size_t i = 0; i < r; ++i) {
                       double dot = 0.0;
                       for (std::size_t j = 0; j < c; ++j) {
                         dot += go[i * c + j] * o->data[i * c + j];
                       }
                       for (std::size_t j = 0; j < c; ++j) {
                         const double p = o->data[i * c + j];
                         gl[i * c + j] += p * (go[i * c + j] - dot) / temperature;
                       }
                     }
                   };
                 });
}

namespace {
constexpr double kLogFloor = 1e-12;
}

Tensor kl_divergence(Tape* tape, const Tensor& p, const Tensor& q) {
  require_rank2(p, "kl_divergence");
  require_same_shape(p, q, "kl_divergence");
  const std::size_t r = p.rows(), c = p.cols();
  for (std::size_t i = 0; i < r; ++i) {
    double ps = 0.0, qs = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double pv = p.at(i, j), qv = q.at(i, j);
      if (pv < 0.0 || qv < 0.0) throw UsageError("kl_divergence: negative entry");
      ps += pv;
      qs += qv;
    }
    if (std::abs(ps - 1.0) > 1e-9 || std::abs(qs - 1.0) > 1e-9) {
      throw UsageError("kl_divergence: rows must sum to 1 within 1e-9");
    }
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < r * c; ++i) {
    const double pv = p.data()[i];
    if (pv == 0.0) continue;  // 0 ln 0 convention
    const double qv = std::max(q.data()[i], kLogFloor);
    acc += pv * (std::log(std::max(pv, kLogFloor)) - std::log(qv));
  }
  auto pn = p.shared_node();
  auto qn = q.shared_node();
  return finish2(tape, "kl_divergence", {1}, {acc}, {&p, &q}, [pn, qn](const NodePtr& o) {
    return [pn, qn, o](GradStore& gs) {
      const double g = gs.of(o.get())[0];
      if (pn->requires_grad) {
        auto gp = gs.of(pn.get());
        for (std::size_t i = 0; i < gp.size(); ++i) {
          const double pv = pn->data[i];
          const double qv = std::max(qn->data[i], kLogFloor);
          const double lp = std::log(std::max(pv, kLogFloor));
          gp[i] += g * (lp - std::log(qv) + (pv > kLogFloor ? 1.0 : 0.0));
        }
      }
      if (qn->requires_grad) {
        auto gq = gs.of(qn.get());
        for (std::size_t i = 0; i < gq.size(); ++i) {
          const double pv = pn->data[i];
          const double qv = qn->data[i];
          if (pv > 0.0 && qv > kLogFloor) gq[i] -= g * pv / qv;
        }
      }
    };
  });
}

Tensor pairwise_sq_euclidean(Tape* tape, const Tensor& x) {
  require_rank2(x, "pairwise_sq_euclidean");
  const std::size_t b = x.rows(), d = x.cols();
  if (b < 2) throw ShapeError("pairwise_sq_euclidean: need at least two rows");
  std::vector<double> sq_norm(b, 0.0);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < d; ++j) sq_norm[i] += x.at(i, j) * x.at(i, j);
  }
  std::vector<double> out(b * b, 0.0);
  // mask marks entries where the clamp is inactive (raw value positive)
  std::vector<char> mask(b * b, 0);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = i + 1; j < b; ++j) {
      double dot = 0.0;
      for (std::size_t l = 0; l < d; ++l) dot += x.at(i, l) * x.at(j, l);
      const double raw = sq_norm[i] + sq_norm[j] - 2.0 * dot;
      const double v = raw > 0.0 ? raw : 0.0;
      out[i * b + j] = v;
      out[j * b + i] = v;
      if (raw > 0.0) {
        mask[i * b + j] = 1;
        mask[j * b + i] = 1;
      }
    }
  }
  auto xn = x.shared_node();
  return finish2(tape, "pairwise_sq_euclidean", {b, b}, std::move(out), {&x},
                 [xn, b, d, mask = std::move(mask)](const NodePtr& o) {
                   return [xn, b, d, mask, o](GradStore& gs) {
                     auto go = gs.of(o.get());
                     auto gx = gs.of(xn.get());
                     const double* X = xn->data.data();
                     for (std::size_t i = 0; i < b; ++i) {
                       for (std::size_t j = 0; j < b; ++j) {
                         if (i == j || !mask[i * b + j]) continue;
                         const double g = go[i * b + j];
                         if (g == 0.0) continue;
                         for (std::size_t l = 0; l < d; ++l) {
                           const double diff = X[i * d + l] - X[j * d + l];
                           gx[i * d + l] += 2.0 * g * diff;
                           gx[j * d + l] -= 2.0 * g * diff;
                         }
                       }
                     }
                   };
                 });
}

}  // namespace mdkt
