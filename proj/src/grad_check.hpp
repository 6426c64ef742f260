#pragma once

#include <functional>
#include <span>

#include "tensor.hpp"

namespace mdkt {

// Scalar-valued tensor expression over a set of leaf inputs. The function is
// called with a fresh tape for the analytic pass and with no tape for the
// finite-difference probes, so it must route every op through the tape it is
// handed.
using TensorExpr = std::function<Tensor(Tape*, std::span<const Tensor>)>;

// Compares reverse-mode gradients against central finite differences.
// Returns max over all coordinates of all inputs of
//   |analytic - central| / max(1, |central|).
// Inputs must require grad. Functions with a non-differentiable kink exactly
// at the evaluation point (hinge boundaries, clamp thresholds) are outside
// this check's contract.
double grad_check(const TensorExpr& f, std::span<const Tensor> inputs, double step);

// Single-input convenience form.
double grad_check(const std::function<Tensor(Tape*, const Tensor&)>& f, const Tensor& x,
                  double step);

}  // namespace mdkt
