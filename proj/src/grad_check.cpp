#include "grad_check.hpp"

#include <cmath>
#include <vector>

namespace mdkt {

double grad_check(const TensorExpr& f, std::span<const Tensor> inputs, double step) {
  if (!(step > 0.0)) throw UsageError("grad_check: step must be positive");
  for (const Tensor& t : inputs) {
    if (!t.requires_grad()) throw UsageError("grad_check: inputs must require grad");
  }

  // analytic pass
  std::vector<std::vector<double>> analytic;
  {
    for (const Tensor& t : inputs) const_cast<Tensor&>(t).zero_grad();
    Tape tape;
    Tensor loss = f(&tape, inputs);
    if (loss.numel() != 1) throw UsageError("grad_check: expression must be scalar-valued");
    tape.backward(loss);
    for (const Tensor& t : inputs) {
      analytic.emplace_back(t.grad().begin(), t.grad().end());
    }
  }

  auto eval = [&]() {
    const Tensor v = f(nullptr, inputs);
    const double x = v.value();
    if (!std::isfinite(x)) throw NumericError("grad_check: non-finite evaluation");
    return x;
  };

  double worst = 0.0;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    auto storage = const_cast<Tensor&>(inputs[t]).mutable_data();
    for (std::size_t i = 0; i < storage.size(); ++i) {
      const double saved = storage[i];
      storage[i] = saved + step;
      const double up = eval();
      storage[i] = saved - step;
      const double down = eval();
      storage[i] = saved;
      const double central = (up - down) / (2.0 * step);
      const double err = std::abs(analytic[t][i] - central) / std::max(1.0, std::abs(central));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

double grad_check(const std::function<Tensor(Tape*, const Tensor&)>& f, const Tensor& x,
                  double step) {
  const Tensor inputs[1] = {x};
  return grad_check([&f](Tape* tape, std::span<const Tensor> in) { return f(tape, in[0]); },
                    inputs, step);
}

}  // namespace mdkt
