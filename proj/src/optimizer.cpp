#include "optimizer.hpp"

#include <cmath>

#include "error.hpp"

namespace mdkt {

void AdamConfig::validate() const {
  if (!(learning_rate >= 0.0)) throw ConfigError("adam: learning_rate must be >= 0");
  if (beta1 < 0.0 || beta1 >= 1.0) throw ConfigError("adam: beta1 must be in [0, 1)");
  if (beta2 < 0.0 || beta2 >= 1.0) throw ConfigError("adam: beta2 must be in [0, 1)");
  if (!(epsilon > 0.0)) throw ConfigError("adam: epsilon must be positive");
}

Adam::Adam(std::vector<Tensor> params, AdamConfig config) : config_(config) {
  config_.validate();
  slots_.reserve(params.size());
  for (Tensor& p : params) {
    if (!p.requires_grad()) throw UsageError("adam: parameters must require grad");
    Slot slot;
    slot.m.assign(p.numel(), 0.0);
    slot.v.assign(p.numel(), 0.0);
    slot.param = std::move(p);
    slots_.push_back(std::move(slot));
  }
}

void Adam::step() {
  ++step_count_;
  const double t = static_cast<double>(step_count_);
  const double bc1 = 1.0 - std::pow(config_.beta1, t);
  const double bc2 = 1.0 - std::pow(config_.beta2, t);
  for (Slot& slot : slots_) {
    auto grad = slot.param.grad();
    if (grad.size() != slot.m.size()) throw UsageError("adam: gradient/state size mismatch");
    auto data = slot.param.mutable_data();
    for (std::size_t i = 0; i < grad.size(); ++i) {
      const double g = grad[i];
      if (!std::isfinite(g)) throw NumericError("adam: non-finite gradient");
      slot.m[i] = config_.beta1 * slot.m[i] + (1.0 - config_.beta1) * g;
      slot.v[i] = config_.beta2 * slot.v[i] + (1.0 - config_.beta2) * g * g;
      const double m_hat = slot.m[i] / bc1;
      const double v_hat = slot.v[i] / bc2;
      data[i] -= config_.learning_rate * m_hat / (std::sqrt(v_hat) + config_.epsilon);
    }
  }
}

void Adam::zero_grad() {
  for (Slot& slot : slots_) slot.param.zero_grad();
}

}  // namespace mdkt
