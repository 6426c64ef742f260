#pragma once

#include <cstdint>
#include <vector>

#include "tensor.hpp"

namespace mdkt {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const;
};

// Adam with bias correction. State is bound to a fixed parameter list; the
// step count is shared across parameters.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamConfig config);

  // applies one update from the parameters' accumulated gradients
  void step();
  void zero_grad();

  std::uint64_t step_count() const { return step_count_; }
  const AdamConfig& config() const { return config_; }

 private:
  struct Slot {
    Tensor param;
    std::vector<double> m;
    std::vector<double> v;
  };

  std::vector<Slot> slots_;
  AdamConfig config_;
  std::uint64_t step_count_ = 0;
};

}  // namespace mdkt
