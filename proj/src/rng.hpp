#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace mdkt {

// Derives an independent child seed from a base seed and a stream tag.
// Used to pre-split RNG streams (per identity, per step, per ablation row)
// so results do not depend on evaluation order.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag);
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag_a, std::uint64_t tag_b);

// Deterministic random source. Gaussian draws use Box-Muller on top of
// mt19937_64 so sequences are identical across standard libraries
// (std::normal_distribution is implementation-defined).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform();                       // [0, 1)
  double gaussian();                      // standard normal
  std::uint64_t next_u64() { return engine_(); }

  // integer in [0, n), n > 0
  std::size_t index(std::size_t n);

  // k distinct indices drawn without replacement from [0, n)
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[index(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace mdkt
