#include "rng.hpp"

#include <cmath>
#include <numbers>

#include "error.hpp"

namespace mdkt {

namespace {

// splitmix64 finalizer; decorrelates sequential tags.
std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag) {
  return mix64(base ^ mix64(tag));
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag_a, std::uint64_t tag_b) {
  return derive_seed(derive_seed(base, tag_a), tag_b);
}

double Rng::uniform() {
  // 53-bit mantissa; value in [0, 1)
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::gaussian() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  have_spare_ = true;
  return r * std::cos(theta);
}

std::size_t Rng::index(std::size_t n) {
  if (n == 0) throw UsageError("Rng::index: n must be positive");
  // rejection sampling to avoid modulo bias
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t v = engine_();
  while (v >= limit) v = engine_();
  return static_cast<std::size_t>(v % n);
}

std::vector<std::size_t> Rng::sample_without_replacement(std::size_t n, std::size_t k) {
  if (k > n) throw UsageError("sample_without_replacement: k exceeds population");
  std::vector<std::size_t> pool(n);
  for (std::size_t i = 0; i < n; ++i) pool[i] = i;
  // partial Fisher-Yates: first k entries are the sample
  for (std::size_t i = 0; i < k; ++i) {
    std::swap(pool[i], pool[i + index(n - i)]);
  }
  pool.resize(k);
  return pool;
}

}  // namespace mdkt
