#pragma once

#include <cstdint>
#include <utility>
#include <initializer_list>

namespace cofair {

// Purposes get their own stream so that, e.g., changing the dropout schedule
// never perturbs parameter initialization or negative sampling.
enum class Stream : std::uint64_t {
  init = 1,
  negatives = 2,
  dropout = 3,
  split = 4,
  synth = 5,
  batches = 6,
  probe = 7,
};

// Counter-based generator: the n-th draw is mix(key + n * golden), so output
// depends only on (key, n). Keys are derived by hashing a seed with a path of
// integers (stream, epoch, user, ...), which gives independent, order-free
// substreams. Output is identical on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t key = 0) : key_(key) {}

  static Rng derive(std::uint64_t seed, std::initializer_list<std::uint64_t> path);
  static Rng derive(std::uint64_t seed, Stream stream, std::initializer_list<std::uint64_t> path = {});

  std::uint64_t next_u64();

  // Uniform on [0, 1) with 53 random bits.
  double uniform();
  // Uniform on [lo, hi).
  double uniform(double lo, double hi);
  // Uniform integer on [0, n); n must be > 0.
  std::uint64_t below(std::uint64_t n);
  // Standard normal (Box-Muller, one value per two uniforms).
  double normal();
  bool bernoulli(double p) { return uniform() < p; }

  std::uint64_t key() const noexcept { return key_; }
  std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

std::uint64_t mix64(std::uint64_t x);

// Fisher-Yates shuffle driven by `rng`.
template <typename It>
void shuffle(It first, It last, Rng& rng) {
  const auto n = static_cast<std::uint64_t>(last - first);
  for (std::uint64_t i = n; i > 1; --i) {
    const auto j = rng.below(i);
    using std::swap;
    swap(first[static_cast<std::ptrdiff_t>(i - 1)], first[static_cast<std::ptrdiff_t>(j)]);
  }
}

}  // namespace cofair
