#pragma once

#include <cstdint>

namespace netfx {

/// Counter-based generator: draw i of stream `key` is mix64(key + i * golden),
/// with mix64 the splitmix64 finalizer. Streams derived with split() are
/// independent of each other and of the parent, and identical on every
/// platform.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed);

  std::uint64_t next_u64();
  /// Uniform on the open interval (0, 1).
  double uniform();
  double normal();
  double normal(double mean, double sd) { return mean + sd * normal(); }
  bool bernoulli(double p) { return uniform() < p; }

  /// Independent child stream labelled by `stream`.
  CounterRng split(std::uint64_t stream) const;

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

 private:
  struct Raw {};
  CounterRng(Raw, std::uint64_t key) : key_(key) {}

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t mix64(std::uint64_t z);

}  // namespace netfx
