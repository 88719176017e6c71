#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace ssr {

/// 64-bit FNV-1a over raw bytes.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis = 0xcbf29ce484222325ULL);

std::uint64_t splitmix64(std::uint64_t x);

/// Seed for a per-document stream: independent of processing order.
std::uint64_t stream_seed(std::uint64_t global_seed, std::string_view stream_name);

// Deterministic generator. All draws are implemented here rather than through
// <random> distributions so sequences do not depend on the standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}
  Rng(std::uint64_t global_seed, std::string_view stream_name)
      : engine_(stream_seed(global_seed, stream_name)) {}

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform on [0, 1) with 53 bits of resolution.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  /// Uniform on {0, ..., n-1}; n must be positive.
  std::uint64_t below(std::uint64_t n);
  bool bernoulli(double p) { return uniform() < p; }
  /// Standard normal via Box-Muller.
  double normal();

  std::string state() const;
  void set_state(const std::string& s);

 private:
  std::mt19937_64 engine_;
};

}  // namespace ssr
