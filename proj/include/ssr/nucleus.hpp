#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ssr/rng.hpp"

namespace ssr {

struct NucleusDraw {
  std::size_t id = 0;
  /// Probability of `id` under the full, untruncated distribution.
  double prob = 0.0;
};

/// Members of the top-p nucleus: the shortest prefix of the ids sorted by
/// descending probability (ties by ascending id) whose mass reaches p.
std::vector<std::size_t> nucleus_set(std::span<const double> dist, double p);

/// Samples from the renormalized nucleus. Throws "invalid distribution" unless
/// every entry is finite and non-negative and the total is 1 within 1e-6.
NucleusDraw nucleus_sample(std::span<const double> dist, double p, Rng& rng);

}  // namespace ssr
