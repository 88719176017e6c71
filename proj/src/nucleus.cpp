#include "ssr/nucleus.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ssr/error.hpp"

namespace ssr {

namespace {

void check_distribution(std::span<const double> dist, double p) {
  if (!(p > 0.0 && p <= 1.0)) throw Error("nucleus threshold must lie in (0, 1]");
  if (dist.empty()) throw Error("invalid distribution");
  double total = 0.0;
  for (double x : dist) {
    if (!std::isfinite(x) || x < 0.0) throw Error("invalid distribution");
    total += x;
  }
  if (std::abs(total - 1.0) > 1e-6) throw Error("invalid distribution");
}

std::vector<std::size_t> sorted_prefix(std::span<const double> dist, double p, double& mass) {
  std::vector<std::size_t> order(dist.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return dist[a] != dist[b] ? dist[a] > dist[b] : a < b;
  });
  mass = 0.0;
  std::size_t keep = 0;
  while (keep < order.size()) {
    mass += dist[order[keep]];
    ++keep;
    if (mass >= p - 1e-12) break;
  }
  // Zero-probability entries never enter the nucleus.
  while (keep > 1 && dist[order[keep - 1]] == 0.0) --keep;
  order.resize(keep);
  return order;
}

}  // namespace

std::vector<std::size_t> nucleus_set(std::span<const double> dist, double p) {
  check_distribution(dist, p);
  double mass = 0.0;
  auto members = sorted_prefix(dist, p, mass);
  std::sort(members.begin(), members.end());
  return members;
}

NucleusDraw nucleus_sample(std::span<const double> dist, double p, Rng& rng) {
  check_distribution(dist, p);
  double mass = 0.0;
  const auto members = sorted_prefix(dist, p, mass);
  mass = 0.0;
  for (auto id : members) mass += dist[id];
  const double u = rng.uniform() * mass;
  double acc = 0.0;
  for (auto id : members) {
    acc += dist[id];
    if (u < acc) return {id, dist[id]};
  }
  return {members.back(), dist[members.back()]};
}

}  // namespace ssr
