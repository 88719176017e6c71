#include "ssr/curriculum.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

#include "json.hpp"
#include "ssr/error.hpp"

namespace ssr {

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::kCurriculum: return "curriculum";
    case Strategy::kNone: return "none";
    case Strategy::kAnti: return "anti";
    case Strategy::kLossOnly: return "loss-only";
    case Strategy::kLengthOnly: return "length-only";
  }
  return "?";
}

Strategy parse_strategy(std::string_view s) {
  if (s == "curriculum") return Strategy::kCurriculum;
  if (s == "none") return Strategy::kNone;
  if (s == "anti") return Strategy::kAnti;
  if (s == "loss-only" || s == "loss_only") return Strategy::kLossOnly;
  if (s == "length-only" || s == "length_only") return Strategy::kLengthOnly;
  throw Error("unknown curriculum strategy: " + std::string(s));
}

std::vector<Strategy> all_strategies() {
  return {Strategy::kCurriculum, Strategy::kNone, Strategy::kAnti, Strategy::kLossOnly,
          Strategy::kLengthOnly};
}

double score(const SSRExample& ex, Strategy strategy) {
  if (ex.mode != Mode::kSsr) throw Error("curriculum scoring requires SSR examples");
  double nll = 0.0;
  std::size_t tokens = 0;
  for (const auto& s : ex.spans) {
    for (double x : s.nll) nll += x;
    tokens += s.imp.size();
  }
  switch (strategy) {
    case Strategy::kCurriculum:
    case Strategy::kNone:
    case Strategy::kAnti:
      return nll;
    case Strategy::kLossOnly:
      return tokens == 0 ? 0.0 : nll / static_cast<double>(tokens);
    case Strategy::kLengthOnly:
      return static_cast<double>(tokens);
  }
  return 0.0;
}

void bucketize(std::vector<SSRExample>& examples, int k, Strategy strategy) {
  if (examples.empty()) throw Error("cannot bucketize an empty dataset");
  if (k < 1) throw Error("bucket count must be positive");
  if (static_cast<std::size_t>(k) > examples.size()) throw Error("more buckets than examples");
  std::vector<double> scores;
  scores.reserve(examples.size());
  for (const auto& ex : examples) scores.push_back(score(ex, strategy));
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] != scores[b] ? scores[a] < scores[b] : examples[a].id < examples[b].id;
  });
  const std::size_t n = examples.size();
  for (std::size_t rank = 0; rank < n; ++rank) {
    examples[order[rank]].bucket = static_cast<int>(rank * static_cast<std::size_t>(k) / n) + 1;
  }
}

std::vector<std::size_t> phase_boundaries(std::size_t total_steps, int k) {
  if (k < 1) throw Error("bucket count must be positive");
  std::vector<std::size_t> out;
  for (int i = 0; i < k; ++i) out.push_back(static_cast<std::size_t>(i) * total_steps / static_cast<std::size_t>(k));
  return out;
}

int phase_of(std::size_t step, std::size_t total_steps, int k) {
  if (total_steps == 0) return 1;
  const auto p = step * static_cast<std::size_t>(k) / total_steps;
  return static_cast<int>(std::min<std::size_t>(p, static_cast<std::size_t>(k) - 1)) + 1;
}

int current_bucket(Strategy strategy, int phase, int k) {
  return strategy == Strategy::kAnti ? k + 1 - phase : phase;
}

std::vector<std::vector<std::size_t>> schedule_order(std::span<const std::optional<int>> buckets,
                                                     const CurriculumSchedule& schedule,
                                                     std::size_t total_steps,
                                                     std::size_t batch_size, Rng& rng) {
  if (buckets.empty()) throw Error("cannot schedule an empty dataset");
  if (batch_size == 0) throw Error("batch size must be positive");
  if (!(schedule.mix_current > 0.0 && schedule.mix_current <= 1.0)) {
    throw Error("mix_current must lie in (0, 1]");
  }
  const bool flat = schedule.strategy == Strategy::kNone;
  const int k = flat ? 1 : schedule.k;
  if (k < 1) throw Error("bucket count must be positive");

  // Members of each bucket in dataset order.
  std::vector<std::vector<std::size_t>> members(static_cast<std::size_t>(k) + 1);
  for (std::size_t i = 0; i < buckets.size(); ++i) {
    if (flat) {
      members[1].push_back(i);
      continue;
    }
    if (!buckets[i]) throw Error("dataset is not bucketized");
    const int b = *buckets[i];
    if (b < 1 || b > k) throw Error("bucket id out of range");
    members[static_cast<std::size_t>(b)].push_back(i);
  }

  std::vector<std::vector<std::size_t>> batches;
  batches.reserve(total_steps);
  int cached_phase = 0;
  const std::vector<std::size_t>* current = nullptr;
  std::vector<std::size_t> earlier;
  for (std::size_t step = 0; step < total_steps; ++step) {
    const int phase = phase_of(step, total_steps, k);
    if (phase != cached_phase) {
      cached_phase = phase;
      const int cur = current_bucket(schedule.strategy, phase, k);
      current = &members[static_cast<std::size_t>(cur)];
      earlier.clear();
      for (int p = 1; p < phase; ++p) {
        const auto& m = members[static_cast<std::size_t>(current_bucket(schedule.strategy, p, k))];
        earlier.insert(earlier.end(), m.begin(), m.end());
      }
      std::sort(earlier.begin(), earlier.end());
      if (current->empty()) throw Error("empty curriculum bucket");
    }
    std::vector<std::size_t> batch;
    batch.reserve(batch_size);
    for (std::size_t e = 0; e < batch_size; ++e) {
      const double u = rng.uniform();
      if (earlier.empty() || u < schedule.mix_current) {
        batch.push_back((*current)[rng.below(current->size())]);
      } else {
        batch.push_back(earlier[rng.below(earlier.size())]);
      }
    }
    batches.push_back(std::move(batch));
  }
  return batches;
}

std::vector<std::vector<std::size_t>> schedule_order(std::span<const SSRExample> examples,
                                                     const CurriculumSchedule& schedule,
                                                     std::size_t total_steps,
                                                     std::size_t batch_size, Rng& rng) {
  std::vector<std::optional<int>> buckets;
  buckets.reserve(examples.size());
  for (const auto& ex : examples) buckets.push_back(ex.bucket);
  return schedule_order(buckets, schedule, total_steps, batch_size, rng);
}

std::vector<BucketStats> bucket_stats(std::span<const SSRExample> examples, Strategy strategy) {
  int k = 0;
  for (const auto& ex : examples) {
    if (!ex.bucket) throw Error("dataset is not bucketized");
    k = std::max(k, *ex.bucket);
  }
  std::vector<BucketStats> out(static_cast<std::size_t>(k));
  for (int b = 0; b < k; ++b) {
    out[static_cast<std::size_t>(b)].bucket = b + 1;
    out[static_cast<std::size_t>(b)].min = std::numeric_limits<double>::infinity();
    out[static_cast<std::size_t>(b)].max = -std::numeric_limits<double>::infinity();
  }
  for (const auto& ex : examples) {
    auto& s = out[static_cast<std::size_t>(*ex.bucket - 1)];
    const double v = score(ex, strategy);
    ++s.count;
    s.mean += v;
    s.min = std::min(s.min, v);
    s.max = std::max(s.max, v);
  }
  for (auto& s : out) {
    if (s.count) {
      s.mean /= static_cast<double>(s.count);
    } else {
      s.min = s.max = 0.0;
    }
  }
  return out;
}

std::string bucket_report_json(std::span<const BucketStats> stats, Strategy strategy, int k) {
  nlohmann::ordered_json j;
  j["strategy"] = to_string(strategy);
  j["k"] = k;
  auto& arr = j["buckets"] = nlohmann::ordered_json::array();
  for (const auto& s : stats) {
    arr.push_back({{"bucket", s.bucket}, {"count", s.count}, {"min", s.min}, {"mean", s.mean},
                   {"max", s.max}});
  }
  return j.dump(2);
}

}  // namespace ssr
