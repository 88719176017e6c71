#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ssr/dataset.hpp"
#include "ssr/rng.hpp"

namespace ssr {

enum class Strategy { kCurriculum, kNone, kAnti, kLossOnly, kLengthOnly };

std::string to_string(Strategy s);
/// Accepts "curriculum", "none", "anti", "loss-only"/"loss_only", "length-only"/"length_only".
Strategy parse_strategy(std::string_view s);
std::vector<Strategy> all_strategies();

struct CurriculumSchedule {
  Strategy strategy = Strategy::kCurriculum;
  int k = 5;
  double mix_current = 0.8;
};

/// Difficulty of an SSR example under a strategy:
///   curriculum/none/anti: total generator nll
///   loss-only:            mean nll per imperfect token
///   length-only:          number of imperfect tokens
double score(const SSRExample& ex, Strategy strategy);

/// Sorts by (score, id) and assigns equal-size quantile buckets 1..k (1 = easiest).
/// The examples keep their order; only `bucket` changes.
void bucketize(std::vector<SSRExample>& examples, int k, Strategy strategy);

/// First step of each of the k phases (total_steps split as evenly as possible).
std::vector<std::size_t> phase_boundaries(std::size_t total_steps, int k);
/// 1-based phase containing `step`.
int phase_of(std::size_t step, std::size_t total_steps, int k);
/// Bucket trained on most heavily in `phase`.
int current_bucket(Strategy strategy, int phase, int k);

// Batches of dataset indices. In phase i every element comes from the phase's
// current bucket with probability mix_current, otherwise uniformly from the
// examples of buckets already visited (phase 1 draws only from its bucket).
// Strategy `none` samples uniformly from the whole dataset.
std::vector<std::vector<std::size_t>> schedule_order(std::span<const std::optional<int>> buckets,
                                                     const CurriculumSchedule& schedule,
                                                     std::size_t total_steps,
                                                     std::size_t batch_size, Rng& rng);
std::vector<std::vector<std::size_t>> schedule_order(std::span<const SSRExample> examples,
                                                     const CurriculumSchedule& schedule,
                                                     std::size_t total_steps,
                                                     std::size_t batch_size, Rng& rng);

struct BucketStats {
  int bucket = 0;
  std::size_t count = 0;
  double min = 0.0;
  double mean = 0.0;
  double max = 0.0;
};

std::vector<BucketStats> bucket_stats(std::span<const SSRExample> examples, Strategy strategy);
/// {"strategy": ..., "k": ..., "buckets": [{"bucket","count","min","mean","max"}]}
std::string bucket_report_json(std::span<const BucketStats> stats, Strategy strategy, int k);

}  // namespace ssr
