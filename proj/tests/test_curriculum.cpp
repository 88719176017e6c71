#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <set>

#include "ssr/curriculum.hpp"
#include "ssr/error.hpp"

using namespace ssr;

namespace {

SSRExample with_spans(std::string id, const std::vector<std::vector<double>>& nll) {
  SSRExample ex;
  ex.id = std::move(id);
  ex.mode = Mode::kSsr;
  int index = 1;
  for (const auto& n : nll) {
    SpanRecord s;
    s.index = index++;
    s.imp.assign(n.size(), 200);
    s.nll = n;
    ex.spans.push_back(s);
    for (double x : n) ex.difficulty += x;
  }
  return ex;
}

// n examples with random span counts, lengths and nll values.
std::vector<SSRExample> random_examples(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<SSRExample> out;
  char id[16];
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::vector<double>> spans(1 + rng.below(4));
    for (auto& s : spans) {
      s.resize(rng.below(5));
      for (auto& x : s) x = 3.0 * rng.uniform();
    }
    std::snprintf(id, sizeof id, "e%06zu", i);
    out.push_back(with_spans(id, spans));
  }
  return out;
}

std::vector<std::optional<int>> labels(const std::vector<SSRExample>& xs) {
  std::vector<std::optional<int>> out;
  for (const auto& x : xs) out.push_back(x.bucket);
  return out;
}

}  // namespace

TEST(Score, StrategyValues) {
  const auto ex = with_spans("a", {{0.7}, {1.4}});
  EXPECT_NEAR(score(ex, Strategy::kCurriculum), 2.1, 1e-12);
  EXPECT_NEAR(score(ex, Strategy::kNone), 2.1, 1e-12);
  EXPECT_NEAR(score(ex, Strategy::kAnti), 2.1, 1e-12);
  EXPECT_NEAR(score(ex, Strategy::kLossOnly), 1.05, 1e-12);
  EXPECT_EQ(score(ex, Strategy::kLengthOnly), 2.0);
}

TEST(Score, IdentityExampleIsZero) {
  const auto ex = with_spans("a", {{0.0, 0.0}, {0.0}});
  EXPECT_EQ(score(ex, Strategy::kCurriculum), 0.0);
  EXPECT_EQ(score(ex, Strategy::kLossOnly), 0.0);
  // No imperfect tokens at all: mean loss is defined as 0.
  EXPECT_EQ(score(with_spans("b", {{}}), Strategy::kLossOnly), 0.0);
}

TEST(Score, RejectsNonSsr) {
  auto ex = with_spans("a", {{0.7}});
  ex.mode = Mode::kInfill;
  EXPECT_THROW(score(ex, Strategy::kCurriculum), Error);
}

TEST(Bucketize, TenIntoFive) {
  auto xs = random_examples(10, 1);
  bucketize(xs, 5, Strategy::kCurriculum);
  std::map<int, std::vector<double>> by;
  for (const auto& x : xs) by[*x.bucket].push_back(score(x, Strategy::kCurriculum));
  ASSERT_EQ(by.size(), 5u);
  double prev_max = -1;
  for (auto& [b, v] : by) {
    EXPECT_EQ(v.size(), 2u);
    EXPECT_GE(*std::min_element(v.begin(), v.end()), prev_max);
    prev_max = *std::max_element(v.begin(), v.end());
  }
}

TEST(Bucketize, EqualScoresAssignedByIdOrder) {
  std::vector<SSRExample> xs;
  for (const char* id : {"e", "c", "a", "d", "b", "f", "g"}) xs.push_back(with_spans(id, {{1.0}}));
  bucketize(xs, 3, Strategy::kCurriculum);
  std::map<std::string, int> got;
  std::map<int, int> sizes;
  for (const auto& x : xs) {
    got[x.id] = *x.bucket;
    ++sizes[*x.bucket];
  }
  for (auto [b, n] : sizes) EXPECT_TRUE(n == 2 || n == 3);
  std::vector<int> order;
  for (auto& [id, b] : got) order.push_back(b);
  EXPECT_TRUE(std::is_sorted(order.begin(), order.end()));
}

TEST(Bucketize, PartitionAndMonotoneMeansForEveryStrategy) {
  for (auto strategy : all_strategies()) {
    auto xs = random_examples(10'000, 2);
    bucketize(xs, 5, strategy);
    const auto stats = bucket_stats(xs, strategy);
    ASSERT_EQ(stats.size(), 5u);
    std::size_t total = 0;
    for (std::size_t b = 0; b < 5; ++b) {
      EXPECT_EQ(stats[b].count, 2000u);
      total += stats[b].count;
      if (b > 0) {
        EXPECT_GT(stats[b].mean, stats[b - 1].mean) << to_string(strategy);
        EXPECT_GE(stats[b].min, stats[b - 1].max) << to_string(strategy);
      }
    }
    EXPECT_EQ(total, xs.size());
  }
}

TEST(Bucketize, UnevenSizesDifferByAtMostOne) {
  auto xs = random_examples(23, 3);
  bucketize(xs, 5, Strategy::kCurriculum);
  std::map<int, int> sizes;
  for (const auto& x : xs) ++sizes[*x.bucket];
  int lo = 100, hi = 0;
  for (auto [b, n] : sizes) {
    lo = std::min(lo, n);
    hi = std::max(hi, n);
  }
  EXPECT_LE(hi - lo, 1);
}

TEST(Bucketize, InvariantToInputOrder) {
  auto xs = random_examples(500, 4);
  auto ys = xs;
  std::reverse(ys.begin(), ys.end());
  bucketize(xs, 5, Strategy::kCurriculum);
  bucketize(ys, 5, Strategy::kCurriculum);
  std::map<std::string, int> a, b;
  for (const auto& x : xs) a[x.id] = *x.bucket;
  for (const auto& y : ys) b[y.id] = *y.bucket;
  EXPECT_EQ(a, b);
}

TEST(Bucketize, Errors) {
  auto xs = random_examples(3, 5);
  EXPECT_THROW(bucketize(xs, 4, Strategy::kCurriculum), Error);
  EXPECT_THROW(bucketize(xs, 0, Strategy::kCurriculum), Error);
  std::vector<SSRExample> empty;
  EXPECT_THROW(bucketize(empty, 1, Strategy::kCurriculum), Error);
}

TEST(Schedule, SingleBucketEqualsNone) {
  auto xs = random_examples(200, 6);
  bucketize(xs, 1, Strategy::kCurriculum);
  Rng a(9), b(9);
  const auto one = schedule_order(xs, {Strategy::kCurriculum, 1, 0.8}, 50, 8, a);
  const auto none = schedule_order(xs, {Strategy::kNone, 5, 0.8}, 50, 8, b);
  EXPECT_EQ(one, none);
}

TEST(Schedule, AntiIsCurriculumWithLabelsReversed) {
  auto xs = random_examples(300, 7);
  bucketize(xs, 5, Strategy::kCurriculum);
  auto reversed = labels(xs);
  for (auto& b : reversed) b = 6 - *b;
  Rng a(10), b(10);
  const auto anti = schedule_order(labels(xs), {Strategy::kAnti, 5, 0.8}, 100, 16, a);
  const auto cur = schedule_order(reversed, {Strategy::kCurriculum, 5, 0.8}, 100, 16, b);
  EXPECT_EQ(anti, cur);
}

TEST(Schedule, FirstPhasesDrawFromOppositeEnds) {
  auto xs = random_examples(300, 8);
  bucketize(xs, 5, Strategy::kCurriculum);
  Rng a(11), b(11);
  const auto cur = schedule_order(xs, {Strategy::kCurriculum, 5, 0.8}, 100, 16, a);
  const auto anti = schedule_order(xs, {Strategy::kAnti, 5, 0.8}, 100, 16, b);
  for (std::size_t step = 0; step < 20; ++step) {
    for (auto i : cur[step]) EXPECT_EQ(*xs[i].bucket, 1);
    for (auto i : anti[step]) EXPECT_EQ(*xs[i].bucket, 5);
  }
}

TEST(Schedule, CurrentBucketRate) {
  auto xs = random_examples(1000, 12);
  bucketize(xs, 5, Strategy::kCurriculum);
  const std::size_t steps = 1000;
  Rng rng(13);
  const auto batches = schedule_order(xs, {Strategy::kCurriculum, 5, 0.8}, steps, 32, rng);
  ASSERT_EQ(batches.size(), steps);
  std::map<int, std::pair<std::size_t, std::size_t>> per_phase;  // current, total
  for (std::size_t s = 0; s < steps; ++s) {
    const int phase = phase_of(s, steps, 5);
    for (auto i : batches[s]) {
      const int b = *xs[i].bucket;
      EXPECT_LE(b, phase);
      per_phase[phase].first += b == phase;
      ++per_phase[phase].second;
    }
  }
  EXPECT_EQ(per_phase[1].first, per_phase[1].second);
  for (int p = 2; p <= 5; ++p) {
    EXPECT_NEAR(double(per_phase[p].first) / double(per_phase[p].second), 0.8, 0.02) << p;
  }
}

TEST(Schedule, PhaseBoundariesIncreasing) {
  const auto b = phase_boundaries(1003, 5);
  ASSERT_EQ(b.size(), 5u);
  EXPECT_EQ(b[0], 0u);
  for (std::size_t i = 1; i < b.size(); ++i) EXPECT_GT(b[i], b[i - 1]);
  EXPECT_EQ(phase_of(0, 1003, 5), 1);
  EXPECT_EQ(phase_of(1002, 1003, 5), 5);
}

TEST(Schedule, DeterministicGivenSeed) {
  auto xs = random_examples(100, 14);
  bucketize(xs, 5, Strategy::kCurriculum);
  Rng a(3), b(3);
  EXPECT_EQ(schedule_order(xs, {}, 40, 4, a), schedule_order(xs, {}, 40, 4, b));
}

TEST(Schedule, Errors) {
  auto xs = random_examples(20, 15);
  Rng rng(1);
  EXPECT_THROW(schedule_order(xs, {}, 10, 4, rng), Error);  // not bucketized
  EXPECT_NO_THROW(schedule_order(xs, {Strategy::kNone, 5, 0.8}, 10, 4, rng));
  bucketize(xs, 5, Strategy::kCurriculum);
  EXPECT_THROW(schedule_order(xs, {Strategy::kCurriculum, 5, 0.0}, 10, 4, rng), Error);
  EXPECT_THROW(schedule_order(xs, {Strategy::kCurriculum, 5, 0.8}, 10, 0, rng), Error);
  EXPECT_THROW(schedule_order(xs, {Strategy::kCurriculum, 3, 0.8}, 10, 4, rng), Error);
  EXPECT_THROW(parse_strategy("sideways"), Error);
  EXPECT_EQ(parse_strategy("loss_only"), Strategy::kLossOnly);
  EXPECT_EQ(parse_strategy("length-only"), Strategy::kLengthOnly);
}

TEST(BucketReport, Json) {
  auto xs = random_examples(50, 16);
  bucketize(xs, 5, Strategy::kCurriculum);
  const auto stats = bucket_stats(xs, Strategy::kCurriculum);
  const auto js = bucket_report_json(stats, Strategy::kCurriculum, 5);
  EXPECT_NE(js.find("\"buckets\""), std::string::npos);
  EXPECT_NE(js.find("\"curriculum\""), std::string::npos);
}
