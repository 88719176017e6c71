#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "ssr/error.hpp"
#include "ssr/masking.hpp"
#include "test_util.hpp"

using namespace ssr;

namespace {

constexpr const char* kElon = "In 2002 , Elon Musk founded SpaceX , an aerospace manufacturer company .";

struct Elon {
  Vocab vocab;
  TokenSeq seq;
  SpanMask mask;
};

Elon elon() {
  Elon e;
  e.vocab = build_vocab(ssr::testing::docs_from({kElon}), {});
  e.seq = tokenize(kElon, e.vocab, {}, "elon");
  e.mask.seq = e.seq;
  auto span = [&](int index, std::size_t start, std::size_t len) {
    Span s;
    s.index = index;
    s.start = start;
    s.length = len;
    s.gt_ids.assign(e.seq.ids.begin() + static_cast<long>(start), e.seq.ids.begin() + static_cast<long>(start + len));
    return s;
  };
  e.mask.spans = {span(1, 1, 1), span(2, 5, 1), span(3, 8, 3)};
  return e;
}

// Pearson chi-square statistic of Poisson draws over bins 0..8 and a pooled 9+ bin.
double poisson_chi2(const std::vector<std::uint64_t>& draws, double lambda) {
  std::vector<double> observed(10, 0.0), expected(10, 0.0);
  for (auto d : draws) observed[std::min<std::uint64_t>(d, 9)] += 1.0;
  double pmf = std::exp(-lambda), cum = 0.0;
  for (int k = 0; k < 9; ++k) {
    expected[static_cast<std::size_t>(k)] = pmf * static_cast<double>(draws.size());
    cum += pmf;
    pmf *= lambda / (k + 1);
  }
  expected[9] = (1.0 - cum) * static_cast<double>(draws.size());
  double chi2 = 0.0;
  for (std::size_t k = 0; k < 10; ++k) chi2 += std::pow(observed[k] - expected[k], 2) / expected[k];
  return chi2;
}

// chi2.ppf(0.999, df=9)
constexpr double kChi2Critical9 = 27.877;

}  // namespace

TEST(Poisson, ZeroFrequencyMatchesPmf) {
  Rng rng(1);
  const int n = 1'000'000;
  int zeros = 0;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const auto x = static_cast<double>(poisson_sample(rng, 3.0));
    zeros += x == 0.0;
    sum += x;
    sq += x * x;
  }
  EXPECT_NEAR(static_cast<double>(zeros) / n, std::exp(-3.0), 0.002);
  const double mean = sum / n;
  EXPECT_NEAR(sq / n - mean * mean, 3.0, 0.05);
}

TEST(Poisson, ChiSquareGoodnessOfFit) {
  Rng rng(2);
  std::vector<std::uint64_t> draws(200'000);
  for (auto& d : draws) d = poisson_sample(rng, 3.0);
  EXPECT_LT(poisson_chi2(draws, 3.0), kChi2Critical9);
}

TEST(Poisson, LargeRateKeepsMean) {
  Rng rng(3);
  double sum = 0.0;
  for (int i = 0; i < 20000; ++i) sum += static_cast<double>(poisson_sample(rng, 80.0));
  EXPECT_NEAR(sum / 20000.0, 80.0, 0.3);
}

TEST(Poisson, RejectsNonPositiveRate) {
  Rng rng(1);
  EXPECT_THROW(poisson_sample(rng, 0.0), Error);
  EXPECT_THROW(poisson_sample(rng, -1.0), Error);
}

TEST(SampleSpans, TooShortSequence) {
  TokenSeq seq{{100}, "x"};
  Rng rng(1);
  try {
    sample_spans(seq, rng, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "sequence too short");
  }
}

TEST(SampleSpans, ZeroBudgetGivesNoSpans) {
  const auto e = elon();
  MaskingConfig cfg;
  cfg.budget = 0.0;
  Rng rng(5);
  EXPECT_TRUE(sample_spans(e.seq, rng, cfg).spans.empty());
}

TEST(SampleSpans, RawLengthMeanIsLambda) {
  const auto s = ssr::testing::synthetic_setup(3000, 21);
  std::vector<std::uint64_t> raw;
  Rng rng(8);
  for (std::size_t i = 0; raw.size() < 100'000; i = (i + 1) % s.seqs.size()) {
    if (s.seqs[i].size() >= 2) sample_spans(s.seqs[i], rng, {}, &raw);
  }
  const double mean = std::accumulate(raw.begin(), raw.end(), 0.0) / static_cast<double>(raw.size());
  EXPECT_NEAR(mean, 3.0, 0.05);
  EXPECT_LT(poisson_chi2(raw, 3.0), kChi2Critical9);
}

TEST(SampleSpans, MaskInvariantsOverCorpus) {
  const auto s = ssr::testing::paragraph_setup(1000, 4, 31);
  MaskingConfig cfg;
  double frac_sum = 0.0;
  std::size_t masked = 0, total = 0, docs = 0;
  for (const auto& seq : s.seqs) {
    if (seq.size() < 2) continue;
    const auto mask = sample_spans(seq, 99, cfg);
    ASSERT_NO_THROW(validate_mask(mask));
    const auto n = seq.size();
    const auto m = masked_tokens(mask);
    EXPECT_LE(m, static_cast<std::size_t>(std::ceil(0.35 * static_cast<double>(n))));
    if (n >= 20) EXPECT_GE(m, static_cast<std::size_t>(std::floor(0.25 * static_cast<double>(n))));
    std::size_t inserts = 0;
    for (std::size_t i = 0; i < mask.spans.size(); ++i) {
      EXPECT_EQ(mask.spans[i].index, static_cast<int>(i + 1));
      EXPECT_LE(mask.spans[i].length, cfg.max_span_len);
      if (i > 0) EXPECT_GE(mask.spans[i].start, mask.spans[i - 1].start + mask.spans[i - 1].length + 1);
      inserts += mask.spans[i].length == 0;
    }
    EXPECT_LE(static_cast<double>(inserts), cfg.max_insertion_share * static_cast<double>(mask.spans.size()) + 1e-9);
    frac_sum += static_cast<double>(m) / static_cast<double>(n);
    masked += m;
    total += n;
    ++docs;
  }
  const double overall = static_cast<double>(masked) / static_cast<double>(total);
  EXPECT_GE(overall, 0.25);
  EXPECT_LE(overall, 0.35);
  EXPECT_NEAR(frac_sum / static_cast<double>(docs), 0.30, 0.02);
}

TEST(SampleSpans, LongWindowsStayNearBudget) {
  const auto s = ssr::testing::synthetic_setup(400, 32);
  // Concatenate sentences into 60-token windows.
  std::vector<TokenId> all;
  for (const auto& q : s.seqs) all.insert(all.end(), q.ids.begin(), q.ids.end());
  for (std::size_t off = 0, k = 0; off + 60 <= all.size(); off += 60, ++k) {
    TokenSeq w{{all.begin() + static_cast<long>(off), all.begin() + static_cast<long>(off + 60)}, "w" + std::to_string(k)};
    const auto m = masked_tokens(sample_spans(w, 5, {}));
    EXPECT_GE(m, 15u);
    EXPECT_LE(m, 21u);
  }
}

TEST(SampleSpans, DeterministicPerDocument) {
  const auto s = ssr::testing::synthetic_setup(50, 41);
  for (const auto& seq : s.seqs) {
    if (seq.size() < 2) continue;
    const auto a = sample_spans(seq, 7, {});
    const auto b = sample_spans(seq, 7, {});
    EXPECT_EQ(a.spans, b.spans);
  }
  // The stream depends on the doc id, not on processing order.
  TokenSeq x = s.seqs[0], y = s.seqs[0];
  y.doc_id = "other";
  bool differs = false;
  for (std::uint64_t seed = 0; seed < 20 && !differs; ++seed) {
    differs = sample_spans(x, seed, {}).spans != sample_spans(y, seed, {}).spans;
  }
  EXPECT_TRUE(differs);
}

TEST(ApplyMask, ElonInfillingPair) {
  const auto e = elon();
  ASSERT_NO_THROW(validate_mask(e.mask));
  const auto pair = apply_mask(e.mask, e.vocab);
  EXPECT_EQ(detokenize(pair.source, e.vocab), "In M_1 , Elon Musk M_2 SpaceX , M_3 company .");
  EXPECT_EQ(detokenize(pair.target, e.vocab), "M_1 2002 M_2 founded M_3 an aerospace manufacturer");
}

TEST(ApplyMask, EmptyMask) {
  auto e = elon();
  e.mask.spans.clear();
  const auto pair = apply_mask(e.mask, e.vocab);
  EXPECT_EQ(pair.source.ids, e.seq.ids);
  EXPECT_TRUE(pair.target.ids.empty());
}

TEST(ApplyMask, TooManySpans) {
  auto e = elon();
  VocabOptions opts;
  opts.max_sentinels = 2;
  const auto small = build_vocab(ssr::testing::docs_from({kElon}), opts);
  try {
    apply_mask(e.mask, small);
    FAIL();
  } catch (const Error& err) {
    EXPECT_STREQ(err.what(), "too many spans");
  }
}

TEST(ApplyMask, RoundTripReconstructsDocuments) {
  const auto s = ssr::testing::synthetic_setup(1000, 51);
  for (const auto& seq : s.seqs) {
    if (seq.size() < 2) continue;
    const auto mask = sample_spans(seq, 3, {});
    const auto pair = apply_mask(mask, s.vocab);
    // Oracle: split the target at sentinels, then splice into the source.
    std::vector<std::vector<TokenId>> fills;
    for (auto id : pair.target.ids) {
      if (s.vocab.is_mask(id)) {
        fills.emplace_back();
      } else {
        ASSERT_FALSE(fills.empty());
        fills.back().push_back(id);
      }
    }
    std::vector<TokenId> rebuilt;
    for (auto id : pair.source.ids) {
      if (s.vocab.is_mask(id)) {
        const auto& f = fills.at(static_cast<std::size_t>(s.vocab.sentinel_index(id) - 1));
        rebuilt.insert(rebuilt.end(), f.begin(), f.end());
      } else {
        rebuilt.push_back(id);
      }
    }
    ASSERT_EQ(rebuilt, seq.ids) << seq.doc_id;
  }
}
