#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "json.hpp"
#include "ssr/error.hpp"
#include "ssr/tasks.hpp"
#include "test_util.hpp"

using namespace ssr;

namespace {

std::vector<TokenId> random_seq(Rng& rng, std::size_t max_len, int alphabet) {
  std::vector<TokenId> s(rng.below(max_len + 1));
  for (auto& t : s) t = static_cast<TokenId>(200 + rng.below(static_cast<std::uint64_t>(alphabet)));
  return s;
}

std::size_t levenshtein(std::span<const TokenId> a, std::span<const TokenId> b) {
  std::vector<std::vector<std::size_t>> d(a.size() + 1, std::vector<std::size_t>(b.size() + 1));
  for (std::size_t i = 0; i <= a.size(); ++i) d[i][0] = i;
  for (std::size_t j = 0; j <= b.size(); ++j) d[0][j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i)
    for (std::size_t j = 1; j <= b.size(); ++j)
      d[i][j] = std::min({d[i - 1][j] + 1, d[i][j - 1] + 1, d[i - 1][j - 1] + (a[i - 1] != b[j - 1])});
  return d[a.size()][b.size()];
}

// Exponential oracle for short inputs: longest common subsequence by recursion.
std::size_t lcs_brute(std::span<const TokenId> a, std::span<const TokenId> b) {
  if (a.empty() || b.empty()) return 0;
  if (a[0] == b[0]) return 1 + lcs_brute(a.subspan(1), b.subspan(1));
  return std::max(lcs_brute(a.subspan(1), b), lcs_brute(a, b.subspan(1)));
}

std::size_t lcs_table(std::span<const TokenId> a, std::span<const TokenId> b) {
  std::vector<std::vector<std::size_t>> t(a.size() + 1, std::vector<std::size_t>(b.size() + 1, 0));
  for (std::size_t i = 1; i <= a.size(); ++i)
    for (std::size_t j = 1; j <= b.size(); ++j)
      t[i][j] = a[i - 1] == b[j - 1] ? t[i - 1][j - 1] + 1 : std::max(t[i - 1][j], t[i][j - 1]);
  return t[a.size()][b.size()];
}

std::size_t edit_cost(const EditSet& e) {
  std::size_t n = 0;
  for (const auto& x : e) n += x.type == EditType::kSubstitute ? x.tokens.size() : x.tokens.size();
  return n;
}

}  // namespace

TEST(AlignEdits, GoToWent) {
  const auto v = build_vocab(ssr::testing::docs_from({"I go to school yesterday . went"}), {});
  const auto a = tokenize("I go to school yesterday .", v).ids;
  const auto b = tokenize("I went to school yesterday .", v).ids;
  const auto edits = align_edits(a, b);
  ASSERT_EQ(edits.size(), 1u);
  EXPECT_EQ(edits[0].type, EditType::kSubstitute);
  EXPECT_EQ(edits[0].position, 1u);
  EXPECT_EQ(edits[0].tokens, std::vector<TokenId>{*v.find("went")});
}

TEST(AlignEdits, IdenticalGivesNoEdits) {
  const std::vector<TokenId> a{200, 201, 202};
  EXPECT_TRUE(align_edits(a, a).empty());
  EXPECT_TRUE(align_edits(std::vector<TokenId>{}, std::vector<TokenId>{}).empty());
}

TEST(AlignEdits, TieBreakPrefersSubstituteThenDeleteThenInsert) {
  // "a b" -> "b": delete a (1 edit) beats substitute+delete.
  const std::vector<TokenId> ab{200, 201}, b{201}, c{202};
  auto e = align_edits(ab, b);
  ASSERT_EQ(e.size(), 1u);
  EXPECT_EQ(e[0].type, EditType::kDelete);
  EXPECT_EQ(e[0].position, 0u);
  // "a b" -> "c": substitute first token, then delete second.
  e = align_edits(ab, c);
  ASSERT_EQ(e.size(), 2u);
  EXPECT_EQ(e[0].type, EditType::kSubstitute);
  EXPECT_EQ(e[0].position, 0u);
  EXPECT_EQ(e[1].type, EditType::kDelete);
  EXPECT_EQ(e[1].position, 1u);
  // "a" -> "a a": insertion happens at the leftmost optimal point.
  const std::vector<TokenId> a{200}, aa{200, 200};
  e = align_edits(a, aa);
  ASSERT_EQ(e.size(), 1u);
  EXPECT_EQ(e[0].type, EditType::kInsert);
}

TEST(AlignEdits, CostMatchesLevenshteinOracle) {
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const auto a = random_seq(rng, 12, 4), b = random_seq(rng, 12, 4);
    const auto e = align_edits(a, b);
    EXPECT_EQ(edit_cost(e), levenshtein(a, b));
  }
}

TEST(AlignEdits, ApplyReconstructsTarget) {
  Rng rng(2);
  for (int i = 0; i < 1000; ++i) {
    const auto a = random_seq(rng, 15, 5), b = random_seq(rng, 15, 5);
    EXPECT_EQ(apply_edits(a, align_edits(a, b)), b);
  }
}

TEST(FBeta, TableTriple) {
  EXPECT_NEAR(100.0 * f_beta(0.691, 0.337, 0.5), 57.1, 0.05);
}

TEST(FBeta, EqualPrecisionRecallIsFixedPoint) {
  for (int i = 1; i <= 100; ++i) {
    const double x = i / 100.0;
    EXPECT_NEAR(f_beta(x, x, 0.5), x, 1e-12);
  }
  EXPECT_EQ(f_beta(0, 0, 0.5), 0.0);
}

TEST(FBeta, HalfWeightsPrecision) {
  for (int i = 1; i < 20; ++i) {
    for (int j = 1; j < 20; ++j) {
      const double p = i / 20.0, r = j / 20.0;
      const double f05 = f_beta(p, r, 0.5), f1 = f_beta(p, r, 1.0);
      if (p > r) EXPECT_GT(f05, f1);
      if (p < r) EXPECT_LT(f05, f1);
      EXPECT_GE(f05, 0.0);
      EXPECT_LE(f05, 1.0);
    }
  }
}

TEST(EditFBeta, EmptySetRules) {
  const EditSet none;
  const EditSet one{{0, EditType::kDelete, {200}}};
  auto r = edit_f_beta(none, none);
  EXPECT_EQ(r.p, 1.0);
  EXPECT_EQ(r.r, 1.0);
  EXPECT_EQ(r.f, 1.0);
  r = edit_f_beta(none, one);  // copy baseline against a needed edit
  EXPECT_EQ(r.r, 0.0);
  EXPECT_EQ(r.f, 0.0);
  r = edit_f_beta(one, none);
  EXPECT_EQ(r.p, 0.0);
  EXPECT_EQ(r.f, 0.0);
  r = edit_f_beta(one, one);
  EXPECT_EQ(r.f, 1.0);
}

TEST(EditFBeta, MultisetMatching) {
  const Edit a{1, EditType::kSubstitute, {300}}, b{2, EditType::kDelete, {201}}, c{1, EditType::kSubstitute, {301}};
  const auto counts = count_edit_matches({a, b, c}, {a, b});
  EXPECT_EQ(counts.matched, 2u);
  const auto r = prf_from_counts(counts);
  EXPECT_NEAR(r.p, 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(r.r, 1.0, 1e-12);
  EXPECT_NEAR(r.f, f_beta(2.0 / 3.0, 1.0, 0.5), 1e-12);
}

TEST(Rouge, Cases) {
  const std::vector<TokenId> a{200, 201, 202}, b{203, 204};
  EXPECT_EQ(rouge_l(a, a).f, 1.0);
  EXPECT_EQ(rouge_l(a, b).f, 0.0);
  EXPECT_EQ(rouge_l(std::vector<TokenId>{}, std::vector<TokenId>{}).f, 1.0);
  EXPECT_EQ(rouge_l(a, std::vector<TokenId>{}).f, 0.0);
  const std::vector<TokenId> c{200, 202};
  const auto r = rouge_l(c, a);  // LCS 2
  EXPECT_NEAR(r.p, 1.0, 1e-12);
  EXPECT_NEAR(r.r, 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(r.f, 0.8, 1e-12);
}

TEST(Rouge, LcsMatchesOracles) {
  Rng rng(3);
  for (int i = 0; i < 500; ++i) {
    const auto a = random_seq(rng, 30, 6), b = random_seq(rng, 30, 6);
    EXPECT_EQ(lcs_length(a, b), lcs_table(a, b));
  }
  for (int i = 0; i < 200; ++i) {
    const auto a = random_seq(rng, 9, 3), b = random_seq(rng, 9, 3);
    EXPECT_EQ(lcs_length(a, b), lcs_brute(a, b));
  }
}

TEST(SynthGec, ZeroNoiseIsCopy) {
  const auto s = ssr::testing::synthetic_setup(300, 4);
  Rng rng(5);
  const auto splits = make_synth_gec(s.seqs, {0, 0, 0, 0}, rng, {}, s.vocab);
  for (const auto* split : {&splits.train, &splits.dev, &splits.test}) {
    for (const auto& ex : *split) {
      EXPECT_EQ(strip_sentinels(ex.source_ids, s.vocab), strip_sentinels(ex.target_ids, s.vocab));
      EXPECT_EQ(ex.mode, Mode::kFinetune);
    }
  }
}

TEST(SynthGec, DocumentsPartitionAcrossSplits) {
  auto s = ssr::testing::synthetic_setup(600, 6, 6);  // short windows: documents span several records
  Rng rng(7);
  const auto splits = make_synth_gec(s.seqs, {}, rng, {}, s.vocab);
  auto doc = [](const std::string& id) { return id.substr(0, id.find("/w")); };
  std::set<std::string> tr, dv, te;
  for (const auto& x : splits.train) tr.insert(doc(x.id));
  for (const auto& x : splits.dev) dv.insert(doc(x.id));
  for (const auto& x : splits.test) te.insert(doc(x.id));
  for (const auto& d : dv) EXPECT_FALSE(tr.count(d));
  for (const auto& d : te) EXPECT_FALSE(tr.count(d) || dv.count(d));
  EXPECT_NEAR(double(tr.size()) / 600.0, 0.8, 0.01);
  EXPECT_NEAR(double(dv.size()) / 600.0, 0.1, 0.01);
}

TEST(SynthGec, DeterministicBySeed) {
  const auto s = ssr::testing::synthetic_setup(200, 8);
  Rng a(9), b(9);
  const auto x = make_synth_gec(s.seqs, {}, a, {}, s.vocab), y = make_synth_gec(s.seqs, {}, b, {}, s.vocab);
  EXPECT_EQ(x.train, y.train);
  EXPECT_EQ(x.test, y.test);
}

TEST(SynthGec, CorruptionRateMatchesConfig) {
  const auto s = ssr::testing::synthetic_setup(10'000, 10);
  const NoiseConfig cfg{0.05, 0.05, 0.0, 0.0};
  const double ordinary = double(s.vocab.size()) - s.vocab.first_ordinary();
  const double implied = 0.05 + 0.95 * 0.05 * (1.0 - 1.0 / ordinary);
  Rng rng(11);
  const auto splits = make_synth_gec(s.seqs, cfg, rng, {1.0, 0.0, 0.0}, s.vocab);
  ASSERT_GE(splits.train.size(), 9990u);
  std::size_t edits = 0, tokens = 0;
  for (const auto& ex : splits.train) {
    const auto src = strip_sentinels(ex.source_ids, s.vocab), tgt = strip_sentinels(ex.target_ids, s.vocab);
    edits += levenshtein(src, tgt);
    tokens += tgt.size();
  }
  EXPECT_NEAR(double(edits) / double(tokens), implied, 0.02);
}

TEST(SynthGec, BadRatios) {
  const auto s = ssr::testing::synthetic_setup(10, 12);
  Rng rng(1);
  EXPECT_THROW(make_synth_gec(s.seqs, {}, rng, {0.5, 0.2, 0.2}, s.vocab), Error);
}

TEST(Scoring, PerfectAndCopyHypotheses) {
  const auto s = ssr::testing::synthetic_setup(300, 13);
  Rng rng(14);
  const auto splits = make_synth_gec(s.seqs, {}, rng, {}, s.vocab);
  std::vector<std::vector<TokenId>> perfect, copy;
  std::size_t changed = 0;
  for (const auto& ex : splits.test) {
    perfect.push_back(strip_sentinels(ex.target_ids, s.vocab));
    copy.push_back(strip_sentinels(ex.source_ids, s.vocab));
    changed += perfect.back() != copy.back();
  }
  ASSERT_GT(changed, 0u);
  const auto best = score_hypotheses(splits.test, perfect, s.vocab);
  EXPECT_EQ(best.exact_match, 1.0);
  EXPECT_EQ(best.f05, 1.0);
  EXPECT_EQ(best.rouge_l, 1.0);
  const auto base = score_hypotheses(splits.test, copy, s.vocab);
  EXPECT_EQ(base.f05, 0.0);
  EXPECT_EQ(base.r, 0.0);
  EXPECT_LT(base.exact_match, 1.0);
  for (double m : {base.exact_match, base.p, base.r, base.f05, base.rouge_l}) {
    EXPECT_GE(m, 0.0);
    EXPECT_LE(m, 1.0);
  }
}

TEST(Evaluate, DeterministicReport) {
  const auto s = ssr::testing::synthetic_setup(200, 15);
  Rng rng(16);
  const auto splits = make_synth_gec(s.seqs, {}, rng, {}, s.vocab);
  ModelConfig cfg;
  cfg.vocab_size = static_cast<int>(s.vocab.size());
  cfg.d_model = 16;
  cfg.d_ff = 16;
  cfg.max_decode_len = 12;
  Rng init(1);
  const auto params = init_params(cfg, init);
  const auto a = evaluate(params, splits.test, s.vocab, "x.ckpt");
  const auto b = evaluate(params, splits.test, s.vocab, "x.ckpt");
  EXPECT_EQ(a.to_json(), b.to_json());
  const auto j = nlohmann::json::parse(a.to_json());
  EXPECT_EQ(j["task"], "synth-gec");
  EXPECT_EQ(j["n_examples"], splits.test.size());
  for (const char* key : {"exact_match", "p", "r", "f05", "rouge_l"}) {
    EXPECT_TRUE(j["metrics"].contains(key));
    EXPECT_TRUE(j["copy_baseline"].contains(key));
  }
  EXPECT_EQ(j["copy_baseline"]["f05"], 0.0);
}
