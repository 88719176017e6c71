#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "ssr/checkpoint.hpp"
#include "ssr/error.hpp"
#include "ssr/model.hpp"
#include "ssr/ngram.hpp"
#include "ssr/training.hpp"
#include "test_util.hpp"

using namespace ssr;

namespace {

ModelConfig tiny(int vocab = 30) {
  ModelConfig c;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_model = 8;
  c.d_ff = 12;
  c.vocab_size = vocab;
  c.max_rel_distance = 2;
  c.max_decode_len = 20;
  return c;
}

// Perturbs every tensor, including norm gains and position biases, so that no
// term of the forward pass is trivially zero or one.
ModelParams random_params(const ModelConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  auto p = init_params(cfg, rng);
  for (auto& [name, m] : p.tensors()) {
    for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] += 0.3 * rng.normal();
  }
  return p;
}

std::vector<TokenId> random_ids(Rng& rng, std::size_t n, int vocab) {
  std::vector<TokenId> ids(n);
  for (auto& t : ids) t = static_cast<TokenId>(4 + rng.below(static_cast<std::uint64_t>(vocab - 4)));
  return ids;
}

// ---- straight-line oracle: plain nested loops over std::vector ----------

using Rows = std::vector<std::vector<double>>;

Rows mm(const Rows& x, const Mat& w) {
  Rows y(x.size(), std::vector<double>(static_cast<std::size_t>(w.cols()), 0.0));
  for (std::size_t i = 0; i < x.size(); ++i)
    for (Eigen::Index j = 0; j < w.cols(); ++j)
      for (Eigen::Index k = 0; k < w.rows(); ++k) y[i][static_cast<std::size_t>(j)] += x[i][static_cast<std::size_t>(k)] * w(k, j);
  return y;
}

Rows rms(const Rows& x, const Mat& g) {
  Rows y = x;
  for (auto& r : y) {
    double ss = 0;
    for (double v : r) ss += v * v;
    const double inv = 1.0 / std::sqrt(ss / static_cast<double>(r.size()) + 1e-6);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] *= inv * g(0, static_cast<Eigen::Index>(j));
  }
  return y;
}

void add(Rows& x, const Rows& y) {
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = 0; j < x[i].size(); ++j) x[i][j] += y[i][j];
}

Rows attend(const Rows& xq, const Rows& xkv, const AttentionWeights& w, const Mat* bias, int max_rel,
            bool causal, int heads) {
  const Rows q = mm(xq, w.q), k = mm(xkv, w.k), v = mm(xkv, w.v);
  const std::size_t d = q[0].size(), dh = d / static_cast<std::size_t>(heads);
  Rows cat(xq.size(), std::vector<double>(d, 0.0));
  for (int h = 0; h < heads; ++h) {
    const std::size_t off = static_cast<std::size_t>(h) * dh;
    for (std::size_t i = 0; i < xq.size(); ++i) {
      std::vector<double> s(xkv.size());
      double mx = -1e300;
      for (std::size_t j = 0; j < xkv.size(); ++j) {
        double dot = 0;
        for (std::size_t c = 0; c < dh; ++c) dot += q[i][off + c] * k[j][off + c];
        s[j] = dot / std::sqrt(static_cast<double>(dh));
        if (bias) {
          const int rel = std::clamp(static_cast<int>(j) - static_cast<int>(i), -max_rel, max_rel);
          s[j] += (*bias)(h, rel + max_rel);
        }
        if (causal && j > i) s[j] = -1e300;
        mx = std::max(mx, s[j]);
      }
      double z = 0;
      for (auto& x : s) z += (x = (x <= -1e299 ? 0.0 : std::exp(x - mx)));
      for (std::size_t j = 0; j < xkv.size(); ++j)
        for (std::size_t c = 0; c < dh; ++c) cat[i][off + c] += s[j] / z * v[j][off + c];
    }
  }
  return mm(cat, w.o);
}

Rows ffn(const Rows& x, const Mat& win, const Mat& wout) {
  Rows h = mm(x, win);
  for (auto& r : h)
    for (auto& v : r) v = std::max(v, 0.0);
  return mm(h, wout);
}

Rows embed(const ModelParams& p, const std::vector<TokenId>& ids) {
  Rows x;
  for (auto t : ids) {
    std::vector<double> r(static_cast<std::size_t>(p.config.d_model));
    for (std::size_t j = 0; j < r.size(); ++j) r[j] = p.embedding(t, static_cast<Eigen::Index>(j));
    x.push_back(r);
  }
  return x;
}

Rows oracle_logits(const ModelParams& p, const std::vector<TokenId>& src, const std::vector<TokenId>& tgt) {
  const auto& c = p.config;
  Rows x = embed(p, src);
  for (const auto& L : p.encoder) {
    add(x, attend(rms(x, L.attn_norm), rms(x, L.attn_norm), L.self, &p.encoder_rel_bias, c.max_rel_distance, false, c.n_heads));
    add(x, ffn(rms(x, L.ff_norm), L.ff_in, L.ff_out));
  }
  const Rows enc = rms(x, p.encoder_final_norm);
  Rows y = embed(p, tgt);
  for (const auto& L : p.decoder) {
    add(y, attend(rms(y, L.self_norm), rms(y, L.self_norm), L.self, &p.decoder_rel_bias, c.max_rel_distance, true, c.n_heads));
    add(y, attend(rms(y, L.cross_norm), enc, L.cross, nullptr, 0, false, c.n_heads));
    add(y, ffn(rms(y, L.ff_norm), L.ff_in, L.ff_out));
  }
  y = rms(y, p.decoder_final_norm);
  return mm(y, p.embedding.transpose());
}

}  // namespace

TEST(Forward, SoftmaxRowsSumToOne) {
  const auto p = random_params(tiny(), 1);
  Rng rng(2);
  const auto logits = forward(p, random_ids(rng, 7, 30), random_ids(rng, 5, 30));
  ASSERT_EQ(logits.rows(), 5);
  ASSERT_EQ(logits.cols(), 30);
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const auto probs = softmax(logits.row(i).transpose());
    double s = 0;
    for (double x : probs) s += x;
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(Forward, MatchesStraightLineOracle) {
  const auto cfg = tiny(12);
  const auto p = random_params(cfg, 3);
  const std::vector<TokenId> src{5, 9}, tgt{2, 7};
  const auto got = forward(p, src, tgt);
  const auto want = oracle_logits(p, src, tgt);
  for (Eigen::Index i = 0; i < got.rows(); ++i)
    for (Eigen::Index j = 0; j < got.cols(); ++j)
      EXPECT_NEAR(got(i, j), want[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)], 1e-10);
}

TEST(Forward, OracleAgreesOnLongerInputs) {
  const auto cfg = tiny(20);
  const auto p = random_params(cfg, 4);
  Rng rng(5);
  const auto src = random_ids(rng, 9, 20), tgt = random_ids(rng, 6, 20);
  const auto got = forward(p, src, tgt);
  const auto want = oracle_logits(p, src, tgt);
  for (Eigen::Index i = 0; i < got.rows(); ++i)
    for (Eigen::Index j = 0; j < got.cols(); ++j)
      EXPECT_NEAR(got(i, j), want[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)], 1e-10);
}

TEST(Forward, EncoderPermutationEquivariantWithoutBias) {
  auto p = random_params(tiny(), 6);
  p.encoder_rel_bias.setZero();
  // Cross-attention pools the encoder states, so permuting the source leaves
  // every decoder logit unchanged when the encoder has no position signal.
  const std::vector<TokenId> src{5, 6, 7, 8, 9}, perm{8, 6, 7, 5, 9}, tgt{2, 10, 11};
  const auto a = forward(p, src, tgt), b = forward(p, perm, tgt);
  EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-12);
  Rng rng(7);
  auto q = random_params(tiny(), 6);
  EXPECT_GT((forward(q, src, tgt) - forward(q, perm, tgt)).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Forward, DecoderIsCausal) {
  const auto p = random_params(tiny(), 8);
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const auto src = random_ids(rng, 6, 30);
    auto tgt = random_ids(rng, 7, 30);
    const auto base = forward(p, src, tgt);
    const auto t = static_cast<Eigen::Index>(rng.below(6));
    for (auto i = static_cast<std::size_t>(t) + 1; i < tgt.size(); ++i) tgt[i] = random_ids(rng, 1, 30)[0];
    const auto edited = forward(p, src, tgt);
    EXPECT_EQ(base.topRows(t + 1), edited.topRows(t + 1));
  }
}

TEST(Forward, Deterministic) {
  const auto p = random_params(tiny(), 10);
  const std::vector<TokenId> src{5, 6, 7}, tgt{2, 8};
  EXPECT_EQ(forward(p, src, tgt), forward(p, src, tgt));
}

TEST(Forward, ShapeErrors) {
  const auto p = random_params(tiny(), 11);
  const std::vector<TokenId> ok{5}, empty{}, bad{99};
  EXPECT_THROW(forward(p, empty, ok), Error);
  EXPECT_THROW(forward(p, ok, empty), Error);
  EXPECT_THROW(forward(p, bad, ok), Error);
}

TEST(Loss, InitialLossNearLogVocab) {
  ModelConfig cfg;
  cfg.vocab_size = 500;
  Rng rng(12);
  const auto p = init_params(cfg, rng);
  std::vector<std::vector<TokenId>> srcs, tgts;
  for (int i = 0; i < 16; ++i) {
    srcs.push_back(random_ids(rng, 12, 500));
    tgts.push_back(random_ids(rng, 6, 500));
  }
  std::vector<Seq2SeqPair> batch;
  for (int i = 0; i < 16; ++i) batch.push_back({srcs[static_cast<std::size_t>(i)], tgts[static_cast<std::size_t>(i)]});
  EXPECT_NEAR(batch_loss(p, batch), std::log(500.0), 0.05 * std::log(500.0));
}

TEST(Loss, EmptyTargetsSkipped) {
  const auto p = random_params(tiny(), 13);
  const std::vector<TokenId> s1{5, 6}, t1{7, 8}, s2{9}, t2{};
  const std::vector<Seq2SeqPair> one{{s1, t1}}, both{{s1, t1}, {s2, t2}};
  EXPECT_DOUBLE_EQ(batch_loss(p, one), batch_loss(p, both));
  EXPECT_EQ(loss_and_grad(p, both).tokens, 3u);
  EXPECT_THROW(loss_and_grad(p, std::vector<Seq2SeqPair>{}), Error);
}

TEST(Loss, BatchOrderInvariant) {
  const auto p = random_params(tiny(), 14);
  Rng rng(15);
  std::vector<std::vector<TokenId>> s, t;
  for (int i = 0; i < 6; ++i) {
    s.push_back(random_ids(rng, 3 + rng.below(5), 30));
    t.push_back(random_ids(rng, 1 + rng.below(5), 30));
  }
  std::vector<Seq2SeqPair> fwd, rev;
  for (int i = 0; i < 6; ++i) fwd.push_back({s[static_cast<std::size_t>(i)], t[static_cast<std::size_t>(i)]});
  rev.assign(fwd.rbegin(), fwd.rend());
  const auto a = loss_and_grad(p, fwd), b = loss_and_grad(p, rev);
  EXPECT_NEAR(a.loss, b.loss, 1e-12);
  EXPECT_LT(std::abs(global_norm(a.grad) - global_norm(b.grad)), 1e-10);
}

TEST(Loss, GradientMatchesFiniteDifferences) {
  auto p = random_params(tiny(), 16);
  Rng rng(17);
  std::vector<std::vector<TokenId>> s, t;
  for (int i = 0; i < 3; ++i) {
    s.push_back(random_ids(rng, 5, 30));
    t.push_back(random_ids(rng, 4, 30));
  }
  std::vector<Seq2SeqPair> batch;
  for (int i = 0; i < 3; ++i) batch.push_back({s[static_cast<std::size_t>(i)], t[static_cast<std::size_t>(i)]});
  const auto res = loss_and_grad(p, batch);
  auto params = p.tensors();
  const auto grads = res.grad.tensors();
  const double eps = 1e-4;
  int checked = 0;
  // Every tensor at least once, then random coordinates up to 50.
  for (int trial = 0; checked < 50; ++trial) {
    const auto ti = trial < static_cast<int>(params.size()) ? static_cast<std::size_t>(trial) : rng.below(params.size());
    Mat& m = *params[ti].second;
    const auto idx = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(m.size())));
    const double orig = m.data()[idx];
    m.data()[idx] = orig + eps;
    const double up = batch_loss(p, batch);
    m.data()[idx] = orig - eps;
    const double down = batch_loss(p, batch);
    m.data()[idx] = orig;
    const double numeric = (up - down) / (2 * eps);
    const double analytic = grads[ti].second->data()[idx];
    const double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-6});
    EXPECT_LT(std::abs(numeric - analytic) / denom, 1e-3) << params[ti].first << "[" << idx << "] " << numeric << " vs " << analytic;
    ++checked;
  }
}

TEST(Loss, DropoutChangesLossOnlyWhenEnabled) {
  auto cfg = tiny();
  cfg.dropout = 0.3;
  const auto p = random_params(cfg, 18);
  const std::vector<TokenId> s{5, 6, 7}, t{8, 9};
  const std::vector<Seq2SeqPair> batch{{s, t}};
  Rng a(1);
  EXPECT_NE(loss_and_grad(p, batch, &a).loss, batch_loss(p, batch));
  EXPECT_EQ(loss_and_grad(p, batch).loss, batch_loss(p, batch));
}

TEST(Decode, CachedStepsMatchForward) {
  const auto p = random_params(tiny(), 19);
  const std::vector<TokenId> src{5, 6, 7, 8}, tgt{2, 9, 10, 11, 12};
  const auto full = forward(p, src, tgt);
  Decoder dec(p, src);
  for (std::size_t i = 0; i < tgt.size(); ++i) {
    const auto row = dec.step(tgt[i]);
    EXPECT_LT((row.transpose() - full.row(static_cast<Eigen::Index>(i))).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(Decode, NucleusAtTinyThresholdIsGreedy) {
  Rng rng(20);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto p = random_params(tiny(), 100 + seed);
    const auto src = random_ids(rng, 6, 30);
    Rng r(seed);
    EXPECT_EQ(decode_nucleus(p, src, 1e-9, r), decode_greedy(p, src));
  }
}

TEST(Decode, LengthBounded) {
  auto cfg = tiny();
  cfg.max_decode_len = 7;
  Rng rng(21);
  for (int i = 0; i < 1000; ++i) {
    Rng init(static_cast<std::uint64_t>(i));
    const auto p = init_params(cfg, init);
    const auto src = random_ids(rng, 1 + rng.below(8), 30);
    EXPECT_LE(decode_greedy(p, src).size(), 7u);
    Rng r(static_cast<std::uint64_t>(i));
    const auto out = decode_nucleus(p, src, 0.9, r);
    EXPECT_LE(out.size(), 7u);
    EXPECT_EQ(std::count(out.begin(), out.end(), Vocab::kEos), 0);
  }
  const auto p = random_params(cfg, 5);
  EXPECT_LE(decode_greedy(p, std::vector<TokenId>{5, 6}, {3}).size(), 3u);
}

TEST(Decode, OverfitOnePairIsMemorized) {
  auto cfg = tiny(30);
  cfg.d_model = 16;
  cfg.d_ff = 32;
  Rng rng(22);
  auto p = init_params(cfg, rng);
  const std::vector<TokenId> src{5, 6, 7, 8}, tgt{9, 10, 11, 12, 13, 14};
  const std::vector<Seq2SeqPair> batch{{src, tgt}};
  TrainConfig tc;
  tc.lr = 3e-3;
  auto adam = make_adam(cfg);
  for (int step = 0; step < 300; ++step) {
    auto r = loss_and_grad(p, batch);
    clip_gradients(r.grad, tc.grad_clip);
    adam_update(p, adam, r.grad, tc.lr, tc);
  }
  EXPECT_EQ(decode_greedy(p, src), tgt);
}

TEST(Training, OverfitsFixedSsrBatch) {
  const auto s = ssr::testing::synthetic_setup(300, 23);
  const auto lm = NgramLM::train(s.seqs, s.vocab, 3);
  NgramGenerator gen(lm, {});
  BuildOptions opts;
  opts.seed = 1;
  auto data = build_dataset(s.seqs, s.vocab, &gen, opts);
  data.resize(32);
  const auto batch = to_pairs(data);
  ModelConfig cfg;
  cfg.vocab_size = static_cast<int>(s.vocab.size());
  Rng rng(24);
  auto p = init_params(cfg, rng);
  TrainConfig tc;  // lr 3e-4
  auto adam = make_adam(cfg);
  double loss = 0;
  for (int step = 0; step < 500; ++step) {
    auto r = loss_and_grad(p, batch);
    loss = r.loss;
    clip_gradients(r.grad, tc.grad_clip);
    adam_update(p, adam, r.grad, tc.lr, tc);
  }
  EXPECT_LT(batch_loss(p, batch), 0.1) << "last step loss " << loss;
}

TEST(Params, CountAndShapes) {
  const auto cfg = tiny();
  const auto p = zero_params(cfg);
  EXPECT_EQ(p.parameter_count(), parameter_count(cfg));
  EXPECT_EQ(p.encoder_rel_bias.cols(), 5);
  ModelConfig bad = cfg;
  bad.n_heads = 3;
  EXPECT_THROW(bad.validate(), Error);
}

TEST(Checkpoint, RoundTripBitExact) {
  ssr::testing::TempDir dir("ckpt");
  Checkpoint c;
  c.params = random_params(tiny(), 25);
  c.adam = make_adam(tiny());
  c.adam->m = random_params(tiny(), 26);
  c.adam->t = 17;
  c.step = 17;
  Rng rng(3);
  rng.next_u64();
  c.rng_state = rng.state();
  c.objective = "ssr";
  c.vocab_fingerprint = "abc123";
  save_checkpoint(c, dir / "x.ckpt");
  const auto back = load_checkpoint(dir / "x.ckpt");
  EXPECT_TRUE(back.params == c.params);
  ASSERT_TRUE(back.adam.has_value());
  EXPECT_TRUE(back.adam->m == c.adam->m);
  EXPECT_EQ(back.adam->t, 17u);
  EXPECT_EQ(back.step, 17u);
  EXPECT_EQ(back.rng_state, c.rng_state);
  EXPECT_EQ(back.objective, "ssr");
  EXPECT_EQ(back.vocab_fingerprint, "abc123");
}

TEST(Checkpoint, CorruptFilesRejected) {
  ssr::testing::TempDir dir("ckptbad");
  Checkpoint c;
  c.params = random_params(tiny(), 27);
  save_checkpoint(c, dir / "x.ckpt");
  const auto size = std::filesystem::file_size(dir / "x.ckpt");
  std::filesystem::copy_file(dir / "x.ckpt", dir / "y.ckpt");
  std::filesystem::resize_file(dir / "y.ckpt", size - 8);
  EXPECT_THROW(load_checkpoint(dir / "y.ckpt"), Error);
  std::filesystem::resize_file(dir / "x.ckpt", size + 8);
  EXPECT_THROW(load_checkpoint(dir / "x.ckpt"), Error);
  EXPECT_THROW(load_checkpoint(dir / "missing.ckpt"), Error);
}
