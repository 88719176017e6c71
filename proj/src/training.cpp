#include "ssr/training.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"
#include "ssr/error.hpp"
#include "ssr/nucleus.hpp"

namespace ssr {

void TrainConfig::validate() const {
  if (batch_size == 0) throw Error("batch_size must be positive");
  if (!(lr > 0.0) || !(eps > 0.0) || !(grad_clip > 0.0)) throw Error("lr, eps and grad_clip must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw Error("adam betas must lie in [0, 1)");
  }
  if (steps > 0 && warmup_steps > steps) throw Error("warmup_steps exceeds steps");
}

double lr_at(const TrainConfig& cfg, std::size_t step) {
  if (cfg.warmup_steps == 0 || step >= cfg.warmup_steps) return cfg.lr;
  return cfg.lr * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
}

double global_norm(const ModelParams& grad) {
  double sq = 0.0;
  for (const auto& [name, m] : grad.tensors()) sq += m->squaredNorm();
  return std::sqrt(sq);
}

double clip_gradients(ModelParams& grad, double max_norm) {
  const double norm = global_norm(grad);
  if (norm > max_norm) {
    const double scale = max_norm / norm;
    for (auto& [name, m] : grad.tensors()) *m *= scale;
  }
  return norm;
}

AdamState make_adam(const ModelConfig& cfg) { return {zero_params(cfg), zero_params(cfg), 0}; }

void adam_update(ModelParams& params, AdamState& state, const ModelParams& grad, double lr,
                 const TrainConfig& cfg) {
  ++state.t;
  const double t = static_cast<double>(state.t);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  auto p = params.tensors();
  auto m = state.m.tensors();
  auto v = state.v.tensors();
  const auto g = grad.tensors();
  for (std::size_t i = 0; i < p.size(); ++i) {
    auto& M = *m[i].second;
    auto& V = *v[i].second;
    const auto& G = *g[i].second;
    M = cfg.beta1 * M + (1.0 - cfg.beta1) * G;
    V = cfg.beta2 * V + (1.0 - cfg.beta2) * G.cwiseAbs2();
    p[i].second->array() -= lr * (M.array() / c1) / ((V.array() / c2).sqrt() + cfg.eps);
  }
}

std::vector<Seq2SeqPair> to_pairs(std::span<const SSRExample> examples) {
  std::vector<Seq2SeqPair> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) out.push_back({ex.source_ids, ex.target_ids});
  return out;
}

namespace {

class MetricsLog {
 public:
  explicit MetricsLog(const std::optional<std::filesystem::path>& path) {
    if (path) {
      out_.open(*path, std::ios::trunc);
      if (!out_) throw Error("cannot write metrics log: " + path->string());
    }
  }
  void write(const nlohmann::ordered_json& rec) {
    if (out_.is_open()) out_ << rec.dump() << '\n' << std::flush;
  }

 private:
  std::ofstream out_;
};

void check_mode(std::span<const SSRExample> data, Mode mode) {
  for (const auto& ex : data) {
    if (ex.mode != mode) {
      throw Error("objective/dataset mismatch: objective " + to_string(mode) + ", example " + ex.id +
                  " has mode " + to_string(ex.mode));
    }
  }
}

}  // namespace

Checkpoint pretrain(const Checkpoint* init, const ModelConfig& model_cfg,
                    std::span<const SSRExample> data, const PretrainOptions& opts) {
  const auto& tc = opts.train;
  tc.validate();
  check_mode(data, opts.objective);
  if (opts.objective == Mode::kFinetune) throw Error("use finetune for finetune-mode data");
  if (opts.objective == Mode::kSsr && !opts.from_scratch &&
      (!init || (init->objective != "infill" && init->objective != "ssr"))) {
    throw Error("SSR continual pre-training needs an infilling checkpoint to start from");
  }
  if (init && !opts.vocab_fingerprint.empty() && !init->vocab_fingerprint.empty() &&
      init->vocab_fingerprint != opts.vocab_fingerprint) {
    throw Error("vocab mismatch between checkpoint and dataset");
  }

  Checkpoint ck;
  if (init) {
    ck = *init;
  } else {
    Rng init_rng(tc.seed, "init");
    ck.params = init_params(model_cfg, init_rng);
    ck.vocab_fingerprint = opts.vocab_fingerprint;
  }
  if (tc.steps == 0) return ck;
  if (data.empty()) throw Error("empty dataset");

  Rng sched_rng(tc.seed, "schedule");
  const auto batches = schedule_order(data, opts.schedule, tc.steps, tc.batch_size, sched_rng);
  Rng drop_rng(tc.seed, "dropout");
  AdamState adam = make_adam(ck.params.config);
  MetricsLog log(opts.metrics_path);
  const int k = opts.schedule.strategy == Strategy::kNone ? 1 : opts.schedule.k;

  double window_loss = 0.0;
  std::size_t window_steps = 0;
  std::vector<std::size_t> window_hist(static_cast<std::size_t>(k), 0);
  std::vector<Seq2SeqPair> pairs;
  for (std::size_t s = 1; s <= tc.steps; ++s) {
    const auto& batch = batches[s - 1];
    pairs.clear();
    StepLog rec;
    rec.step = s;
    rec.phase = phase_of(s - 1, tc.steps, k);
    rec.bucket_histogram.assign(static_cast<std::size_t>(k), 0);
    for (auto idx : batch) {
      pairs.push_back({data[idx].source_ids, data[idx].target_ids});
      if (const auto& b = data[idx].bucket; b && k > 1 && *b >= 1 && *b <= k) {
        ++rec.bucket_histogram[static_cast<std::size_t>(*b - 1)];
      }
    }
    auto res = loss_and_grad(ck.params, pairs, &drop_rng);
    rec.loss = res.loss;
    rec.grad_norm = clip_gradients(res.grad, tc.grad_clip);
    rec.clipped_norm = global_norm(res.grad);
    rec.lr = lr_at(tc, s);
    adam_update(ck.params, adam, res.grad, rec.lr, tc);

    window_loss += rec.loss;
    ++window_steps;
    for (std::size_t b = 0; b < rec.bucket_histogram.size(); ++b) window_hist[b] += rec.bucket_histogram[b];
    const bool eval_now = (tc.eval_every > 0 && s % tc.eval_every == 0) || s == tc.steps;
    if (eval_now) {
      nlohmann::ordered_json j;
      j["step"] = ck.step + s;
      j["phase"] = rec.phase;
      j["lr"] = rec.lr;
      j["train_loss"] = window_loss / static_cast<double>(window_steps);
      j["grad_norm"] = rec.grad_norm;
      j["bucket_histogram"] = window_hist;
      log.write(j);
      window_loss = 0.0;
      window_steps = 0;
      std::fill(window_hist.begin(), window_hist.end(), 0);
    }
    if (opts.step_log) opts.step_log->push_back(std::move(rec));
    if (eval_now && opts.on_checkpoint && s != tc.steps) {
      Checkpoint mid = ck;
      mid.step = ck.step + s;
      mid.adam = adam;
      mid.objective = to_string(opts.objective);
      mid.rng_state = drop_rng.state();
      opts.on_checkpoint(mid);
    }
  }
  if (!ck.params.all_finite()) throw Error("training diverged: non-finite parameters");
  ck.step += tc.steps;
  ck.adam = std::move(adam);
  ck.objective = to_string(opts.objective);
  ck.rng_state = drop_rng.state();
  return ck;
}

namespace {

std::size_t decode_limit(const ModelParams& params, std::size_t source_len) {
  return std::min<std::size_t>(static_cast<std::size_t>(params.config.max_decode_len), source_len + 8);
}

}  // namespace

double exact_match(const ModelParams& params, std::span<const SSRExample> examples,
                   const Vocab& vocab) {
  if (examples.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& ex : examples) {
    const auto hyp = decode_greedy(params, ex.source_ids, {decode_limit(params, ex.source_ids.size())});
    if (strip_sentinels(hyp, vocab) == strip_sentinels(ex.target_ids, vocab)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(examples.size());
}

FinetuneResult finetune(const Checkpoint& init, std::span<const SSRExample> train,
                        std::span<const SSRExample> dev, const Vocab& vocab,
                        const FinetuneOptions& opts) {
  const auto& tc = opts.train;
  tc.validate();
  if (static_cast<std::size_t>(init.params.config.vocab_size) != vocab.size() ||
      (!init.vocab_fingerprint.empty() && !opts.vocab_fingerprint.empty() &&
       init.vocab_fingerprint != opts.vocab_fingerprint)) {
    throw Error("vocab mismatch between checkpoint and task");
  }
  check_mode(train, Mode::kFinetune);
  check_mode(dev, Mode::kFinetune);
  if (tc.steps > 0 && train.empty()) throw Error("empty dataset");

  MetricsLog log(opts.metrics_path);
  FinetuneResult result;
  Checkpoint cur = init;
  cur.objective = "finetune";
  AdamState adam = make_adam(cur.params.config);
  Rng batch_rng(tc.seed, "finetune");
  Rng drop_rng(tc.seed, "dropout");

  std::size_t since_best = 0;
  double window_loss = 0.0;
  std::size_t window_steps = 0;
  auto evaluate_dev = [&](std::size_t step) {
    const double em = exact_match(cur.params, dev, vocab);
    nlohmann::ordered_json j;
    j["step"] = step;
    j["phase"] = "finetune";
    j["train_loss"] = window_steps ? nlohmann::ordered_json(window_loss / static_cast<double>(window_steps))
                                   : nlohmann::ordered_json(nullptr);
    j["dev_exact_match"] = em;
    log.write(j);
    window_loss = 0.0;
    window_steps = 0;
    if (step == 0 || em > result.best_dev_exact_match) {
      result.best_dev_exact_match = em;
      result.best_step = step;
      result.best = cur;
      result.best.step = init.step + step;
      result.best.adam = adam;
      result.best.rng_state = drop_rng.state();
      since_best = 0;
    } else {
      ++since_best;
    }
  };

  evaluate_dev(0);
  std::vector<Seq2SeqPair> pairs;
  for (std::size_t s = 1; s <= tc.steps; ++s) {
    pairs.clear();
    for (std::size_t i = 0; i < tc.batch_size; ++i) {
      const auto& ex = train[batch_rng.below(train.size())];
      pairs.push_back({ex.source_ids, ex.target_ids});
    }
    auto res = loss_and_grad(cur.params, pairs, &drop_rng);
    clip_gradients(res.grad, tc.grad_clip);
    adam_update(cur.params, adam, res.grad, lr_at(tc, s), tc);
    window_loss += res.loss;
    ++window_steps;
    result.steps_run = s;
    if ((tc.eval_every > 0 && s % tc.eval_every == 0) || s == tc.steps) {
      evaluate_dev(s);
      if (since_best >= opts.patience && s != tc.steps) {
        result.early_stopped = true;
        break;
      }
    }
  }
  if (!result.best.params.all_finite()) throw Error("training diverged: non-finite parameters");
  return result;
}

namespace {

class SelfGenerator final : public SpanGenerator {
 public:
  SelfGenerator(ModelParams params, const Vocab& vocab, GenerationConfig cfg)
      : params_(std::move(params)), vocab_(&vocab), cfg_(cfg) {}
  std::string name() const override { return "self"; }

  GeneratorOutput fill(const SpanMask& mask, Rng& rng) override {
    GeneratorOutput out;
    if (mask.spans.empty()) return out;
    const auto pair = apply_mask(mask, *vocab_);
    Decoder dec(params_, pair.source.ids);
    dec.step(Vocab::kBos);
    for (const auto& span : mask.spans) {
      SpanFill fill;
      auto logits = dec.step(vocab_->mask(span.index));
      while (fill.imperfect_ids.size() < cfg_.max_gen_len) {
        const auto probs = softmax(logits);
        const auto draw = nucleus_sample(probs, cfg_.top_p, rng);
        const auto id = static_cast<TokenId>(draw.id);
        if (id != Vocab::kUnk && vocab_->is_special(id)) break;
        fill.imperfect_ids.push_back(id);
        fill.nll.push_back(-std::log(draw.prob));
        logits = dec.step(id);
      }
      out.spans.push_back(std::move(fill));
    }
    mark_exact_copies(out, mask);
    return out;
  }

 private:
  ModelParams params_;
  const Vocab* vocab_;
  GenerationConfig cfg_;
};

}  // namespace

std::unique_ptr<SpanGenerator> as_self_generator(const Checkpoint& ckpt, const Vocab& vocab,
                                                 GenerationConfig cfg) {
  if (!ckpt.objective.empty() && ckpt.objective != "infill") {
    throw Error("format mismatch: checkpoint objective is '" + ckpt.objective +
                "', the self generator needs an infilling checkpoint");
  }
  if (static_cast<std::size_t>(ckpt.params.config.vocab_size) != vocab.size()) {
    throw Error("vocab mismatch between checkpoint and generator vocabulary");
  }
  return std::make_unique<SelfGenerator>(ckpt.params, vocab, cfg);
}

}  // namespace ssr
