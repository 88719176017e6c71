#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ssr/checkpoint.hpp"
#include "ssr/curriculum.hpp"
#include "ssr/dataset.hpp"
#include "ssr/generators.hpp"
#include "ssr/model.hpp"

namespace ssr {

struct TrainConfig {
  std::size_t steps = 1000;
  std::size_t batch_size = 32;
  double lr = 3e-4;
  std::size_t warmup_steps = 100;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double grad_clip = 1.0;
  std::size_t eval_every = 100;  // 0: only at the end
  std::uint64_t seed = 0;

  void validate() const;
};

/// Learning rate used for 1-based step `step`: linear warmup, then constant.
double lr_at(const TrainConfig& cfg, std::size_t step);

double global_norm(const ModelParams& grad);
/// Scales the gradient so its global norm is at most max_norm; returns the norm before clipping.
double clip_gradients(ModelParams& grad, double max_norm);

AdamState make_adam(const ModelConfig& cfg);
void adam_update(ModelParams& params, AdamState& state, const ModelParams& grad, double lr,
                 const TrainConfig& cfg);

/// Turns a dataset into model training pairs (spans into the examples).
std::vector<Seq2SeqPair> to_pairs(std::span<const SSRExample> examples);

struct StepLog {
  std::size_t step = 0;
  int phase = 0;
  double lr = 0.0;
  double loss = 0.0;
  double grad_norm = 0.0;     // before clipping
  double clipped_norm = 0.0;  // after clipping
  std::vector<std::size_t> bucket_histogram;  // examples per bucket in this batch
};

struct PretrainOptions {
  Mode objective = Mode::kInfill;
  CurriculumSchedule schedule{Strategy::kNone, 1, 0.8};
  TrainConfig train;
  /// SSR runs must start from an infilling checkpoint unless this is set.
  bool from_scratch = false;
  std::string vocab_fingerprint;
  /// JSONL record every eval_every steps and at the end.
  std::optional<std::filesystem::path> metrics_path;
  /// Called with an intermediate checkpoint every eval_every steps.
  std::function<void(const Checkpoint&)> on_checkpoint;
  /// Per-step details, for tests.
  std::vector<StepLog>* step_log = nullptr;
};

/// Trains `init` (or a freshly initialized model of `model_cfg` when init is
/// null) on `data`. Batches follow curriculum::schedule_order.
Checkpoint pretrain(const Checkpoint* init, const ModelConfig& model_cfg,
                    std::span<const SSRExample> data, const PretrainOptions& opts);

struct FinetuneOptions {
  TrainConfig train;
  std::size_t patience = 5;  // evaluations without dev improvement before stopping
  std::string vocab_fingerprint;
  std::optional<std::filesystem::path> metrics_path;
};

struct FinetuneResult {
  Checkpoint best;
  double best_dev_exact_match = 0.0;
  std::size_t best_step = 0;
  std::size_t steps_run = 0;
  bool early_stopped = false;
};

/// Greedy-decoded exact match, comparing payloads with sentinels removed.
double exact_match(const ModelParams& params, std::span<const SSRExample> examples,
                   const Vocab& vocab);

FinetuneResult finetune(const Checkpoint& init, std::span<const SSRExample> train,
                        std::span<const SSRExample> dev, const Vocab& vocab,
                        const FinetuneOptions& opts);

/// Span generator backed by an infilling checkpoint. Each span is decoded
/// after forcing its mask sentinel, with nucleus sampling, until the model
/// emits a special token or max_gen_len tokens; nll is taken from the full
/// softmax. Refuses checkpoints whose last objective was not infilling.
std::unique_ptr<SpanGenerator> as_self_generator(const Checkpoint& ckpt, const Vocab& vocab,
                                                 GenerationConfig cfg = {});

}  // namespace ssr
