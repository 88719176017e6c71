#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ssr/corpus.hpp"
#include "ssr/curriculum.hpp"
#include "ssr/generators.hpp"
#include "ssr/masking.hpp"
#include "ssr/model.hpp"
#include "ssr/tasks.hpp"
#include "ssr/training.hpp"

namespace ssr {

struct GeneratorSpec {
  std::string kind = "ngram";  // ngram | rule | identity | self | external
  std::string command;         // external only
  int order = 3;
  double alpha = 0.4;
  GenerationConfig generation;
  NoiseConfig noise;
  double timeout_s = 30.0;
};

struct PipelineConfig {
  std::uint64_t seed = 0;
  std::filesystem::path output_dir;

  std::vector<std::filesystem::path> corpus_paths;
  std::size_t synthetic_sentences = 0;  // generated corpus when no paths are given
  std::size_t max_seq_len = 64;
  TokenizerOptions tokenizer;

  VocabOptions vocab;
  MaskingConfig masking;
  GeneratorSpec generator;

  bool drop_exact_copies = false;
  std::size_t threads = 1;
  std::size_t ssr_documents = 0;  // 0: every pre-training window

  CurriculumSchedule curriculum;
  ModelConfig model;
  TrainConfig infill_train;
  TrainConfig ssr_train;
  TrainConfig finetune_train;
  std::size_t patience = 5;
  bool from_scratch = false;

  NoiseConfig task_noise;
  SplitRatios task_split;
  double task_fraction = 0.2;        // share of documents held out for the task
  std::size_t task_train_examples = 0;  // 0: all

  bool baseline = false;  // run-all also trains the infilling-only arm

  /// Canonical JSON (every key, defaults filled in).
  std::string to_json() const;
  void validate() const;
};

/// Parses a JSON config. Unknown keys are rejected with their dotted path;
/// "seed" is mandatory.
PipelineConfig parse_pipeline_config(const std::string& text);
PipelineConfig load_pipeline_config(const std::filesystem::path& path);

/// Applies --generator values: ngram, rule, identity, self or external:<command>.
void set_generator(PipelineConfig& cfg, const std::string& spec);

// Stage runner over one output directory. A lock file guards the directory;
// completed stages leave a marker and are skipped unless `force`.
class Pipeline {
 public:
  Pipeline(PipelineConfig cfg, bool force);
  ~Pipeline();
  Pipeline(const Pipeline&) = delete;
  Pipeline& operator=(const Pipeline&) = delete;

  void build_vocab();
  void train_generator();
  void build_dataset();
  void score_curriculum();
  void pretrain();
  void finetune();
  void evaluate();
  void run_all();
  void ablate_curriculum();

  const std::filesystem::path& out() const { return out_; }

 private:
  bool begin(const std::string& name);
  void finish(const std::string& name);
  void require(const std::filesystem::path& rel, const std::string& command) const;
  std::filesystem::path path(const std::filesystem::path& rel) const { return out_ / rel; }

  std::vector<Document> documents() const;
  Vocab load_vocab() const;
  void split_documents(const Vocab& vocab, std::vector<TokenSeq>& pretrain,
                       std::vector<TokenSeq>& task) const;
  void build_base_datasets();
  void ensure_infill_checkpoint();
  std::unique_ptr<SpanGenerator> make_generator(const Vocab& vocab, NgramLM& lm_storage) const;
  Checkpoint continue_pretraining(const Checkpoint& init, Mode mode, const std::string& data_rel,
                                  const CurriculumSchedule& schedule, const std::string& metrics_rel);
  EvalReport finetune_and_evaluate(const std::string& init_rel, const std::string& tag);

  PipelineConfig cfg_;
  bool force_;
  std::filesystem::path out_;
  std::filesystem::path lock_;
  std::string fingerprint_;
};

/// Pretty-prints one dataset record with aligned spans and the difficulty sum.
std::string inspect_example(const SSRExample& ex, const Vocab& vocab);

/// SHA-free content digest of a directory tree (relative paths and bytes, FNV-1a).
std::string directory_digest(const std::filesystem::path& dir);

}  // namespace ssr
