#pragma once

#include <span>
#include <string>
#include <vector>

#include "ssr/corpus.hpp"
#include "ssr/dataset.hpp"
#include "ssr/generators.hpp"
#include "ssr/model.hpp"
#include "ssr/rng.hpp"

namespace ssr {

enum class EditType { kInsert, kDelete, kSubstitute };
std::string to_string(EditType t);

// Token-level edit against a source sequence. Inserts go in front of
// source[position]; delete and substitute act on source[position]. Deletes
// carry the removed token, substitutes the new one.
struct Edit {
  std::size_t position = 0;
  EditType type = EditType::kSubstitute;
  std::vector<TokenId> tokens;
  auto operator<=>(const Edit&) const = default;
};

using EditSet = std::vector<Edit>;

/// Minimum-cost (unit Levenshtein) edit script turning `source` into `target`.
/// Among optimal scripts: match, then substitute, then delete, then insert,
/// scanning left to right.
EditSet align_edits(std::span<const TokenId> source, std::span<const TokenId> target);
/// Applies an edit script produced against `source`.
std::vector<TokenId> apply_edits(std::span<const TokenId> source, const EditSet& edits);

struct PRF {
  double p = 0.0;
  double r = 0.0;
  double f = 0.0;
};

double f_beta(double p, double r, double beta);

struct EditCounts {
  std::size_t matched = 0;
  std::size_t hyp = 0;
  std::size_t ref = 0;
  EditCounts& operator+=(const EditCounts& o);
};

/// Multiset intersection size of identical edits.
EditCounts count_edit_matches(const EditSet& hyp, const EditSet& ref);
/// P = matched/hyp, R = matched/ref; both empty gives 1, one empty makes its ratio 0.
PRF prf_from_counts(const EditCounts& c, double beta = 0.5);
PRF edit_f_beta(const EditSet& hyp, const EditSet& ref, double beta = 0.5);

std::size_t lcs_length(std::span<const TokenId> a, std::span<const TokenId> b);
/// LCS precision/recall with plain F1.
PRF rouge_l(std::span<const TokenId> hyp, std::span<const TokenId> ref);

struct SplitRatios {
  double train = 0.8;
  double dev = 0.1;
  double test = 0.1;
};

struct TaskSplits {
  std::vector<SSRExample> train, dev, test;
};

/// Synthetic grammatical error correction: the clean sentence is the target,
/// its rule-noised copy the source. Documents (the id before any "/w" window
/// suffix) are shuffled and partitioned, so no document spans two splits.
TaskSplits make_synth_gec(std::span<const TokenSeq> corpus, const NoiseConfig& noise, Rng& rng,
                          const SplitRatios& ratios, const Vocab& vocab);

struct MetricSet {
  double exact_match = 0.0;
  double p = 0.0;
  double r = 0.0;
  double f05 = 0.0;
  double rouge_l = 0.0;
};

struct EvalReport {
  std::string checkpoint;
  std::string task;
  std::size_t n_examples = 0;
  MetricSet metrics;
  MetricSet copy_baseline;
  std::string to_json() const;
};

/// Scores hypotheses against references for the rewrite payloads of `examples`
/// (sentinels stripped). Edit P/R/F are pooled over the whole set.
MetricSet score_hypotheses(std::span<const SSRExample> examples,
                           std::span<const std::vector<TokenId>> hypotheses, const Vocab& vocab);

/// Greedy-decodes every source and reports model and copy-baseline metrics.
EvalReport evaluate(const ModelParams& params, std::span<const SSRExample> test, const Vocab& vocab,
                    std::string checkpoint_name, std::string task = "synth-gec");

}  // namespace ssr
