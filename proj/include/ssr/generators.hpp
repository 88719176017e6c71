#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ssr/corpus.hpp"
#include "ssr/masking.hpp"
#include "ssr/ngram.hpp"
#include "ssr/rng.hpp"

namespace ssr {

/// Generator output for one span.
struct SpanFill {
  std::vector<TokenId> imperfect_ids;
  std::vector<double> nll;  // nats, aligned with imperfect_ids
  bool is_exact_copy = false;

  bool operator==(const SpanFill&) const = default;
};

struct GeneratorOutput {
  std::vector<SpanFill> spans;  // one per mask span, same order
};

struct GenerationConfig {
  double top_p = 0.9;
  double length_lambda = 3.0;
  std::size_t max_gen_len = 12;
};

// Interface shared by every imperfect span generator.
class SpanGenerator {
 public:
  virtual ~SpanGenerator() = default;
  virtual std::string name() const = 0;
  virtual bool ready() const { return true; }
  /// True when fill() may run concurrently on distinct masks.
  virtual bool concurrent() const { return true; }
  virtual GeneratorOutput fill(const SpanMask& mask, Rng& rng) = 0;
};

/// Checks readiness, runs the generator and validates the result.
GeneratorOutput generate_spans(SpanGenerator& gen, const SpanMask& mask, Rng& rng,
                               const Vocab& vocab);

/// Throws ssr::Error when the output is misaligned with the mask, has a
/// negative or non-finite nll, or emits sentinel ids.
void validate_output(const GeneratorOutput& out, const SpanMask& mask, const Vocab& vocab);

/// Sets is_exact_copy from the ground truth.
void mark_exact_copies(GeneratorOutput& out, const SpanMask& mask);

class IdentityGenerator final : public SpanGenerator {
 public:
  std::string name() const override { return "identity"; }
  GeneratorOutput fill(const SpanMask& mask, Rng& rng) override;
};

// Replays fixed spans with fixed per-token probabilities; used for worked
// examples and demos.
class ScriptedGenerator final : public SpanGenerator {
 public:
  ScriptedGenerator(std::vector<std::vector<TokenId>> spans, std::vector<std::vector<double>> probs);
  std::string name() const override { return "scripted"; }
  GeneratorOutput fill(const SpanMask& mask, Rng& rng) override;

 private:
  std::vector<std::vector<TokenId>> spans_;
  std::vector<std::vector<double>> probs_;
};

// Left-to-right n-gram infiller: each span gets a Poisson length drawn
// independently of the ground truth, and tokens are nucleus-sampled given the
// left context (original tokens plus earlier generated spans).
class NgramGenerator final : public SpanGenerator {
 public:
  NgramGenerator(const NgramLM& lm, GenerationConfig cfg = {}) : lm_(&lm), cfg_(cfg) {}
  std::string name() const override { return "ngram"; }
  bool ready() const override { return lm_->trained(); }
  GeneratorOutput fill(const SpanMask& mask, Rng& rng) override;

 private:
  const NgramLM* lm_;
  GenerationConfig cfg_;
};

struct NoiseConfig {
  double p_delete = 0.1;
  double p_replace = 0.1;
  double p_shuffle = 0.1;
  double p_duplicate = 0.05;
};

struct NoiseStats {
  std::size_t deleted = 0;
  std::size_t replaced = 0;
  std::size_t duplicated = 0;
  std::size_t swapped = 0;
  std::size_t edits() const { return deleted + replaced + duplicated + swapped; }
};

// Rule-based corruption. Per token: delete with p_delete; otherwise replace by a
// uniformly drawn ordinary token with p_replace, then duplicate with p_duplicate.
// A final left-to-right pass swaps a token with its right neighbour with
// p_shuffle (a swapped pair is not revisited). Every surviving token carries
// the pseudo-nll edits / max(1, |output|).
SpanFill rule_noise(std::span<const TokenId> gt_ids, const NoiseConfig& cfg, Rng& rng,
                    const Vocab& vocab, NoiseStats* stats = nullptr);

class RuleNoiseGenerator final : public SpanGenerator {
 public:
  RuleNoiseGenerator(const Vocab& vocab, NoiseConfig cfg) : vocab_(&vocab), cfg_(cfg) {}
  std::string name() const override { return "rule"; }
  GeneratorOutput fill(const SpanMask& mask, Rng& rng) override;

 private:
  const Vocab* vocab_;
  NoiseConfig cfg_;
};

}  // namespace ssr
