#pragma once

#include <cstdint>
#include <vector>

#include "ssr/corpus.hpp"
#include "ssr/rng.hpp"

namespace ssr {

/// One masked span. A zero-length span marks a pure insertion point in front of `start`.
struct Span {
  int index = 0;           // 1-based sentinel number, left to right
  std::size_t start = 0;   // token offset into the sequence
  std::size_t length = 0;
  std::vector<TokenId> gt_ids;

  bool operator==(const Span&) const = default;
};

struct SpanMask {
  std::vector<Span> spans;  // sorted by start
  TokenSeq seq;
};

struct MaskingConfig {
  double lambda = 3.0;
  double budget = 0.30;
  std::size_t max_span_len = 10;
  std::size_t max_spans = Vocab::kDefaultMaxSentinels;
  double max_insertion_share = 0.2;
  int max_attempts = 50;
};

/// Exact Poisson draw (Knuth's product method; large rates are split in halves).
std::uint64_t poisson_sample(Rng& rng, double lambda);

/// Samples non-adjacent spans until the budget is met. `raw_lengths`, when given,
/// receives every Poisson draw before clamping.
SpanMask sample_spans(const TokenSeq& seq, Rng& rng, const MaskingConfig& cfg,
                      std::vector<std::uint64_t>* raw_lengths = nullptr);

/// Same, with the generator derived from (global_seed, seq.doc_id).
SpanMask sample_spans(const TokenSeq& seq, std::uint64_t global_seed, const MaskingConfig& cfg);

/// Throws ssr::Error if any SpanMask invariant is broken.
void validate_mask(const SpanMask& mask);

struct InfillPair {
  TokenSeq source;  // spans replaced by M_i
  TokenSeq target;  // M_1 gt_1 M_2 gt_2 ...
};

InfillPair apply_mask(const SpanMask& mask, const Vocab& vocab);

/// Total masked tokens.
std::size_t masked_tokens(const SpanMask& mask);

}  // namespace ssr
