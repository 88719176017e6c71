#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <vector>

#include "ssr/corpus.hpp"

namespace ssr {

// Count-based n-gram model used as a cheap imperfect span generator.
//
// Scoring backs off to the longest suffix of the context that was observed as
// a context in training: score(t | ctx) = count(ctx t) / count(ctx) when ctx
// was seen, otherwise alpha * score(t | ctx minus its oldest token). The
// unigram level is add-one smoothed over the emittable tokens (<unk> and all
// ordinary tokens), so every context yields a proper distribution after
// renormalization. Sequence starts are padded with <bos>.
class NgramLM {
 public:
  NgramLM() = default;

  static NgramLM train(std::span<const TokenSeq> corpus, const Vocab& vocab, int order = 3,
                       double alpha = 0.4);

  /// Adds another model's counts (same order and vocabulary).
  void merge(const NgramLM& other);

  bool trained() const { return order_ > 0; }
  int order() const { return order_; }
  double alpha() const { return alpha_; }
  std::size_t vocab_size() const { return unigram_.size(); }
  std::uint64_t vocab_fingerprint() const { return vocab_fingerprint_; }

  bool emittable(TokenId id) const;

  /// Raw backoff scores over the vocabulary (zero for non-emittable ids).
  std::vector<double> scores(std::span<const TokenId> context) const;
  /// Normalized next-token distribution given the left context (any length;
  /// only the last order-1 tokens matter).
  std::vector<double> distribution(std::span<const TokenId> context) const;

  std::uint64_t unigram_count(TokenId id) const;
  std::uint64_t total_tokens() const { return total_; }
  /// Number of training occurrences of ctx followed by any token.
  std::uint64_t context_count(std::span<const TokenId> ctx) const;
  std::uint64_t ngram_count(std::span<const TokenId> ctx, TokenId next) const;

  void save(const std::filesystem::path& path) const;
  static NgramLM load(const std::filesystem::path& path);

 private:
  using Context = std::vector<TokenId>;
  struct Successors {
    std::uint64_t total = 0;
    std::map<TokenId, std::uint64_t> next;
  };

  int order_ = 0;
  double alpha_ = 0.4;
  TokenId first_ordinary_ = 0;
  std::uint64_t vocab_fingerprint_ = 0;
  std::uint64_t total_ = 0;
  std::vector<std::uint64_t> unigram_;
  std::map<Context, Successors> contexts_;  // contexts of length 1..order-1
};

}  // namespace ssr
