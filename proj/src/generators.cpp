#include "ssr/generators.hpp"

#include <algorithm>
#include <cmath>

#include "ssr/error.hpp"
#include "ssr/nucleus.hpp"

namespace ssr {

GeneratorOutput generate_spans(SpanGenerator& gen, const SpanMask& mask, Rng& rng,
                               const Vocab& vocab) {
  if (!gen.ready()) throw Error("generator not ready");
  auto out = gen.fill(mask, rng);
  mark_exact_copies(out, mask);
  validate_output(out, mask, vocab);
  return out;
}

void validate_output(const GeneratorOutput& out, const SpanMask& mask, const Vocab& vocab) {
  if (out.spans.size() != mask.spans.size()) {
    throw Error("generator output has " + std::to_string(out.spans.size()) + " spans, mask has " +
                std::to_string(mask.spans.size()));
  }
  for (const auto& s : out.spans) {
    if (s.nll.size() != s.imperfect_ids.size()) throw Error("nll not aligned with span tokens");
    for (double x : s.nll) {
      if (!std::isfinite(x) || x < 0.0) throw Error("nll must be finite and non-negative");
    }
    for (auto id : s.imperfect_ids) {
      if (!vocab.valid(id)) throw Error("invalid token id");
      if (vocab.is_sentinel(id)) throw Error("generator emitted a sentinel token");
    }
  }
}

void mark_exact_copies(GeneratorOutput& out, const SpanMask& mask) {
  for (std::size_t i = 0; i < out.spans.size() && i < mask.spans.size(); ++i) {
    out.spans[i].is_exact_copy = out.spans[i].imperfect_ids == mask.spans[i].gt_ids;
  }
}

GeneratorOutput IdentityGenerator::fill(const SpanMask& mask, Rng&) {
  GeneratorOutput out;
  for (const auto& s : mask.spans) {
    out.spans.push_back({s.gt_ids, std::vector<double>(s.gt_ids.size(), 0.0), true});
  }
  return out;
}

ScriptedGenerator::ScriptedGenerator(std::vector<std::vector<TokenId>> spans,
                                     std::vector<std::vector<double>> probs)
    : spans_(std::move(spans)), probs_(std::move(probs)) {
  if (spans_.size() != probs_.size()) throw Error("scripted spans and probabilities differ in count");
  for (std::size_t i = 0; i < spans_.size(); ++i) {
    if (spans_[i].size() != probs_[i].size()) throw Error("scripted probabilities misaligned");
    for (double p : probs_[i]) {
      if (!(p > 0.0 && p <= 1.0)) throw Error("scripted probability outside (0, 1]");
    }
  }
}

GeneratorOutput ScriptedGenerator::fill(const SpanMask& mask, Rng&) {
  if (mask.spans.size() != spans_.size()) throw Error("span-count mismatch");
  GeneratorOutput out;
  for (std::size_t i = 0; i < spans_.size(); ++i) {
    SpanFill f;
    f.imperfect_ids = spans_[i];
    for (double p : probs_[i]) f.nll.push_back(-std::log(p));
    out.spans.push_back(std::move(f));
  }
  return out;
}

GeneratorOutput NgramGenerator::fill(const SpanMask& mask, Rng& rng) {
  if (!lm_->trained()) throw Error("generator not ready");
  GeneratorOutput out;
  const auto& ids = mask.seq.ids;
  std::vector<TokenId> prefix;
  std::size_t pos = 0;
  for (const auto& s : mask.spans) {
    prefix.insert(prefix.end(), ids.begin() + static_cast<std::ptrdiff_t>(pos),
                  ids.begin() + static_cast<std::ptrdiff_t>(s.start));
    const auto len = std::min<std::uint64_t>(poisson_sample(rng, cfg_.length_lambda), cfg_.max_gen_len);
    SpanFill f;
    for (std::uint64_t k = 0; k < len; ++k) {
      const auto dist = lm_->distribution(prefix);
      const auto draw = nucleus_sample(dist, cfg_.top_p, rng);
      const auto tok = static_cast<TokenId>(draw.id);
      f.imperfect_ids.push_back(tok);
      f.nll.push_back(-std::log(draw.prob));
      prefix.push_back(tok);
    }
    out.spans.push_back(std::move(f));
    pos = s.start + s.length;
  }
  return out;
}

SpanFill rule_noise(std::span<const TokenId> gt_ids, const NoiseConfig& cfg, Rng& rng,
                    const Vocab& vocab, NoiseStats* stats) {
  NoiseStats local;
  std::vector<TokenId> out;
  out.reserve(gt_ids.size() + 4);
  const auto first = static_cast<std::uint64_t>(vocab.first_ordinary());
  const auto n_ordinary = vocab.size() - first;
  for (TokenId t : gt_ids) {
    if (cfg.p_delete > 0.0 && rng.bernoulli(cfg.p_delete)) {
      ++local.deleted;
      continue;
    }
    if (cfg.p_replace > 0.0 && n_ordinary > 0 && rng.bernoulli(cfg.p_replace)) {
      t = static_cast<TokenId>(first + rng.below(n_ordinary));
      ++local.replaced;
    }
    out.push_back(t);
    if (cfg.p_duplicate > 0.0 && rng.bernoulli(cfg.p_duplicate)) {
      out.push_back(t);
      ++local.duplicated;
    }
  }
  if (cfg.p_shuffle > 0.0) {
    for (std::size_t i = 0; i + 1 < out.size(); ++i) {
      if (rng.bernoulli(cfg.p_shuffle)) {
        std::swap(out[i], out[i + 1]);
        ++local.swapped;
        ++i;
      }
    }
  }
  SpanFill f;
  const double pseudo =
      static_cast<double>(local.edits()) / static_cast<double>(std::max<std::size_t>(1, out.size()));
  f.nll.assign(out.size(), pseudo);
  f.is_exact_copy = std::equal(out.begin(), out.end(), gt_ids.begin(), gt_ids.end());
  f.imperfect_ids = std::move(out);
  if (stats) *stats = local;
  return f;
}

GeneratorOutput RuleNoiseGenerator::fill(const SpanMask& mask, Rng& rng) {
  GeneratorOutput out;
  for (const auto& s : mask.spans) out.spans.push_back(rule_noise(s.gt_ids, cfg_, rng, *vocab_));
  return out;
}

}  // namespace ssr
