#include "ssr/masking.hpp"

#include <algorithm>
#include <cmath>

#include "ssr/error.hpp"

namespace ssr {

std::uint64_t poisson_sample(Rng& rng, double lambda) {
  if (!(lambda > 0.0) || !std::isfinite(lambda)) throw Error("poisson rate must be positive");
  if (lambda > 30.0) {
    // Sum of two independent Poisson(lambda/2) draws; keeps exp(-lambda) representable.
    return poisson_sample(rng, lambda / 2) + poisson_sample(rng, lambda / 2);
  }
  const double limit = std::exp(-lambda);
  std::uint64_t k = 0;
  double p = rng.uniform();
  while (p > limit) {
    ++k;
    p *= rng.uniform();
  }
  return k;
}

namespace {

// Legal when at least one unmasked token separates the candidate from every span.
bool legal(const std::vector<Span>& spans, std::size_t start, std::size_t len) {
  for (const auto& s : spans) {
    const std::size_t end = s.start + s.length;
    if (!(start + len + 1 <= s.start || end + 1 <= start)) return false;
  }
  return true;
}

}  // namespace

SpanMask sample_spans(const TokenSeq& seq, Rng& rng, const MaskingConfig& cfg,
                      std::vector<std::uint64_t>* raw_lengths) {
  const std::size_t n = seq.size();
  if (n < 2) throw Error("sequence too short");
  if (cfg.budget < 0.0 || cfg.budget > 1.0) throw Error("masking budget must lie in [0, 1]");

  SpanMask mask;
  mask.seq = seq;
  const double target = cfg.budget * static_cast<double>(n);
  const auto cap = static_cast<std::size_t>(std::ceil(target - 1e-9));
  std::size_t used = 0;  // masked tokens plus one unit per insertion
  std::size_t insertions = 0;
  std::vector<std::size_t> starts;

  while (static_cast<double>(used) < target - 1e-9 && mask.spans.size() < cfg.max_spans) {
    bool placed = false;
    for (int attempt = 0; attempt < cfg.max_attempts && !placed; ++attempt) {
      const std::uint64_t raw = poisson_sample(rng, cfg.lambda);
      if (raw_lengths) raw_lengths->push_back(raw);
      std::size_t len = std::min<std::uint64_t>(raw, cfg.max_span_len);
      len = std::min(len, cap - used);
      if (len == 0 && static_cast<double>(insertions + 1) >
                          cfg.max_insertion_share * static_cast<double>(mask.spans.size() + 1)) {
        continue;
      }
      starts.clear();
      const std::size_t last = len == 0 ? n : n - std::min(n, len);
      if (len > n) continue;
      for (std::size_t s = 0; s <= last; ++s) {
        if (legal(mask.spans, s, len)) starts.push_back(s);
      }
      if (starts.empty()) continue;
      const std::size_t start = starts[rng.below(starts.size())];
      Span span;
      span.start = start;
      span.length = len;
      span.gt_ids.assign(seq.ids.begin() + static_cast<std::ptrdiff_t>(start),
                         seq.ids.begin() + static_cast<std::ptrdiff_t>(start + len));
      auto pos = std::lower_bound(mask.spans.begin(), mask.spans.end(), start,
                                  [](const Span& a, std::size_t s) { return a.start < s; });
      mask.spans.insert(pos, std::move(span));
      used += std::max<std::size_t>(len, 1);
      if (len == 0) ++insertions;
      placed = true;
    }
    if (!placed) break;
  }
  for (std::size_t i = 0; i < mask.spans.size(); ++i) mask.spans[i].index = static_cast<int>(i + 1);
  return mask;
}

SpanMask sample_spans(const TokenSeq& seq, std::uint64_t global_seed, const MaskingConfig& cfg) {
  Rng rng(global_seed, "mask:" + seq.doc_id);
  return sample_spans(seq, rng, cfg);
}

std::size_t masked_tokens(const SpanMask& mask) {
  std::size_t total = 0;
  for (const auto& s : mask.spans) total += s.length;
  return total;
}

void validate_mask(const SpanMask& mask) {
  const std::size_t n = mask.seq.size();
  for (std::size_t i = 0; i < mask.spans.size(); ++i) {
    const auto& s = mask.spans[i];
    if (s.index != static_cast<int>(i + 1)) throw Error("span sentinel numbering out of order");
    if (s.gt_ids.size() != s.length) throw Error("span length disagrees with ground truth");
    if (s.start + s.length > n) throw Error("span exceeds sequence");
    if (!std::equal(s.gt_ids.begin(), s.gt_ids.end(),
                    mask.seq.ids.begin() + static_cast<std::ptrdiff_t>(s.start))) {
      throw Error("span ground truth disagrees with sequence");
    }
    if (i > 0) {
      const auto& p = mask.spans[i - 1];
      if (p.start + p.length + 1 > s.start) throw Error("spans overlap or touch");
    }
  }
}

InfillPair apply_mask(const SpanMask& mask, const Vocab& vocab) {
  if (static_cast<int>(mask.spans.size()) > vocab.max_sentinels()) throw Error("too many spans");
  InfillPair out;
  out.source.doc_id = mask.seq.doc_id;
  out.target.doc_id = mask.seq.doc_id;
  const auto& ids = mask.seq.ids;
  std::size_t pos = 0;
  for (const auto& s : mask.spans) {
    out.source.ids.insert(out.source.ids.end(), ids.begin() + static_cast<std::ptrdiff_t>(pos),
                          ids.begin() + static_cast<std::ptrdiff_t>(s.start));
    out.source.ids.push_back(vocab.mask(s.index));
    out.target.ids.push_back(vocab.mask(s.index));
    out.target.ids.insert(out.target.ids.end(), s.gt_ids.begin(), s.gt_ids.end());
    pos = s.start + s.length;
  }
  out.source.ids.insert(out.source.ids.end(), ids.begin() + static_cast<std::ptrdiff_t>(pos),
                        ids.end());
  return out;
}

}  // namespace ssr
