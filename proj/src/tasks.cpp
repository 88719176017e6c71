#include "ssr/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "json.hpp"
#include "ssr/error.hpp"

namespace ssr {

std::string to_string(EditType t) {
  switch (t) {
    case EditType::kInsert: return "insert";
    case EditType::kDelete: return "delete";
    case EditType::kSubstitute: return "substitute";
  }
  return "?";
}

EditSet align_edits(std::span<const TokenId> a, std::span<const TokenId> b) {
  const std::size_t n = a.size();
  const std::size_t m = b.size();
  // d[i][j]: distance between a[i..] and b[j..].
  std::vector<std::uint32_t> d((n + 1) * (m + 1));
  auto at = [&](std::size_t i, std::size_t j) -> std::uint32_t& { return d[i * (m + 1) + j]; };
  for (std::size_t i = 0; i <= n; ++i) at(i, m) = static_cast<std::uint32_t>(n - i);
  for (std::size_t j = 0; j <= m; ++j) at(n, j) = static_cast<std::uint32_t>(m - j);
  for (std::size_t i = n; i-- > 0;) {
    for (std::size_t j = m; j-- > 0;) {
      const std::uint32_t diag = at(i + 1, j + 1) + (a[i] == b[j] ? 0 : 1);
      at(i, j) = std::min({diag, at(i + 1, j) + 1, at(i, j + 1) + 1});
    }
  }
  EditSet edits;
  std::size_t i = 0, j = 0;
  while (i < n || j < m) {
    const auto cur = at(i, j);
    if (i < n && j < m && a[i] == b[j] && cur == at(i + 1, j + 1)) {
      ++i, ++j;
    } else if (i < n && j < m && cur == at(i + 1, j + 1) + 1) {
      edits.push_back({i, EditType::kSubstitute, {b[j]}});
      ++i, ++j;
    } else if (i < n && cur == at(i + 1, j) + 1) {
      edits.push_back({i, EditType::kDelete, {a[i]}});
      ++i;
    } else {
      edits.push_back({i, EditType::kInsert, {b[j]}});
      ++j;
    }
  }
  return edits;
}

std::vector<TokenId> apply_edits(std::span<const TokenId> source, const EditSet& edits) {
  std::vector<TokenId> out;
  std::size_t e = 0;
  for (std::size_t pos = 0; pos <= source.size(); ++pos) {
    bool consumed = false;
    for (; e < edits.size() && edits[e].position == pos; ++e) {
      const auto& ed = edits[e];
      if (ed.type == EditType::kInsert) {
        out.insert(out.end(), ed.tokens.begin(), ed.tokens.end());
        continue;
      }
      if (pos == source.size() || consumed) throw Error("edit script does not fit the source");
      consumed = true;
      if (ed.type == EditType::kSubstitute) out.insert(out.end(), ed.tokens.begin(), ed.tokens.end());
    }
    if (e < edits.size() && edits[e].position < pos) throw Error("edit script is not ordered");
    if (!consumed && pos < source.size()) out.push_back(source[pos]);
  }
  if (e != edits.size()) throw Error("edit script does not fit the source");
  return out;
}

double f_beta(double p, double r, double beta) {
  const double b2 = beta * beta;
  const double denom = b2 * p + r;
  return denom > 0.0 ? (1.0 + b2) * p * r / denom : 0.0;
}

EditCounts& EditCounts::operator+=(const EditCounts& o) {
  matched += o.matched;
  hyp += o.hyp;
  ref += o.ref;
  return *this;
}

EditCounts count_edit_matches(const EditSet& hyp, const EditSet& ref) {
  std::map<Edit, std::size_t> pool;
  for (const auto& e : ref) ++pool[e];
  EditCounts c{0, hyp.size(), ref.size()};
  for (const auto& e : hyp) {
    auto it = pool.find(e);
    if (it != pool.end() && it->second > 0) {
      --it->second;
      ++c.matched;
    }
  }
  return c;
}

PRF prf_from_counts(const EditCounts& c, double beta) {
  if (c.hyp == 0 && c.ref == 0) return {1.0, 1.0, 1.0};
  PRF out;
  out.p = c.hyp ? static_cast<double>(c.matched) / static_cast<double>(c.hyp) : 0.0;
  out.r = c.ref ? static_cast<double>(c.matched) / static_cast<double>(c.ref) : 0.0;
  out.f = f_beta(out.p, out.r, beta);
  return out;
}

PRF edit_f_beta(const EditSet& hyp, const EditSet& ref, double beta) {
  return prf_from_counts(count_edit_matches(hyp, ref), beta);
}

std::size_t lcs_length(std::span<const TokenId> a, std::span<const TokenId> b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

PRF rouge_l(std::span<const TokenId> hyp, std::span<const TokenId> ref) {
  if (hyp.empty() && ref.empty()) return {1.0, 1.0, 1.0};
  if (hyp.empty() || ref.empty()) return {0.0, 0.0, 0.0};
  const double lcs = static_cast<double>(lcs_length(hyp, ref));
  PRF out{lcs / static_cast<double>(hyp.size()), lcs / static_cast<double>(ref.size()), 0.0};
  out.f = f_beta(out.p, out.r, 1.0);
  return out;
}

namespace {

std::string document_of(const std::string& id) {
  const auto pos = id.rfind("/w");
  return pos == std::string::npos ? id : id.substr(0, pos);
}

}  // namespace

TaskSplits make_synth_gec(std::span<const TokenSeq> corpus, const NoiseConfig& noise, Rng& rng,
                          const SplitRatios& ratios, const Vocab& vocab) {
  if (ratios.train < 0 || ratios.dev < 0 || ratios.test < 0 ||
      std::abs(ratios.train + ratios.dev + ratios.test - 1.0) > 1e-9) {
    throw Error("split ratios must be non-negative and sum to 1");
  }
  std::map<std::string, std::vector<std::size_t>> by_doc;
  for (std::size_t i = 0; i < corpus.size(); ++i) by_doc[document_of(corpus[i].doc_id)].push_back(i);
  std::vector<const std::vector<std::size_t>*> docs;
  for (const auto& [id, members] : by_doc) docs.push_back(&members);
  // Fisher-Yates with the project generator.
  for (std::size_t i = docs.size(); i > 1; --i) std::swap(docs[i - 1], docs[rng.below(i)]);

  const auto n = docs.size();
  const auto n_train = static_cast<std::size_t>(std::llround(ratios.train * static_cast<double>(n)));
  const auto n_dev = std::min(n - n_train, static_cast<std::size_t>(std::llround(ratios.dev * static_cast<double>(n))));
  TaskSplits out;
  for (std::size_t d = 0; d < n; ++d) {
    auto& split = d < n_train ? out.train : d < n_train + n_dev ? out.dev : out.test;
    for (auto idx : *docs[d]) {
      const auto& clean = corpus[idx];
      if (clean.ids.empty()) continue;
      auto noisy = rule_noise(clean.ids, noise, rng, vocab);
      if (noisy.imperfect_ids.empty()) continue;
      split.push_back(build_finetune_example({noisy.imperfect_ids, clean.doc_id}, clean, vocab, clean.doc_id));
    }
  }
  auto by_id = [](const SSRExample& a, const SSRExample& b) { return a.id < b.id; };
  std::sort(out.train.begin(), out.train.end(), by_id);
  std::sort(out.dev.begin(), out.dev.end(), by_id);
  std::sort(out.test.begin(), out.test.end(), by_id);
  return out;
}

MetricSet score_hypotheses(std::span<const SSRExample> examples,
                           std::span<const std::vector<TokenId>> hypotheses, const Vocab& vocab) {
  if (examples.size() != hypotheses.size()) throw Error("hypothesis count mismatch");
  MetricSet m;
  if (examples.empty()) return m;
  EditCounts counts;
  std::size_t exact = 0;
  double rouge = 0.0;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto src = strip_sentinels(examples[i].source_ids, vocab);
    const auto ref = strip_sentinels(examples[i].target_ids, vocab);
    const auto hyp = strip_sentinels(hypotheses[i], vocab);
    if (hyp == ref) ++exact;
    counts += count_edit_matches(align_edits(src, hyp), align_edits(src, ref));
    rouge += rouge_l(hyp, ref).f;
  }
  const double n = static_cast<double>(examples.size());
  const auto prf = prf_from_counts(counts, 0.5);
  m.exact_match = static_cast<double>(exact) / n;
  m.p = prf.p;
  m.r = prf.r;
  m.f05 = prf.f;
  m.rouge_l = rouge / n;
  return m;
}

EvalReport evaluate(const ModelParams& params, std::span<const SSRExample> test, const Vocab& vocab,
                    std::string checkpoint_name, std::string task) {
  std::vector<std::vector<TokenId>> hyps, copies;
  for (const auto& ex : test) {
    const auto limit = std::min<std::size_t>(static_cast<std::size_t>(params.config.max_decode_len),
                                             ex.source_ids.size() + 8);
    hyps.push_back(decode_greedy(params, ex.source_ids, {limit}));
    copies.push_back(ex.source_ids);
  }
  EvalReport r;
  r.checkpoint = std::move(checkpoint_name);
  r.task = std::move(task);
  r.n_examples = test.size();
  r.metrics = score_hypotheses(test, hyps, vocab);
  r.copy_baseline = score_hypotheses(test, copies, vocab);
  return r;
}

std::string EvalReport::to_json() const {
  auto metric = [](const MetricSet& m) {
    return nlohmann::ordered_json{{"exact_match", m.exact_match}, {"p", m.p}, {"r", m.r},
                                  {"f05", m.f05}, {"rouge_l", m.rouge_l}};
  };
  nlohmann::ordered_json j;
  j["checkpoint"] = checkpoint;
  j["task"] = task;
  j["n_examples"] = n_examples;
  j["metrics"] = metric(metrics);
  j["copy_baseline"] = metric(copy_baseline);
  return j.dump(2);
}

}  // namespace ssr
