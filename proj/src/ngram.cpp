#include "ssr/ngram.hpp"

#include <algorithm>
#include <fstream>

#include "json.hpp"
#include "ssr/error.hpp"

namespace ssr {

NgramLM NgramLM::train(std::span<const TokenSeq> corpus, const Vocab& vocab, int order,
                       double alpha) {
  if (order < 1) throw Error("n-gram order must be at least 1");
  if (!(alpha > 0.0)) throw Error("backoff factor must be positive");
  if (corpus.empty()) throw Error("empty corpus");
  NgramLM lm;
  lm.order_ = order;
  lm.alpha_ = alpha;
  lm.first_ordinary_ = vocab.first_ordinary();
  lm.vocab_fingerprint_ = vocab.fingerprint();
  lm.unigram_.assign(vocab.size(), 0);

  std::vector<TokenId> padded;
  for (const auto& seq : corpus) {
    padded.assign(static_cast<std::size_t>(order - 1), Vocab::kBos);
    padded.insert(padded.end(), seq.ids.begin(), seq.ids.end());
    for (std::size_t i = static_cast<std::size_t>(order - 1); i < padded.size(); ++i) {
      const TokenId t = padded[i];
      if (!vocab.valid(t)) throw Error("invalid token id");
      ++lm.unigram_[static_cast<std::size_t>(t)];
      ++lm.total_;
      for (int k = 1; k < order; ++k) {
        Context ctx(padded.begin() + static_cast<std::ptrdiff_t>(i) - k,
                    padded.begin() + static_cast<std::ptrdiff_t>(i));
        auto& succ = lm.contexts_[std::move(ctx)];
        ++succ.total;
        ++succ.next[t];
      }
    }
  }
  return lm;
}

void NgramLM::merge(const NgramLM& other) {
  if (!trained()) {
    *this = other;
    return;
  }
  if (other.order_ != order_ || other.vocab_fingerprint_ != vocab_fingerprint_) {
    throw Error("cannot merge n-gram models of different order or vocabulary");
  }
  total_ += other.total_;
  for (std::size_t i = 0; i < unigram_.size(); ++i) unigram_[i] += other.unigram_[i];
  for (const auto& [ctx, succ] : other.contexts_) {
    auto& mine = contexts_[ctx];
    mine.total += succ.total;
    for (const auto& [t, c] : succ.next) mine.next[t] += c;
  }
}

bool NgramLM::emittable(TokenId id) const {
  return id == Vocab::kUnk ||
         (id >= first_ordinary_ && static_cast<std::size_t>(id) < unigram_.size());
}

std::vector<double> NgramLM::scores(std::span<const TokenId> context) const {
  if (!trained()) throw Error("generator not ready");
  const std::size_t v = unigram_.size();
  std::vector<double> out(v, 0.0);
  const auto max_k = std::min<std::size_t>(static_cast<std::size_t>(order_ - 1), context.size());
  // Left-pad short contexts with <bos>, mirroring training.
  Context full(static_cast<std::size_t>(order_ - 1) - max_k, Vocab::kBos);
  full.insert(full.end(), context.end() - static_cast<std::ptrdiff_t>(max_k), context.end());

  double factor = 1.0;
  for (std::size_t k = full.size(); k >= 1; --k) {
    Context ctx(full.end() - static_cast<std::ptrdiff_t>(k), full.end());
    auto it = contexts_.find(ctx);
    if (it != contexts_.end() && it->second.total > 0) {
      for (const auto& [t, c] : it->second.next) {
        if (emittable(t)) {
          out[static_cast<std::size_t>(t)] =
              factor * static_cast<double>(c) / static_cast<double>(it->second.total);
        }
      }
      return out;
    }
    factor *= alpha_;
  }
  std::size_t support = 0;
  for (std::size_t t = 0; t < v; ++t) support += emittable(static_cast<TokenId>(t)) ? 1 : 0;
  const double denom = static_cast<double>(total_ + support);
  for (std::size_t t = 0; t < v; ++t) {
    if (emittable(static_cast<TokenId>(t))) {
      out[t] = factor * static_cast<double>(unigram_[t] + 1) / denom;
    }
  }
  return out;
}

std::vector<double> NgramLM::distribution(std::span<const TokenId> context) const {
  auto s = scores(context);
  double total = 0.0;
  for (double x : s) total += x;
  for (double& x : s) x /= total;
  return s;
}

std::uint64_t NgramLM::unigram_count(TokenId id) const {
  return unigram_.at(static_cast<std::size_t>(id));
}

std::uint64_t NgramLM::context_count(std::span<const TokenId> ctx) const {
  if (ctx.empty()) return total_;
  auto it = contexts_.find(Context(ctx.begin(), ctx.end()));
  return it == contexts_.end() ? 0 : it->second.total;
}

std::uint64_t NgramLM::ngram_count(std::span<const TokenId> ctx, TokenId next) const {
  if (ctx.empty()) return unigram_count(next);
  auto it = contexts_.find(Context(ctx.begin(), ctx.end()));
  if (it == contexts_.end()) return 0;
  auto jt = it->second.next.find(next);
  return jt == it->second.next.end() ? 0 : jt->second;
}

void NgramLM::save(const std::filesystem::path& path) const {
  if (!trained()) throw Error("generator not ready");
  nlohmann::json j;
  j["kind"] = "ngram";
  j["order"] = order_;
  j["alpha"] = alpha_;
  j["first_ordinary"] = first_ordinary_;
  j["vocab_fingerprint"] = vocab_fingerprint_;
  j["total"] = total_;
  j["unigram"] = unigram_;
  auto& ctxs = j["contexts"] = nlohmann::json::array();
  for (const auto& [ctx, succ] : contexts_) {
    nlohmann::json next = nlohmann::json::array();
    for (const auto& [t, c] : succ.next) next.push_back({t, c});
    ctxs.push_back({{"ctx", ctx}, {"next", std::move(next)}});
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write n-gram model: " + path.string());
  out << j.dump() << '\n';
}

NgramLM NgramLM::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("missing input: " + path.string());
  NgramLM lm;
  try {
    const auto j = nlohmann::json::parse(in);
    if (j.at("kind") != "ngram") throw Error("not an n-gram model: " + path.string());
    lm.order_ = j.at("order").get<int>();
    lm.alpha_ = j.at("alpha").get<double>();
    lm.first_ordinary_ = j.at("first_ordinary").get<TokenId>();
    lm.vocab_fingerprint_ = j.at("vocab_fingerprint").get<std::uint64_t>();
    lm.total_ = j.at("total").get<std::uint64_t>();
    lm.unigram_ = j.at("unigram").get<std::vector<std::uint64_t>>();
    for (const auto& c : j.at("contexts")) {
      auto& succ = lm.contexts_[c.at("ctx").get<Context>()];
      for (const auto& tc : c.at("next")) {
        const auto n = tc.at(1).get<std::uint64_t>();
        succ.next[tc.at(0).get<TokenId>()] = n;
        succ.total += n;
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error("malformed n-gram model " + path.string() + ": " + e.what());
  }
  return lm;
}

}  // namespace ssr
