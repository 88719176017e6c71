#include "ssr/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "ssr/error.hpp"
#include "ssr/rng.hpp"

namespace ssr {

namespace {

bool is_punct(unsigned char c) { return c < 0x80 && std::ispunct(c); }
bool is_space(unsigned char c) { return c < 0x80 && std::isspace(c); }

std::string special_surface(TokenId id, int max_sentinels) {
  switch (id) {
    case Vocab::kPad: return "<pad>";
    case Vocab::kUnk: return "<unk>";
    case Vocab::kBos: return "<bos>";
    case Vocab::kEos: return "<eos>";
    default: break;
  }
  const int k = id - 4;
  const int family = k / max_sentinels;
  const int index = k % max_sentinels + 1;
  switch (family) {
    case 0: return "M_" + std::to_string(index);
    case 1: return "<s_" + std::to_string(index) + ">";
    default: return "</s_" + std::to_string(index) + ">";
  }
}

}  // namespace

Vocab::Vocab(int max_sentinels) : max_sentinels_(max_sentinels) {
  if (max_sentinels < 1) throw Error("max sentinel count must be positive");
  const TokenId n = num_specials();
  tokens_.reserve(static_cast<std::size_t>(n));
  for (TokenId id = 0; id < n; ++id) {
    tokens_.push_back(special_surface(id, max_sentinels));
    freqs_.push_back(0);
    id_of_.emplace(tokens_.back(), id);
  }
}

TokenId Vocab::mask(int i) const {
  if (i < 1 || i > max_sentinels_) throw Error("too many spans");
  return 4 + (i - 1);
}
TokenId Vocab::open(int i) const {
  if (i < 1 || i > max_sentinels_) throw Error("too many spans");
  return 4 + max_sentinels_ + (i - 1);
}
TokenId Vocab::close(int i) const {
  if (i < 1 || i > max_sentinels_) throw Error("too many spans");
  return 4 + 2 * max_sentinels_ + (i - 1);
}

int Vocab::sentinel_index(TokenId id) const {
  if (!is_sentinel(id)) return 0;
  return (id - 4) % max_sentinels_ + 1;
}

const std::string& Vocab::surface(TokenId id) const {
  if (!valid(id)) throw Error("invalid token id");
  return tokens_[static_cast<std::size_t>(id)];
}

std::optional<TokenId> Vocab::find(std::string_view s) const {
  auto it = id_of_.find(std::string(s));
  if (it == id_of_.end()) return std::nullopt;
  return it->second;
}

TokenId Vocab::id_or_unk(std::string_view s) const {
  auto id = find(s);
  return id && !is_special(*id) ? *id : kUnk;
}

TokenId Vocab::add(std::string s, std::uint64_t frequency) {
  if (id_of_.contains(s)) throw Error("duplicate vocabulary entry: " + s);
  const auto id = static_cast<TokenId>(tokens_.size());
  id_of_.emplace(s, id);
  tokens_.push_back(std::move(s));
  freqs_.push_back(frequency);
  return id;
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write vocab: " + path.string());
  for (std::size_t i = 0; i < tokens_.size(); ++i) out << tokens_[i] << '\t' << freqs_[i] << '\n';
  if (!out) throw Error("cannot write vocab: " + path.string());
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read vocab: " + path.string());
  std::vector<std::pair<std::string, std::uint64_t>> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto tab = line.rfind('\t');
    if (tab == std::string::npos) {
      throw Error("malformed vocab line " + std::to_string(lineno) + ": " + path.string());
    }
    std::uint64_t f = 0;
    try {
      f = std::stoull(line.substr(tab + 1));
    } catch (const std::exception&) {
      throw Error("malformed vocab line " + std::to_string(lineno) + ": " + path.string());
    }
    rows.emplace_back(line.substr(0, tab), f);
  }
  int n_mask = 0;
  while (4 + n_mask < static_cast<int>(rows.size()) && rows[4 + n_mask].first.starts_with("M_")) {
    ++n_mask;
  }
  if (n_mask == 0) throw Error("vocab file lacks special tokens: " + path.string());
  Vocab v(n_mask);
  if (rows.size() < v.size()) throw Error("vocab file lacks special tokens: " + path.string());
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (rows[i].first != v.tokens_[i]) {
      throw Error("vocab special token mismatch at line " + std::to_string(i + 1));
    }
  }
  for (std::size_t i = v.size(); i < rows.size(); ++i) v.add(rows[i].first, rows[i].second);
  return v;
}

std::uint64_t Vocab::fingerprint() const {
  std::uint64_t h = fnv1a64("vocab");
  for (const auto& t : tokens_) {
    h = fnv1a64(t, h);
    h = fnv1a64(std::string_view("\0", 1), h);
  }
  return h;
}

std::vector<std::string> split_tokens(std::string_view text, const TokenizerOptions& opts) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (is_space(c)) {
      flush();
    } else if (is_punct(c)) {
      flush();
      out.emplace_back(1, ch);
    } else {
      cur.push_back(opts.lowercase && c < 0x80 ? static_cast<char>(std::tolower(c)) : ch);
    }
  }
  flush();
  return out;
}

bool valid_utf8(std::string_view text) {
  std::size_t i = 0;
  while (i < text.size()) {
    const auto c = static_cast<unsigned char>(text[i]);
    int extra;
    std::uint32_t cp;
    if (c < 0x80) {
      ++i;
      continue;
    } else if ((c & 0xE0) == 0xC0) {
      extra = 1;
      cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      extra = 2;
      cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      extra = 3;
      cp = c & 0x07;
    } else {
      return false;
    }
    if (i + static_cast<std::size_t>(extra) >= text.size()) return false;
    for (int k = 1; k <= extra; ++k) {
      const auto cc = static_cast<unsigned char>(text[i + static_cast<std::size_t>(k)]);
      if ((cc & 0xC0) != 0x80) return false;
      cp = (cp << 6) | (cc & 0x3F);
    }
    // Overlong encodings, surrogates and out-of-range code points.
    if ((extra == 1 && cp < 0x80) || (extra == 2 && cp < 0x800) || (extra == 3 && cp < 0x10000) ||
        cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) {
      return false;
    }
    i += static_cast<std::size_t>(extra) + 1;
  }
  return true;
}

void count_tokens(std::string_view text, const TokenizerOptions& opts, TokenCounts& counts) {
  for (auto& t : split_tokens(text, opts)) ++counts[std::move(t)];
}

void merge_counts(TokenCounts& into, const TokenCounts& from) {
  for (const auto& [tok, n] : from) into[tok] += n;
}

Vocab vocab_from_counts(const TokenCounts& counts, const VocabOptions& opts) {
  Vocab vocab(opts.max_sentinels);
  if (opts.max_size <= vocab.size()) {
    throw Error("max vocabulary size must exceed the " + std::to_string(vocab.size()) +
                " special tokens");
  }
  std::vector<std::pair<std::string, std::uint64_t>> ranked;
  for (const auto& [tok, n] : counts) {
    if (n >= opts.min_freq && !vocab.find(tok)) ranked.emplace_back(tok, n);
  }
  // Frequency descending, ties lexicographic.
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  const std::size_t room = opts.max_size - vocab.size();
  if (ranked.size() > room) ranked.resize(room);
  for (auto& [tok, n] : ranked) vocab.add(std::move(tok), n);
  return vocab;
}

Vocab build_vocab(std::span<const Document> corpus, const VocabOptions& opts) {
  if (corpus.empty()) throw Error("empty corpus");
  TokenCounts counts;
  for (const auto& doc : corpus) count_tokens(doc.text, opts.tokenizer, counts);
  if (counts.empty()) throw Error("empty corpus");
  return vocab_from_counts(counts, opts);
}

TokenSeq tokenize(std::string_view text, const Vocab& vocab, const TokenizerOptions& opts,
                  std::string doc_id) {
  TokenSeq seq;
  seq.doc_id = std::move(doc_id);
  for (const auto& t : split_tokens(text, opts)) seq.ids.push_back(vocab.id_or_unk(t));
  return seq;
}

std::string detokenize(std::span<const TokenId> ids, const Vocab& vocab) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out.push_back(' ');
    out += vocab.surface(ids[i]);
  }
  return out;
}

std::vector<std::string> surfaces(std::span<const TokenId> ids, const Vocab& vocab) {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (auto id : ids) out.push_back(vocab.surface(id));
  return out;
}

std::vector<TokenSeq> split_windows(const TokenSeq& seq, std::size_t max_len) {
  if (max_len == 0) throw Error("max_seq_len must be positive");
  if (seq.size() <= max_len) return {seq};
  std::vector<TokenSeq> out;
  for (std::size_t start = 0, k = 0; start < seq.size(); start += max_len, ++k) {
    const auto end = std::min(seq.size(), start + max_len);
    TokenSeq w;
    w.doc_id = seq.doc_id + "/w" + std::to_string(k);
    w.ids.assign(seq.ids.begin() + static_cast<std::ptrdiff_t>(start),
                 seq.ids.begin() + static_cast<std::ptrdiff_t>(end));
    out.push_back(std::move(w));
  }
  return out;
}

std::vector<Document> read_corpus(const std::filesystem::path& path) {
  namespace fs = std::filesystem;
  std::vector<fs::path> files;
  if (fs::is_directory(path)) {
    for (const auto& e : fs::directory_iterator(path)) {
      if (e.is_regular_file()) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
  } else if (fs::is_regular_file(path)) {
    files.push_back(path);
  } else {
    throw Error("missing input: " + path.string());
  }
  std::vector<Document> docs;
  for (const auto& f : files) {
    std::ifstream in(f, std::ios::binary);
    if (!in) throw Error("cannot read corpus: " + f.string());
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.find_first_not_of(" \t\v\f") == std::string::npos) continue;
      if (!valid_utf8(line)) {
        throw Error("invalid UTF-8 at " + f.string() + ":" + std::to_string(lineno));
      }
      char id[16];
      std::snprintf(id, sizeof id, "d%07zu", docs.size() + 1);
      docs.push_back({id, std::move(line)});
    }
  }
  return docs;
}

std::vector<TokenSeq> tokenize_corpus(std::span<const Document> docs, const Vocab& vocab,
                                      const TokenizerOptions& opts, std::size_t max_seq_len) {
  std::vector<TokenSeq> out;
  for (const auto& d : docs) {
    auto seq = tokenize(d.text, vocab, opts, d.id);
    if (seq.ids.empty()) continue;
    for (auto& w : split_windows(seq, max_seq_len)) out.push_back(std::move(w));
  }
  return out;
}

}  // namespace ssr
