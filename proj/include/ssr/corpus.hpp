#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace ssr {

using TokenId = std::int32_t;

/// A tokenized document or document window.
struct TokenSeq {
  std::vector<TokenId> ids;
  std::string doc_id;

  std::size_t size() const { return ids.size(); }
  bool operator==(const TokenSeq&) const = default;
};

/// Raw corpus document: one non-blank input line.
struct Document {
  std::string id;
  std::string text;
};

// Vocabulary with a fixed special-token prefix:
//   0 <pad>, 1 <unk>, 2 <bos>, 3 <eos>,
//   then mask sentinels M_1..M_n, span-open <s_1>..<s_n>, span-close </s_1>..</s_n>.
// Corpus tokens follow, most frequent first.
class Vocab {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kUnk = 1;
  static constexpr TokenId kBos = 2;
  static constexpr TokenId kEos = 3;
  static constexpr int kDefaultMaxSentinels = 40;

  explicit Vocab(int max_sentinels = kDefaultMaxSentinels);

  std::size_t size() const { return tokens_.size(); }
  int max_sentinels() const { return max_sentinels_; }
  TokenId num_specials() const { return 4 + 3 * max_sentinels_; }
  TokenId first_ordinary() const { return num_specials(); }

  // 1-based sentinel accessors.
  TokenId mask(int i) const;
  TokenId open(int i) const;
  TokenId close(int i) const;

  bool is_special(TokenId id) const { return id >= 0 && id < num_specials(); }
  bool is_sentinel(TokenId id) const { return id >= 4 && id < num_specials(); }
  bool is_mask(TokenId id) const { return id >= 4 && id < 4 + max_sentinels_; }
  bool is_open(TokenId id) const {
    return id >= 4 + max_sentinels_ && id < 4 + 2 * max_sentinels_;
  }
  bool is_close(TokenId id) const {
    return id >= 4 + 2 * max_sentinels_ && id < num_specials();
  }
  /// 1-based sentinel number of any sentinel id, 0 otherwise.
  int sentinel_index(TokenId id) const;
  bool valid(TokenId id) const { return id >= 0 && static_cast<std::size_t>(id) < size(); }

  const std::string& surface(TokenId id) const;
  std::uint64_t frequency(TokenId id) const { return freqs_.at(static_cast<std::size_t>(id)); }
  std::optional<TokenId> find(std::string_view surface) const;
  TokenId id_or_unk(std::string_view surface) const;

  /// Appends an ordinary token; throws if it collides with an existing surface.
  TokenId add(std::string surface, std::uint64_t frequency);

  /// "surface<TAB>frequency" per line, specials first with frequency 0.
  void save(const std::filesystem::path& path) const;
  static Vocab load(const std::filesystem::path& path);

  /// Stable hash of the ordered surface list.
  std::uint64_t fingerprint() const;

  bool operator==(const Vocab& o) const { return tokens_ == o.tokens_ && freqs_ == o.freqs_; }

 private:
  int max_sentinels_;
  std::vector<std::string> tokens_;
  std::vector<std::uint64_t> freqs_;
  std::unordered_map<std::string, TokenId> id_of_;
};

struct TokenizerOptions {
  bool lowercase = false;
};

struct VocabOptions {
  std::size_t max_size = 5000;
  std::uint64_t min_freq = 1;
  int max_sentinels = Vocab::kDefaultMaxSentinels;
  TokenizerOptions tokenizer;
};

/// Whitespace split with every ASCII punctuation mark as its own token.
std::vector<std::string> split_tokens(std::string_view text, const TokenizerOptions& opts = {});

bool valid_utf8(std::string_view text);

using TokenCounts = std::map<std::string, std::uint64_t>;
void count_tokens(std::string_view text, const TokenizerOptions& opts, TokenCounts& counts);
/// Associative merge of shard counts.
void merge_counts(TokenCounts& into, const TokenCounts& from);

Vocab build_vocab(std::span<const Document> corpus, const VocabOptions& opts);
Vocab vocab_from_counts(const TokenCounts& counts, const VocabOptions& opts);

TokenSeq tokenize(std::string_view text, const Vocab& vocab, const TokenizerOptions& opts = {},
                  std::string doc_id = {});
std::string detokenize(std::span<const TokenId> ids, const Vocab& vocab);
inline std::string detokenize(const TokenSeq& seq, const Vocab& vocab) {
  return detokenize(seq.ids, vocab);
}
/// Surface strings, one per id.
std::vector<std::string> surfaces(std::span<const TokenId> ids, const Vocab& vocab);

/// Splits a sequence longer than max_len into contiguous windows with ids "<doc>/w<k>".
std::vector<TokenSeq> split_windows(const TokenSeq& seq, std::size_t max_len);

/// Reads one document per non-blank line from a file or from every regular file
/// (sorted by name) in a directory. Ids are "d0000001", ... in reading order.
std::vector<Document> read_corpus(const std::filesystem::path& path);

std::vector<TokenSeq> tokenize_corpus(std::span<const Document> docs, const Vocab& vocab,
                                      const TokenizerOptions& opts, std::size_t max_seq_len);

}  // namespace ssr
