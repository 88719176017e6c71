#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ssr/corpus.hpp"
#include "ssr/generators.hpp"
#include "ssr/masking.hpp"

namespace ssr {

enum class Mode { kSsr, kInfill, kDistill, kDenoise, kFinetune };

std::string to_string(Mode m);
Mode parse_mode(std::string_view s);

struct SpanRecord {
  int index = 0;
  std::vector<TokenId> gt;
  std::vector<TokenId> imp;
  std::vector<double> nll;

  bool operator==(const SpanRecord&) const = default;
};

/// One training pair plus the metadata curriculum scheduling needs.
struct SSRExample {
  std::string id;
  Mode mode = Mode::kSsr;
  std::vector<TokenId> source_ids;
  std::vector<TokenId> target_ids;
  std::vector<SpanRecord> spans;
  double difficulty = 0.0;
  std::optional<int> bucket;

  bool operator==(const SSRExample&) const = default;
};

/// Source: "... <s_i> imperfect </s_i> ..."; target: "<s_1> gt_1 <s_2> gt_2 ...".
SSRExample build_ssr_example(const SpanMask& mask, const GeneratorOutput& gen, const Vocab& vocab);
/// Text infilling pair; difficulty 0.
SSRExample build_infill_example(const SpanMask& mask, const Vocab& vocab);
/// Infilling source with the generator's spans as targets.
SSRExample build_distill_example(const SpanMask& mask, const GeneratorOutput& gen,
                                 const Vocab& vocab);
/// Rule-noised full sequence as source, original as target.
SSRExample build_denoise_example(const TokenSeq& seq, const NoiseConfig& cfg, Rng& rng,
                                 const Vocab& vocab);
/// "<s_1> src </s_1>" -> "<s_1> tgt".
SSRExample build_finetune_example(const TokenSeq& src, const TokenSeq& tgt, const Vocab& vocab,
                                  std::string id = {});
/// Marks seq[start, start+length) for rewriting: "... <s_1> region </s_1> ..." -> "<s_1> replacement".
SSRExample build_constrained_example(const TokenSeq& seq, std::size_t start, std::size_t length,
                                     std::span<const TokenId> replacement, const Vocab& vocab,
                                     std::string id = {});

/// Throws ssr::Error when a mode-specific invariant fails (delimiter nesting,
/// sentinel families, target layout, difficulty sum).
void validate_example(const SSRExample& ex, const Vocab& vocab);

/// Sum of every span nll.
double total_nll(const SSRExample& ex);

/// Drops every sentinel and special id.
std::vector<TokenId> strip_sentinels(std::span<const TokenId> ids, const Vocab& vocab);

struct BuildOptions {
  Mode mode = Mode::kSsr;
  MaskingConfig masking;
  NoiseConfig noise;
  std::uint64_t seed = 0;
  bool drop_exact_copies = false;
  std::size_t threads = 1;
};

/// Builds one example per document (documents shorter than two tokens are
/// skipped). Per-document generators are seeded from (seed, doc_id), so the
/// output is independent of thread count; the result is sorted by id.
/// `gen` is required for ssr and distill modes.
std::vector<SSRExample> build_dataset(std::span<const TokenSeq> docs, const Vocab& vocab,
                                      SpanGenerator* gen, const BuildOptions& opts);

// Dataset JSONL: one record per line,
// {"id","mode","source","target","source_text","target_text",
//  "spans":[{"index","gt","imp","nll"}],"difficulty","bucket"}.
std::string example_to_json(const SSRExample& ex, const Vocab& vocab);
SSRExample example_from_json(std::string_view line);

class DatasetWriter {
 public:
  DatasetWriter(const std::filesystem::path& path, const Vocab& vocab);
  void write(const SSRExample& ex);
  std::size_t count() const { return count_; }
  void close();

 private:
  std::filesystem::path path_;
  std::ofstream out_;
  const Vocab* vocab_;
  std::size_t count_ = 0;
};

// Streams records one at a time; malformed lines raise an error naming the line number.
class DatasetReader {
 public:
  explicit DatasetReader(const std::filesystem::path& path);
  bool next(SSRExample& ex);
  std::size_t line() const { return line_; }

 private:
  std::filesystem::path path_;
  std::ifstream in_;
  std::size_t line_ = 0;
};

std::size_t write_dataset(std::span<const SSRExample> examples, const std::filesystem::path& path,
                          const Vocab& vocab);
std::vector<SSRExample> read_dataset(const std::filesystem::path& path);

}  // namespace ssr
