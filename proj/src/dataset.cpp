#include "ssr/dataset.hpp"

#include <algorithm>
#include <atomic>
#include <mutex>
#include <cmath>
#include <thread>

#include "json.hpp"
#include "ssr/error.hpp"

namespace ssr {

using ordered_json = nlohmann::ordered_json;

std::string to_string(Mode m) {
  switch (m) {
    case Mode::kSsr: return "ssr";
    case Mode::kInfill: return "infill";
    case Mode::kDistill: return "distill";
    case Mode::kDenoise: return "denoise";
    case Mode::kFinetune: return "finetune";
  }
  return "?";
}

Mode parse_mode(std::string_view s) {
  if (s == "ssr") return Mode::kSsr;
  if (s == "infill") return Mode::kInfill;
  if (s == "distill") return Mode::kDistill;
  if (s == "denoise") return Mode::kDenoise;
  if (s == "finetune") return Mode::kFinetune;
  throw Error("unknown mode: " + std::string(s));
}

namespace {

void check_aligned(const SpanMask& mask, const GeneratorOutput& gen) {
  if (gen.spans.size() != mask.spans.size()) {
    throw Error("span-count mismatch: mask has " + std::to_string(mask.spans.size()) +
                ", generator has " + std::to_string(gen.spans.size()));
  }
}

template <class Emit>
void rebuild_source(const SpanMask& mask, Emit&& emit_span, std::vector<TokenId>& out) {
  const auto& ids = mask.seq.ids;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < mask.spans.size(); ++i) {
    const auto& s = mask.spans[i];
    out.insert(out.end(), ids.begin() + static_cast<std::ptrdiff_t>(pos),
               ids.begin() + static_cast<std::ptrdiff_t>(s.start));
    emit_span(i, out);
    pos = s.start + s.length;
  }
  out.insert(out.end(), ids.begin() + static_cast<std::ptrdiff_t>(pos), ids.end());
}

std::vector<SpanRecord> span_records(const SpanMask& mask, const GeneratorOutput* gen) {
  std::vector<SpanRecord> out;
  for (std::size_t i = 0; i < mask.spans.size(); ++i) {
    SpanRecord r;
    r.index = mask.spans[i].index;
    r.gt = mask.spans[i].gt_ids;
    if (gen) {
      r.imp = gen->spans[i].imperfect_ids;
      r.nll = gen->spans[i].nll;
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace

double total_nll(const SSRExample& ex) {
  double total = 0.0;
  for (const auto& s : ex.spans) {
    for (double x : s.nll) total += x;
  }
  return total;
}

SSRExample build_ssr_example(const SpanMask& mask, const GeneratorOutput& gen, const Vocab& vocab) {
  check_aligned(mask, gen);
  if (static_cast<int>(mask.spans.size()) > vocab.max_sentinels()) throw Error("too many spans");
  SSRExample ex;
  ex.id = mask.seq.doc_id;
  ex.mode = Mode::kSsr;
  rebuild_source(
      mask,
      [&](std::size_t i, std::vector<TokenId>& out) {
        const int k = mask.spans[i].index;
        out.push_back(vocab.open(k));
        const auto& imp = gen.spans[i].imperfect_ids;
        out.insert(out.end(), imp.begin(), imp.end());
        out.push_back(vocab.close(k));
      },
      ex.source_ids);
  for (const auto& s : mask.spans) {
    ex.target_ids.push_back(vocab.open(s.index));
    ex.target_ids.insert(ex.target_ids.end(), s.gt_ids.begin(), s.gt_ids.end());
  }
  ex.spans = span_records(mask, &gen);
  ex.difficulty = total_nll(ex);
  return ex;
}

SSRExample build_infill_example(const SpanMask& mask, const Vocab& vocab) {
  auto pair = apply_mask(mask, vocab);
  SSRExample ex;
  ex.id = mask.seq.doc_id;
  ex.mode = Mode::kInfill;
  ex.source_ids = std::move(pair.source.ids);
  ex.target_ids = std::move(pair.target.ids);
  ex.spans = span_records(mask, nullptr);
  return ex;
}

SSRExample build_distill_example(const SpanMask& mask, const GeneratorOutput& gen,
                                 const Vocab& vocab) {
  check_aligned(mask, gen);
  auto pair = apply_mask(mask, vocab);
  SSRExample ex;
  ex.id = mask.seq.doc_id;
  ex.mode = Mode::kDistill;
  ex.source_ids = std::move(pair.source.ids);
  for (std::size_t i = 0; i < mask.spans.size(); ++i) {
    ex.target_ids.push_back(vocab.mask(mask.spans[i].index));
    const auto& imp = gen.spans[i].imperfect_ids;
    ex.target_ids.insert(ex.target_ids.end(), imp.begin(), imp.end());
  }
  ex.spans = span_records(mask, &gen);
  ex.difficulty = total_nll(ex);
  return ex;
}

SSRExample build_denoise_example(const TokenSeq& seq, const NoiseConfig& cfg, Rng& rng,
                                 const Vocab& vocab) {
  if (seq.size() < 2) throw Error("sequence too short");
  SSRExample ex;
  ex.id = seq.doc_id;
  ex.mode = Mode::kDenoise;
  ex.source_ids = rule_noise(seq.ids, cfg, rng, vocab).imperfect_ids;
  ex.target_ids = seq.ids;
  return ex;
}

SSRExample build_finetune_example(const TokenSeq& src, const TokenSeq& tgt, const Vocab& vocab,
                                  std::string id) {
  if (src.ids.empty() || tgt.ids.empty()) throw Error("finetune pair must be nonempty");
  SSRExample ex;
  ex.id = id.empty() ? src.doc_id : std::move(id);
  ex.mode = Mode::kFinetune;
  ex.source_ids.push_back(vocab.open(1));
  ex.source_ids.insert(ex.source_ids.end(), src.ids.begin(), src.ids.end());
  ex.source_ids.push_back(vocab.close(1));
  ex.target_ids.push_back(vocab.open(1));
  ex.target_ids.insert(ex.target_ids.end(), tgt.ids.begin(), tgt.ids.end());
  return ex;
}

SSRExample build_constrained_example(const TokenSeq& seq, std::size_t start, std::size_t length,
                                     std::span<const TokenId> replacement, const Vocab& vocab,
                                     std::string id) {
  if (start + length > seq.size()) throw Error("rewrite region exceeds sequence");
  SSRExample ex;
  ex.id = id.empty() ? seq.doc_id : std::move(id);
  ex.mode = Mode::kFinetune;
  const auto b = seq.ids.begin();
  ex.source_ids.assign(b, b + static_cast<std::ptrdiff_t>(start));
  ex.source_ids.push_back(vocab.open(1));
  ex.source_ids.insert(ex.source_ids.end(), b + static_cast<std::ptrdiff_t>(start),
                       b + static_cast<std::ptrdiff_t>(start + length));
  ex.source_ids.push_back(vocab.close(1));
  ex.source_ids.insert(ex.source_ids.end(), b + static_cast<std::ptrdiff_t>(start + length),
                       seq.ids.end());
  ex.target_ids.push_back(vocab.open(1));
  ex.target_ids.insert(ex.target_ids.end(), replacement.begin(), replacement.end());
  return ex;
}

std::vector<TokenId> strip_sentinels(std::span<const TokenId> ids, const Vocab& vocab) {
  std::vector<TokenId> out;
  out.reserve(ids.size());
  for (auto id : ids) {
    if (!vocab.is_special(id) || id == Vocab::kUnk) out.push_back(id);
  }
  return out;
}

namespace {

// Segments of a sentinel-led sequence: sentinel id followed by its payload.
struct Segment {
  TokenId sentinel;
  std::vector<TokenId> payload;
};

std::vector<Segment> split_target(const std::vector<TokenId>& target, const Vocab& vocab) {
  std::vector<Segment> segs;
  for (auto id : target) {
    if (vocab.is_sentinel(id)) {
      segs.push_back({id, {}});
    } else {
      if (segs.empty()) throw Error("target does not start with a sentinel");
      segs.back().payload.push_back(id);
    }
  }
  return segs;
}

void check_ids(const std::vector<TokenId>& ids, const Vocab& vocab) {
  for (auto id : ids) {
    if (!vocab.valid(id)) throw Error("invalid token id");
  }
}

}  // namespace

void validate_example(const SSRExample& ex, const Vocab& vocab) {
  check_ids(ex.source_ids, vocab);
  check_ids(ex.target_ids, vocab);
  const auto fail = [&](const std::string& why) { return Error("example " + ex.id + ": " + why); };
  switch (ex.mode) {
    case Mode::kSsr: {
      std::size_t next = 1;
      bool inside = false;
      std::vector<TokenId> region;
      for (auto id : ex.source_ids) {
        if (vocab.is_mask(id)) throw fail("mask sentinel in SSR source");
        if (vocab.is_open(id)) {
          if (inside || vocab.sentinel_index(id) != static_cast<int>(next)) {
            throw fail("span delimiters out of order");
          }
          inside = true;
          region.clear();
        } else if (vocab.is_close(id)) {
          if (!inside || vocab.sentinel_index(id) != static_cast<int>(next)) {
            throw fail("span delimiters out of order");
          }
          if (next > ex.spans.size() || region != ex.spans[next - 1].imp) {
            throw fail("delimited region differs from imperfect span");
          }
          inside = false;
          ++next;
        } else if (inside) {
          region.push_back(id);
        }
      }
      if (inside) throw fail("unterminated span delimiter");
      if (next - 1 != ex.spans.size()) throw fail("span count differs from delimiters");
      const auto segs = split_target(ex.target_ids, vocab);
      if (segs.size() != ex.spans.size()) throw fail("target span count differs");
      for (std::size_t i = 0; i < segs.size(); ++i) {
        if (segs[i].sentinel != vocab.open(static_cast<int>(i + 1))) {
          throw fail("target sentinels out of order");
        }
        if (segs[i].payload != ex.spans[i].gt) throw fail("target span differs from ground truth");
      }
      if (std::abs(ex.difficulty - total_nll(ex)) > 1e-9) throw fail("difficulty is not the nll sum");
      break;
    }
    case Mode::kInfill:
    case Mode::kDistill: {
      int next = 1;
      for (auto id : ex.source_ids) {
        if (vocab.is_open(id) || vocab.is_close(id)) throw fail("span delimiter in infilling source");
        if (vocab.is_mask(id)) {
          if (vocab.sentinel_index(id) != next) throw fail("mask sentinels out of order");
          ++next;
        }
      }
      if (static_cast<std::size_t>(next - 1) != ex.spans.size()) throw fail("span count differs");
      const auto segs = split_target(ex.target_ids, vocab);
      if (segs.size() != ex.spans.size()) throw fail("target span count differs");
      for (std::size_t i = 0; i < segs.size(); ++i) {
        if (segs[i].sentinel != vocab.mask(static_cast<int>(i + 1))) {
          throw fail("target sentinels out of order");
        }
        const auto& want = ex.mode == Mode::kInfill ? ex.spans[i].gt : ex.spans[i].imp;
        if (segs[i].payload != want) throw fail("target span differs");
      }
      break;
    }
    case Mode::kDenoise:
      for (auto id : ex.source_ids) {
        if (vocab.is_sentinel(id)) throw fail("sentinel in denoising source");
      }
      for (auto id : ex.target_ids) {
        if (vocab.is_sentinel(id)) throw fail("sentinel in denoising target");
      }
      break;
    case Mode::kFinetune: {
      const auto open_count = std::count(ex.source_ids.begin(), ex.source_ids.end(), vocab.open(1));
      const auto close_count = std::count(ex.source_ids.begin(), ex.source_ids.end(), vocab.close(1));
      if (open_count != 1 || close_count != 1) throw fail("finetune source needs one <s_1> region");
      if (ex.target_ids.empty() || ex.target_ids.front() != vocab.open(1)) {
        throw fail("finetune target must start with <s_1>");
      }
      for (std::size_t i = 1; i < ex.target_ids.size(); ++i) {
        if (vocab.is_sentinel(ex.target_ids[i])) throw fail("extra sentinel in finetune target");
      }
      break;
    }
  }
}

namespace {

// Removes exact-copy spans from the mask (the region stays as plain text).
void drop_exact(SpanMask& mask, GeneratorOutput& gen) {
  SpanMask kept_mask;
  kept_mask.seq = mask.seq;
  GeneratorOutput kept_gen;
  for (std::size_t i = 0; i < mask.spans.size(); ++i) {
    if (gen.spans[i].imperfect_ids == mask.spans[i].gt_ids) continue;
    kept_mask.spans.push_back(mask.spans[i]);
    kept_mask.spans.back().index = static_cast<int>(kept_mask.spans.size());
    kept_gen.spans.push_back(gen.spans[i]);
  }
  mask = std::move(kept_mask);
  gen = std::move(kept_gen);
}

std::optional<SSRExample> build_one(const TokenSeq& doc, const Vocab& vocab, SpanGenerator* gen,
                                    const BuildOptions& opts) {
  if (doc.size() < 2) return std::nullopt;
  if (opts.mode == Mode::kDenoise) {
    Rng rng(opts.seed, "noise:" + doc.doc_id);
    return build_denoise_example(doc, opts.noise, rng, vocab);
  }
  Rng mask_rng(opts.seed, "mask:" + doc.doc_id);
  auto mask = sample_spans(doc, mask_rng, opts.masking);
  if (opts.mode == Mode::kInfill) return build_infill_example(mask, vocab);
  if (!gen) throw Error("mode " + to_string(opts.mode) + " requires a span generator");
  Rng gen_rng(opts.seed, "gen:" + doc.doc_id);
  auto out = generate_spans(*gen, mask, gen_rng, vocab);
  if (opts.drop_exact_copies) {
    drop_exact(mask, out);
    if (mask.spans.empty()) return std::nullopt;
  }
  if (opts.mode == Mode::kSsr) return build_ssr_example(mask, out, vocab);
  if (opts.mode == Mode::kDistill) return build_distill_example(mask, out, vocab);
  throw Error("mode " + to_string(opts.mode) + " is not built from raw documents");
}

}  // namespace

std::vector<SSRExample> build_dataset(std::span<const TokenSeq> docs, const Vocab& vocab,
                                      SpanGenerator* gen, const BuildOptions& opts) {
  std::vector<std::optional<SSRExample>> slots(docs.size());
  const bool parallel = opts.threads > 1 && (!gen || gen->concurrent());
  if (!parallel) {
    for (std::size_t i = 0; i < docs.size(); ++i) slots[i] = build_one(docs[i], vocab, gen, opts);
  } else {
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mu;
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < opts.threads; ++t) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < docs.size(); i = next++) {
          try {
            slots[i] = build_one(docs[i], vocab, gen, opts);
          } catch (...) {
            std::lock_guard lock(failure_mu);
            if (!failure) failure = std::current_exception();
          }
        }
      });
    }
    for (auto& th : pool) th.join();
    if (failure) std::rethrow_exception(failure);
  }
  std::vector<SSRExample> out;
  out.reserve(docs.size());
  for (auto& s : slots) {
    if (s) out.push_back(std::move(*s));
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const SSRExample& a, const SSRExample& b) { return a.id < b.id; });
  return out;
}

std::string example_to_json(const SSRExample& ex, const Vocab& vocab) {
  ordered_json j;
  j["id"] = ex.id;
  j["mode"] = to_string(ex.mode);
  j["source"] = ex.source_ids;
  j["target"] = ex.target_ids;
  j["source_text"] = detokenize(ex.source_ids, vocab);
  j["target_text"] = detokenize(ex.target_ids, vocab);
  auto& spans = j["spans"] = ordered_json::array();
  for (const auto& s : ex.spans) {
    ordered_json r;
    r["index"] = s.index;
    r["gt"] = s.gt;
    r["imp"] = s.imp;
    r["nll"] = s.nll;
    spans.push_back(std::move(r));
  }
  j["difficulty"] = ex.difficulty;
  j["bucket"] = ex.bucket ? ordered_json(*ex.bucket) : ordered_json(nullptr);
  return j.dump();
}

SSRExample example_from_json(std::string_view line) {
  const auto j = ordered_json::parse(line);
  SSRExample ex;
  ex.id = j.at("id").get<std::string>();
  ex.mode = parse_mode(j.at("mode").get<std::string>());
  ex.source_ids = j.at("source").get<std::vector<TokenId>>();
  ex.target_ids = j.at("target").get<std::vector<TokenId>>();
  for (const auto& r : j.at("spans")) {
    SpanRecord s;
    s.index = r.at("index").get<int>();
    s.gt = r.at("gt").get<std::vector<TokenId>>();
    s.imp = r.at("imp").get<std::vector<TokenId>>();
    s.nll = r.at("nll").get<std::vector<double>>();
    ex.spans.push_back(std::move(s));
  }
  ex.difficulty = j.at("difficulty").get<double>();
  const auto& b = j.at("bucket");
  if (!b.is_null()) ex.bucket = b.get<int>();
  return ex;
}

DatasetWriter::DatasetWriter(const std::filesystem::path& path, const Vocab& vocab)
    : path_(path), vocab_(&vocab) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  out_.open(path, std::ios::binary);
  if (!out_) throw Error("cannot write dataset: " + path.string());
}

void DatasetWriter::write(const SSRExample& ex) {
  out_ << example_to_json(ex, *vocab_) << '\n';
  ++count_;
}

void DatasetWriter::close() {
  out_.flush();
  if (!out_) throw Error("cannot write dataset: " + path_.string());
  out_.close();
}

DatasetReader::DatasetReader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
  if (!in_) throw Error("missing input: " + path.string());
}

bool DatasetReader::next(SSRExample& ex) {
  std::string line;
  while (std::getline(in_, line)) {
    ++line_;
    if (line.empty()) continue;
    try {
      ex = example_from_json(line);
    } catch (const std::exception& e) {
      throw Error("malformed dataset record at " + path_.string() + ":" + std::to_string(line_) +
                  ": " + e.what());
    }
    return true;
  }
  return false;
}

std::size_t write_dataset(std::span<const SSRExample> examples, const std::filesystem::path& path,
                          const Vocab& vocab) {
  DatasetWriter w(path, vocab);
  for (const auto& ex : examples) w.write(ex);
  w.close();
  return w.count();
}

std::vector<SSRExample> read_dataset(const std::filesystem::path& path) {
  DatasetReader r(path);
  std::vector<SSRExample> out;
  SSRExample ex;
  while (r.next(ex)) out.push_back(std::move(ex));
  return out;
}

}  // namespace ssr
