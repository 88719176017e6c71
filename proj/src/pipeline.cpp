#include "ssr/pipeline.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "ssr/checkpoint.hpp"
#include "ssr/dataset.hpp"
#include "ssr/error.hpp"
#include "ssr/external_generator.hpp"
#include "ssr/ngram.hpp"
#include "ssr/synthetic.hpp"

namespace ssr {

namespace fs = std::filesystem;
using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

namespace {

// Reads keys from one JSON object and rejects the ones nobody asked for.
class Section {
 public:
  Section(const json& j, std::string prefix) : j_(&j), prefix_(std::move(prefix)) {
    if (!j.is_object()) throw Error("config key " + name() + " must be an object");
  }

  template <class T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    const auto it = j_->find(key);
    if (it == j_->end()) return;
    if constexpr (std::is_same_v<T, bool>) {
      if (!it->is_boolean()) bad(key);
    } else if constexpr (std::is_integral_v<T> && std::is_unsigned_v<T>) {
      if (!it->is_number_unsigned()) bad(key);
    } else if constexpr (std::is_integral_v<T>) {
      if (!it->is_number_integer()) bad(key);
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!it->is_number()) bad(key);
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!it->is_string()) bad(key);
    }
    try {
      out = it->get<T>();
    } catch (const json::exception&) {
      bad(key);
    }
  }

  bool has(const std::string& key) const { return j_->contains(key); }

  std::optional<Section> sub(const std::string& key) {
    seen_.insert(key);
    const auto it = j_->find(key);
    if (it == j_->end()) return std::nullopt;
    return Section(*it, prefix_ + key + ".");
  }

  void finish() const {
    for (const auto& [k, v] : j_->items()) {
      if (!seen_.count(k)) throw Error("unknown config key: " + prefix_ + k);
    }
  }

 private:
  [[noreturn]] void bad(const std::string& key) const {
    throw Error("invalid value for config key " + prefix_ + key);
  }
  std::string name() const { return prefix_.empty() ? "<root>" : prefix_.substr(0, prefix_.size() - 1); }

  const json* j_;
  std::string prefix_;
  std::set<std::string> seen_;
};

void read_noise(Section& s, NoiseConfig& n) {
  s.get("p_delete", n.p_delete);
  s.get("p_replace", n.p_replace);
  s.get("p_shuffle", n.p_shuffle);
  s.get("p_duplicate", n.p_duplicate);
  s.finish();
}

ojson noise_json(const NoiseConfig& n) {
  return {{"p_delete", n.p_delete}, {"p_replace", n.p_replace}, {"p_shuffle", n.p_shuffle},
          {"p_duplicate", n.p_duplicate}};
}

void read_train(Section& s, TrainConfig& t) {
  s.get("steps", t.steps);
  s.get("batch_size", t.batch_size);
  s.get("lr", t.lr);
  s.get("warmup_steps", t.warmup_steps);
  s.get("beta1", t.beta1);
  s.get("beta2", t.beta2);
  s.get("eps", t.eps);
  s.get("grad_clip", t.grad_clip);
  s.get("eval_every", t.eval_every);
  s.finish();
}

ojson train_json(const TrainConfig& t) {
  return {{"steps", t.steps},     {"batch_size", t.batch_size}, {"lr", t.lr},
          {"warmup_steps", t.warmup_steps}, {"beta1", t.beta1}, {"beta2", t.beta2},
          {"eps", t.eps},         {"grad_clip", t.grad_clip},   {"eval_every", t.eval_every}};
}

}  // namespace

PipelineConfig parse_pipeline_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(std::string("config is not valid JSON: ") + e.what());
  }
  PipelineConfig c;
  // Defaults that differ from the library structs.
  c.infill_train.steps = 1000;
  c.ssr_train.steps = 1000;
  c.finetune_train.steps = 1000;
  c.finetune_train.eval_every = 100;

  Section root(j, "");
  if (!j.contains("seed")) throw Error("config key seed is mandatory");
  root.get("seed", c.seed);
  std::string out;
  root.get("output_dir", out);
  c.output_dir = out;
  if (auto s = root.sub("corpus")) {
    std::vector<std::string> paths;
    s->get("paths", paths);
    for (const auto& p : paths) c.corpus_paths.emplace_back(p);
    s->get("synthetic_sentences", c.synthetic_sentences);
    s->get("max_seq_len", c.max_seq_len);
    s->get("lowercase", c.tokenizer.lowercase);
    s->finish();
  }
  c.vocab.tokenizer = c.tokenizer;
  if (auto s = root.sub("vocab")) {
    s->get("max_size", c.vocab.max_size);
    s->get("min_freq", c.vocab.min_freq);
    s->get("max_sentinels", c.vocab.max_sentinels);
    s->finish();
  }
  if (auto s = root.sub("masking")) {
    s->get("lambda", c.masking.lambda);
    s->get("budget", c.masking.budget);
    s->get("max_span_len", c.masking.max_span_len);
    s->get("max_spans", c.masking.max_spans);
    s->get("max_insertion_share", c.masking.max_insertion_share);
    s->get("max_attempts", c.masking.max_attempts);
    s->finish();
  }
  if (auto s = root.sub("generator")) {
    auto& g = c.generator;
    s->get("kind", g.kind);
    s->get("command", g.command);
    s->get("order", g.order);
    s->get("alpha", g.alpha);
    s->get("top_p", g.generation.top_p);
    s->get("length_lambda", g.generation.length_lambda);
    s->get("max_gen_len", g.generation.max_gen_len);
    s->get("timeout_s", g.timeout_s);
    if (auto n = s->sub("noise")) read_noise(*n, g.noise);
    s->finish();
  }
  if (auto s = root.sub("dataset")) {
    s->get("drop_exact_copies", c.drop_exact_copies);
    s->get("threads", c.threads);
    s->get("ssr_documents", c.ssr_documents);
    s->finish();
  }
  if (auto s = root.sub("curriculum")) {
    std::string strategy = to_string(c.curriculum.strategy);
    s->get("strategy", strategy);
    c.curriculum.strategy = parse_strategy(strategy);
    s->get("k", c.curriculum.k);
    s->get("mix_current", c.curriculum.mix_current);
    s->finish();
  }
  if (auto s = root.sub("model")) {
    auto& m = c.model;
    s->get("n_layers", m.n_layers);
    s->get("n_heads", m.n_heads);
    s->get("d_model", m.d_model);
    s->get("d_ff", m.d_ff);
    s->get("max_rel_distance", m.max_rel_distance);
    s->get("dropout", m.dropout);
    s->get("max_decode_len", m.max_decode_len);
    s->finish();
  }
  if (auto s = root.sub("train")) {
    if (auto t = s->sub("infill")) read_train(*t, c.infill_train);
    if (auto t = s->sub("ssr")) read_train(*t, c.ssr_train);
    if (auto t = s->sub("finetune")) read_train(*t, c.finetune_train);
    s->get("patience", c.patience);
    s->get("from_scratch", c.from_scratch);
    s->finish();
  }
  if (auto s = root.sub("task")) {
    if (auto n = s->sub("noise")) read_noise(*n, c.task_noise);
    if (auto sp = s->sub("split")) {
      sp->get("train", c.task_split.train);
      sp->get("dev", c.task_split.dev);
      sp->get("test", c.task_split.test);
      sp->finish();
    }
    s->get("fraction", c.task_fraction);
    s->get("train_examples", c.task_train_examples);
    s->finish();
  }
  root.get("baseline", c.baseline);
  root.finish();
  return c;
}

PipelineConfig load_pipeline_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read config: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  auto cfg = parse_pipeline_config(ss.str());
  // Relative corpus paths are taken relative to the config file.
  for (auto& p : cfg.corpus_paths) {
    if (p.is_relative()) p = path.parent_path() / p;
  }
  return cfg;
}

void set_generator(PipelineConfig& cfg, const std::string& spec) {
  static const std::string kExternal = "external:";
  if (spec.rfind(kExternal, 0) == 0) {
    cfg.generator.kind = "external";
    cfg.generator.command = spec.substr(kExternal.size());
  } else {
    cfg.generator.kind = spec;
  }
}

std::string PipelineConfig::to_json() const {
  ojson j;
  j["seed"] = seed;
  std::vector<std::string> paths;
  for (const auto& p : corpus_paths) paths.push_back(p.string());
  j["corpus"] = {{"paths", paths},
                 {"synthetic_sentences", synthetic_sentences},
                 {"max_seq_len", max_seq_len},
                 {"lowercase", tokenizer.lowercase}};
  j["vocab"] = {{"max_size", vocab.max_size}, {"min_freq", vocab.min_freq},
                {"max_sentinels", vocab.max_sentinels}};
  j["masking"] = {{"lambda", masking.lambda},
                  {"budget", masking.budget},
                  {"max_span_len", masking.max_span_len},
                  {"max_spans", masking.max_spans},
                  {"max_insertion_share", masking.max_insertion_share},
                  {"max_attempts", masking.max_attempts}};
  j["generator"] = {{"kind", generator.kind},
                    {"command", generator.command},
                    {"order", generator.order},
                    {"alpha", generator.alpha},
                    {"top_p", generator.generation.top_p},
                    {"length_lambda", generator.generation.length_lambda},
                    {"max_gen_len", generator.generation.max_gen_len},
                    {"timeout_s", generator.timeout_s},
                    {"noise", noise_json(generator.noise)}};
  j["dataset"] = {{"drop_exact_copies", drop_exact_copies},
                  {"threads", threads},
                  {"ssr_documents", ssr_documents}};
  j["curriculum"] = {{"strategy", to_string(curriculum.strategy)},
                     {"k", curriculum.k},
                     {"mix_current", curriculum.mix_current}};
  j["model"] = {{"n_layers", model.n_layers},
                {"n_heads", model.n_heads},
                {"d_model", model.d_model},
                {"d_ff", model.d_ff},
                {"max_rel_distance", model.max_rel_distance},
                {"dropout", model.dropout},
                {"max_decode_len", model.max_decode_len}};
  j["train"] = {{"infill", train_json(infill_train)},
                {"ssr", train_json(ssr_train)},
                {"finetune", train_json(finetune_train)},
                {"patience", patience},
                {"from_scratch", from_scratch}};
  j["task"] = {{"noise", noise_json(task_noise)},
               {"split", {{"train", task_split.train}, {"dev", task_split.dev}, {"test", task_split.test}}},
               {"fraction", task_fraction},
               {"train_examples", task_train_examples}};
  j["baseline"] = baseline;
  return j.dump(2);
}

void PipelineConfig::validate() const {
  if (corpus_paths.empty() && synthetic_sentences == 0) {
    throw Error("config needs corpus.paths or corpus.synthetic_sentences");
  }
  for (const auto& p : corpus_paths) {
    if (!fs::exists(p)) throw Error("corpus path does not exist: " + p.string());
  }
  if (max_seq_len < 2) throw Error("corpus.max_seq_len must be at least 2");
  static const std::set<std::string> kinds{"ngram", "rule", "identity", "self", "external"};
  if (!kinds.count(generator.kind)) throw Error("unknown generator kind: " + generator.kind);
  if (generator.kind == "external" && generator.command.empty()) {
    throw Error("external generator needs a command");
  }
  if (!(generator.timeout_s > 0.0)) throw Error("generator.timeout_s must be positive");
  if (curriculum.k < 1) throw Error("curriculum.k must be positive");
  if (!(curriculum.mix_current >= 0.0 && curriculum.mix_current <= 1.0)) {
    throw Error("curriculum.mix_current must lie in [0, 1]");
  }
  if (!(task_fraction > 0.0 && task_fraction < 1.0)) throw Error("task.fraction must lie in (0, 1)");
  ModelConfig m = model;
  m.vocab_size = 1;
  m.validate();
  infill_train.validate();
  ssr_train.validate();
  finetune_train.validate();
}

// ---------------------------------------------------------------------------

namespace {

void log_line(const std::string& stage, const std::string& msg) {
  std::cerr << "[" << stage << "] " << msg << std::endl;
}

void write_text(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  const auto tmp = p.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw Error("cannot write " + p.string());
    out << text;
    if (!out) throw Error("cannot write " + p.string());
  }
  fs::rename(tmp, p);
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw Error("cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<SSRExample> read_examples(const fs::path& p) { return read_dataset(p); }

}  // namespace

Pipeline::Pipeline(PipelineConfig cfg, bool force) : cfg_(std::move(cfg)), force_(force) {
  if (cfg_.output_dir.empty()) throw Error("no output directory (use --out or output_dir)");
  cfg_.validate();
  out_ = cfg_.output_dir;
  fs::create_directories(out_);
  lock_ = out_ / ".lock";
  const int fd = ::open(lock_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) {
    lock_.clear();
    throw Error("output directory is locked by another run: " + (out_ / ".lock").string());
  }
  const auto pid = std::to_string(::getpid()) + "\n";
  if (::write(fd, pid.data(), pid.size()) < 0) {
    // The lock still holds without the pid.
  }
  ::close(fd);
  fingerprint_ = fingerprint_hex(fnv1a64(cfg_.to_json()));
  write_text(path("config.json"), cfg_.to_json() + "\n");
}

Pipeline::~Pipeline() {
  if (!lock_.empty()) {
    std::error_code ec;
    fs::remove(lock_, ec);
  }
}

bool Pipeline::begin(const std::string& name) {
  const auto marker = path("stages/" + name + ".done");
  if (fs::exists(marker) && !force_) {
    const auto recorded = read_text(marker);
    if (recorded.substr(0, fingerprint_.size()) != fingerprint_) {
      throw Error("stage " + name + " was completed with a different config; rerun with --force");
    }
    log_line(name, "already complete");
    return false;
  }
  if (fs::exists(marker)) fs::remove(marker);
  log_line(name, "start");
  return true;
}

void Pipeline::finish(const std::string& name) {
  write_text(path("stages/" + name + ".done"), fingerprint_ + "\n");
  log_line(name, "done");
}

void Pipeline::require(const fs::path& rel, const std::string& command) const {
  if (!fs::exists(path(rel))) {
    throw Error("missing input: " + path(rel).string() + " (run " + command + " first)");
  }
}

std::vector<Document> Pipeline::documents() const {
  std::vector<Document> docs;
  if (cfg_.corpus_paths.empty()) return synthetic_corpus(cfg_.synthetic_sentences, cfg_.seed);
  for (const auto& p : cfg_.corpus_paths) {
    auto part = read_corpus(p);
    for (auto& d : part) {
      d.id = "d" + std::string(7 - std::min<std::size_t>(7, std::to_string(docs.size() + 1).size()), '0') +
             std::to_string(docs.size() + 1);
      docs.push_back(std::move(d));
    }
  }
  return docs;
}

Vocab Pipeline::load_vocab() const {
  require("vocab.tsv", "build-vocab");
  return Vocab::load(path("vocab.tsv"));
}

void Pipeline::split_documents(const Vocab& vocab, std::vector<TokenSeq>& pretrain,
                               std::vector<TokenSeq>& task) const {
  const auto docs = documents();
  const auto n_task = static_cast<std::size_t>(std::llround(cfg_.task_fraction * static_cast<double>(docs.size())));
  const auto cut = docs.size() - std::min(n_task, docs.size());
  const std::span<const Document> all(docs);
  pretrain = tokenize_corpus(all.subspan(0, cut), vocab, cfg_.tokenizer, cfg_.max_seq_len);
  task = tokenize_corpus(all.subspan(cut), vocab, cfg_.tokenizer, cfg_.max_seq_len);
}

void Pipeline::build_vocab() {
  if (!begin("build-vocab")) return;
  const auto docs = documents();
  const auto vocab = ssr::build_vocab(docs, cfg_.vocab);
  vocab.save(path("vocab.tsv"));
  log_line("build-vocab", std::to_string(docs.size()) + " documents, " + std::to_string(vocab.size()) + " types");
  finish("build-vocab");
}

void Pipeline::ensure_infill_checkpoint() {
  if (!begin("pretrain-infill")) return;
  require("datasets/infill.jsonl", "build-dataset");
  const auto vocab = load_vocab();
  const auto data = read_examples(path("datasets/infill.jsonl"));
  ModelConfig mc = cfg_.model;
  mc.vocab_size = static_cast<int>(vocab.size());
  PretrainOptions po;
  po.objective = Mode::kInfill;
  po.train = cfg_.infill_train;
  po.train.seed = cfg_.seed;
  po.vocab_fingerprint = fingerprint_hex(vocab.fingerprint());
  fs::create_directories(path("metrics"));
  fs::create_directories(path("checkpoints"));
  po.metrics_path = path("metrics/infill.jsonl");
  po.on_checkpoint = [&](const Checkpoint& c) { save_checkpoint(c, path("checkpoints/infill.latest.ckpt")); };
  const auto ck = ssr::pretrain(nullptr, mc, data, po);
  save_checkpoint(ck, path("checkpoints/infill.ckpt"));
  std::error_code ec;
  fs::remove(path("checkpoints/infill.latest.ckpt"), ec);
  finish("pretrain-infill");
}

void Pipeline::train_generator() {
  if (!begin("train-generator")) return;
  const auto vocab = load_vocab();
  const auto& kind = cfg_.generator.kind;
  if (kind == "ngram") {
    std::vector<TokenSeq> pre, task;
    split_documents(vocab, pre, task);
    const auto lm = NgramLM::train(pre, vocab, cfg_.generator.order, cfg_.generator.alpha);
    fs::create_directories(path("generator"));
    lm.save(path("generator/ngram.json"));
  } else if (kind == "self") {
    // The self generator is the infilling model.
    build_base_datasets();
    ensure_infill_checkpoint();
  }
  ojson j{{"kind", kind}};
  if (kind == "external") j["command"] = cfg_.generator.command;
  write_text(path("generator/generator.json"), j.dump(2) + "\n");
  finish("train-generator");
}

std::unique_ptr<SpanGenerator> Pipeline::make_generator(const Vocab& vocab, NgramLM& lm) const {
  const auto& g = cfg_.generator;
  if (g.kind == "identity") return std::make_unique<IdentityGenerator>();
  if (g.kind == "rule") return std::make_unique<RuleNoiseGenerator>(vocab, g.noise);
  if (g.kind == "external") {
    return std::make_unique<ExternalGenerator>(
        g.command, vocab, std::chrono::milliseconds(static_cast<long long>(g.timeout_s * 1000.0)));
  }
  if (g.kind == "ngram") {
    require("generator/ngram.json", "train-generator");
    lm = NgramLM::load(path("generator/ngram.json"));
    return std::make_unique<NgramGenerator>(lm, g.generation);
  }
  require("checkpoints/infill.ckpt", "train-generator");
  return as_self_generator(load_checkpoint(path("checkpoints/infill.ckpt")), vocab, g.generation);
}

void Pipeline::build_base_datasets() {
  if (!begin("build-dataset-infill")) return;
  const auto vocab = load_vocab();
  std::vector<TokenSeq> pre, task;
  split_documents(vocab, pre, task);
  BuildOptions bo;
  bo.masking = cfg_.masking;
  bo.noise = cfg_.generator.noise;
  bo.seed = cfg_.seed;
  bo.drop_exact_copies = cfg_.drop_exact_copies;
  bo.threads = cfg_.threads;

  bo.mode = Mode::kInfill;
  {
    const auto infill = ssr::build_dataset(pre, vocab, nullptr, bo);
    write_dataset(infill, path("datasets/infill.jsonl"), vocab);
    Rng task_rng(cfg_.seed, "task");
    auto splits = make_synth_gec(task, cfg_.task_noise, task_rng, cfg_.task_split, vocab);
    if (cfg_.task_train_examples > 0 && splits.train.size() > cfg_.task_train_examples) {
      splits.train.resize(cfg_.task_train_examples);
    }
    write_dataset(splits.train, path("tasks/train.jsonl"), vocab);
    write_dataset(splits.dev, path("tasks/dev.jsonl"), vocab);
    write_dataset(splits.test, path("tasks/test.jsonl"), vocab);
    log_line("build-dataset", std::to_string(infill.size()) + " infilling examples, task " +
                                  std::to_string(splits.train.size()) + "/" + std::to_string(splits.dev.size()) +
                                  "/" + std::to_string(splits.test.size()));
  }
  finish("build-dataset-infill");
}

void Pipeline::build_dataset() {
  build_base_datasets();
  if (!begin("build-dataset")) return;
  const auto vocab = load_vocab();
  std::vector<TokenSeq> pre, task;
  split_documents(vocab, pre, task);
  BuildOptions bo;
  bo.masking = cfg_.masking;
  bo.noise = cfg_.generator.noise;
  bo.seed = cfg_.seed;
  bo.drop_exact_copies = cfg_.drop_exact_copies;
  bo.threads = cfg_.threads;
  NgramLM lm;
  auto gen = make_generator(vocab, lm);
  std::vector<TokenSeq> ssr_docs = pre;
  if (cfg_.ssr_documents > 0 && ssr_docs.size() > cfg_.ssr_documents) ssr_docs.resize(cfg_.ssr_documents);
  bo.mode = Mode::kSsr;
  const auto ssr = ssr::build_dataset(ssr_docs, vocab, gen.get(), bo);
  for (const auto& ex : ssr) validate_example(ex, vocab);
  write_dataset(ssr, path("datasets/ssr.jsonl"), vocab);
  log_line("build-dataset", std::to_string(ssr.size()) + " ssr examples (" + gen->name() + " generator)");
  finish("build-dataset");
}

void Pipeline::score_curriculum() {
  if (!begin("score-curriculum")) return;
  require("datasets/ssr.jsonl", "build-dataset");
  auto data = read_examples(path("datasets/ssr.jsonl"));
  if (data.empty()) throw Error("empty dataset: " + path("datasets/ssr.jsonl").string());
  const auto strategy = cfg_.curriculum.strategy;
  const int k = strategy == Strategy::kNone ? 1 : cfg_.curriculum.k;
  bucketize(data, k, strategy);
  const auto vocab = load_vocab();
  write_dataset(data, path("datasets/ssr.bucketed.jsonl"), vocab);
  const auto stats = bucket_stats(data, strategy);
  write_text(path("reports/curriculum.json"), bucket_report_json(stats, strategy, k) + "\n");
  finish("score-curriculum");
}

Checkpoint Pipeline::continue_pretraining(const Checkpoint& init, Mode mode, const std::string& data_rel,
                                          const CurriculumSchedule& schedule,
                                          const std::string& metrics_rel) {
  const auto vocab = load_vocab();
  const auto data = read_examples(path(data_rel));
  PretrainOptions po;
  po.objective = mode;
  po.schedule = schedule;
  po.train = cfg_.ssr_train;
  po.train.seed = cfg_.seed;
  po.from_scratch = cfg_.from_scratch;
  po.vocab_fingerprint = fingerprint_hex(vocab.fingerprint());
  fs::create_directories(path(metrics_rel).parent_path());
  po.metrics_path = path(metrics_rel);
  ModelConfig mc = cfg_.model;
  mc.vocab_size = static_cast<int>(vocab.size());
  const bool scratch = cfg_.from_scratch && mode == Mode::kSsr;
  return ssr::pretrain(scratch ? nullptr : &init, mc, data, po);
}

void Pipeline::pretrain() {
  require("datasets/infill.jsonl", "build-dataset");
  ensure_infill_checkpoint();
  if (!begin("pretrain")) return;
  require("datasets/ssr.bucketed.jsonl", "score-curriculum");
  const auto init = load_checkpoint(path("checkpoints/infill.ckpt"));
  auto schedule = cfg_.curriculum;
  if (schedule.strategy == Strategy::kNone) schedule.k = 1;
  const auto ck = continue_pretraining(init, Mode::kSsr, "datasets/ssr.bucketed.jsonl", schedule,
                                       "metrics/ssr.jsonl");
  save_checkpoint(ck, path("checkpoints/ssr.ckpt"));
  finish("pretrain");
}

EvalReport Pipeline::finetune_and_evaluate(const std::string& init_rel, const std::string& tag) {
  const auto vocab = load_vocab();
  require("tasks/train.jsonl", "build-dataset");
  const auto train = read_examples(path("tasks/train.jsonl"));
  const auto dev = read_examples(path("tasks/dev.jsonl"));
  const auto test = read_examples(path("tasks/test.jsonl"));
  FinetuneOptions fo;
  fo.train = cfg_.finetune_train;
  fo.train.seed = cfg_.seed;
  fo.patience = cfg_.patience;
  fo.vocab_fingerprint = fingerprint_hex(vocab.fingerprint());
  fo.metrics_path = path("metrics/" + tag + "_finetune.jsonl");
  fs::create_directories(path("metrics"));
  const auto res = ssr::finetune(load_checkpoint(path(init_rel)), train, dev, vocab, fo);
  const std::string ck_rel = "checkpoints/" + tag + "_finetuned.ckpt";
  save_checkpoint(res.best, path(ck_rel));
  auto report = ssr::evaluate(res.best.params, test, vocab, ck_rel);
  write_text(path("reports/" + tag + "_eval.json"), report.to_json() + "\n");
  log_line("evaluate", tag + ": f05 " + std::to_string(report.metrics.f05) + ", exact match " +
                           std::to_string(report.metrics.exact_match));
  return report;
}

void Pipeline::finetune() {
  if (!begin("finetune")) return;
  require("checkpoints/ssr.ckpt", "pretrain");
  const auto vocab = load_vocab();
  require("tasks/train.jsonl", "build-dataset");
  const auto train = read_examples(path("tasks/train.jsonl"));
  const auto dev = read_examples(path("tasks/dev.jsonl"));
  FinetuneOptions fo;
  fo.train = cfg_.finetune_train;
  fo.train.seed = cfg_.seed;
  fo.patience = cfg_.patience;
  fo.vocab_fingerprint = fingerprint_hex(vocab.fingerprint());
  fs::create_directories(path("metrics"));
  fo.metrics_path = path("metrics/finetune.jsonl");
  const auto res = ssr::finetune(load_checkpoint(path("checkpoints/ssr.ckpt")), train, dev, vocab, fo);
  save_checkpoint(res.best, path("checkpoints/finetuned.ckpt"));
  finish("finetune");
}

void Pipeline::evaluate() {
  if (!begin("evaluate")) return;
  require("checkpoints/finetuned.ckpt", "finetune");
  require("tasks/test.jsonl", "build-dataset");
  const auto vocab = load_vocab();
  const auto ck = load_checkpoint(path("checkpoints/finetuned.ckpt"));
  if (static_cast<std::size_t>(ck.params.config.vocab_size) != vocab.size()) {
    throw Error("vocab mismatch between checkpoint and task");
  }
  const auto test = read_examples(path("tasks/test.jsonl"));
  const auto report = ssr::evaluate(ck.params, test, vocab, "checkpoints/finetuned.ckpt");
  write_text(path("reports/eval.json"), report.to_json() + "\n");
  log_line("evaluate", "f05 " + std::to_string(report.metrics.f05) + ", exact match " +
                           std::to_string(report.metrics.exact_match) + " (copy f05 " +
                           std::to_string(report.copy_baseline.f05) + ")");
  finish("evaluate");
}

void Pipeline::run_all() {
  build_vocab();
  train_generator();
  build_dataset();
  score_curriculum();
  pretrain();
  finetune();
  evaluate();
  if (!cfg_.baseline) return;
  if (begin("baseline")) {
    // Infilling-only arm: same starting checkpoint, same continued steps.
    const auto init = load_checkpoint(path("checkpoints/infill.ckpt"));
    const auto ck = continue_pretraining(init, Mode::kInfill, "datasets/infill.jsonl",
                                         {Strategy::kNone, 1, cfg_.curriculum.mix_current},
                                         "metrics/baseline_infill.jsonl");
    save_checkpoint(ck, path("checkpoints/baseline_infill.ckpt"));
    const auto base = finetune_and_evaluate("checkpoints/baseline_infill.ckpt", "baseline");
    const auto ssr_report = json::parse(read_text(path("reports/eval.json")));
    const double ssr_f = ssr_report.at("metrics").at("f05").get<double>();
    ojson cmp{{"seed", cfg_.seed},
              {"ssr_f05", ssr_f},
              {"infill_f05", base.metrics.f05},
              {"margin", ssr_f - base.metrics.f05},
              {"ssr_exact_match", ssr_report.at("metrics").at("exact_match").get<double>()},
              {"infill_exact_match", base.metrics.exact_match}};
    write_text(path("reports/comparison.json"), cmp.dump(2) + "\n");
    finish("baseline");
  }
}

void Pipeline::ablate_curriculum() {
  build_vocab();
  train_generator();
  build_dataset();
  ensure_infill_checkpoint();
  const auto vocab = load_vocab();
  ojson rows = ojson::array();
  for (const auto strategy : all_strategies()) {
    const std::string name = to_string(strategy);
    const std::string dir = "ablation/" + name;
    const std::string stage = "ablate-" + name;
    if (begin(stage)) {
      auto data = read_examples(path("datasets/ssr.jsonl"));
      const int k = strategy == Strategy::kNone ? 1 : cfg_.curriculum.k;
      bucketize(data, k, strategy);
      write_dataset(data, path(dir + "/ssr.bucketed.jsonl"), vocab);
      const auto init = load_checkpoint(path("checkpoints/infill.ckpt"));
      const auto ck = continue_pretraining(init, Mode::kSsr, dir + "/ssr.bucketed.jsonl",
                                           {strategy, k, cfg_.curriculum.mix_current},
                                           dir + "/pretrain.jsonl");
      save_checkpoint(ck, path(dir + "/ssr.ckpt"));
      const auto report = finetune_and_evaluate(dir + "/ssr.ckpt", "ablate_" + name);
      fs::remove(path(dir + "/ssr.bucketed.jsonl"));
      (void)report;
      finish(stage);
    }
    const auto rep = json::parse(read_text(path("reports/ablate_" + name + "_eval.json")));
    rows.push_back({{"strategy", name},
                    {"exact_match", rep.at("metrics").at("exact_match")},
                    {"p", rep.at("metrics").at("p")},
                    {"r", rep.at("metrics").at("r")},
                    {"f05", rep.at("metrics").at("f05")},
                    {"rouge_l", rep.at("metrics").at("rouge_l")}});
  }
  write_text(path("reports/ablation.json"), ojson{{"seed", cfg_.seed}, {"rows", rows}}.dump(2) + "\n");
  std::ostringstream table;
  table << std::left << std::setw(14) << "strategy" << std::setw(10) << "f05" << std::setw(10) << "exact"
        << "rouge_l\n";
  table << std::fixed << std::setprecision(4);
  for (const auto& r : rows) {
    table << std::setw(14) << r["strategy"].get<std::string>() << std::setw(10) << r["f05"].get<double>()
          << std::setw(10) << r["exact_match"].get<double>() << r["rouge_l"].get<double>() << "\n";
  }
  std::cout << table.str();
}

// ---------------------------------------------------------------------------

std::string inspect_example(const SSRExample& ex, const Vocab& vocab) {
  auto text = [&](std::span<const TokenId> ids) {
    std::string s;
    for (auto id : ids) {
      if (!s.empty()) s += ' ';
      s += vocab.surface(id);
    }
    return s.empty() ? std::string("(empty)") : s;
  };
  auto num = [](double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", x);
    return std::string(buf);
  };
  std::ostringstream os;
  os << "id:     " << ex.id << "\n";
  os << "mode:   " << to_string(ex.mode);
  if (ex.bucket) os << "   bucket: " << *ex.bucket;
  os << "\n";
  os << "source: " << text(ex.source_ids) << "\n";
  os << "target: " << text(ex.target_ids) << "\n";
  if (ex.spans.empty()) return os.str();

  std::size_t w_gt = 12, w_imp = 9;
  for (const auto& s : ex.spans) {
    w_gt = std::max(w_gt, text(s.gt).size());
    w_imp = std::max(w_imp, text(s.imp).size());
  }
  os << "\n" << std::left << std::setw(6) << "span" << std::setw(static_cast<int>(w_gt + 2)) << "ground truth"
     << std::setw(static_cast<int>(w_imp + 2)) << "imperfect" << "nll\n";
  std::vector<std::string> sums;
  for (const auto& s : ex.spans) {
    double total = 0.0;
    std::string parts;
    for (double x : s.nll) {
      total += x;
      if (!parts.empty()) parts += " + ";
      parts += num(x);
    }
    os << std::setw(6) << s.index << std::setw(static_cast<int>(w_gt + 2)) << text(s.gt)
       << std::setw(static_cast<int>(w_imp + 2)) << text(s.imp);
    if (s.nll.size() > 1) {
      os << parts << " = " << num(total);
    } else {
      os << num(total);
    }
    os << "\n";
    sums.push_back(num(total));
  }
  os << "\ndifficulty = ";
  for (std::size_t i = 0; i < sums.size(); ++i) os << (i ? " + " : "") << sums[i];
  os << " = " << num(total_nll(ex)) << "\n";
  return os.str();
}

std::string directory_digest(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) files.push_back(fs::relative(e.path(), dir));
  }
  std::sort(files.begin(), files.end());
  std::uint64_t h = fnv1a64("");
  for (const auto& rel : files) {
    if (rel == ".lock") continue;
    h = fnv1a64(rel.generic_string() + '\0', h);
    h = fnv1a64(read_text(dir / rel) + '\0', h);
  }
  return fingerprint_hex(h);
}

}  // namespace ssr
