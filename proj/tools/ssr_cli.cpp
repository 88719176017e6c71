#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "ssr/checkpoint.hpp"
#include "ssr/dataset.hpp"
#include "ssr/error.hpp"
#include "ssr/pipeline.hpp"

namespace fs = std::filesystem;

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool force = false;
  std::string generator;
  std::string strategy;
  // inspect
  std::string example_id;
  std::string dataset;
  std::string vocab;
};

int fail(const std::string& msg, int code = 1) {
  std::cerr << nlohmann::json{{"error", msg}}.dump() << std::endl;
  return code;
}

ssr::PipelineConfig make_config(const Flags& f) {
  if (f.config.empty()) throw ssr::Error("--config is required");
  std::ifstream in(f.config);
  if (!in) throw ssr::Error("cannot read config: " + f.config);
  std::stringstream ss;
  ss << in.rdbuf();
  std::string text = ss.str();
  if (f.seed) {
    auto j = nlohmann::ordered_json::parse(text, nullptr, false);
    if (j.is_object()) {
      j["seed"] = *f.seed;
      text = j.dump();
    }
  }
  auto cfg = ssr::parse_pipeline_config(text);
  for (auto& p : cfg.corpus_paths) {
    if (p.is_relative()) p = fs::path(f.config).parent_path() / p;
  }
  if (!f.out.empty()) cfg.output_dir = f.out;
  if (!f.generator.empty()) ssr::set_generator(cfg, f.generator);
  if (!f.strategy.empty()) cfg.curriculum.strategy = ssr::parse_strategy(f.strategy);
  return cfg;
}

int inspect(const Flags& f) {
  fs::path dataset = f.dataset;
  fs::path vocab = f.vocab;
  if (dataset.empty()) {
    if (f.out.empty()) throw ssr::Error("inspect needs --dataset or --out");
    dataset = fs::path(f.out) / "datasets/ssr.bucketed.jsonl";
    if (!fs::exists(dataset)) dataset = fs::path(f.out) / "datasets/ssr.jsonl";
  }
  if (vocab.empty()) {
    if (f.out.empty()) throw ssr::Error("inspect needs --vocab or --out");
    vocab = fs::path(f.out) / "vocab.tsv";
  }
  if (!fs::exists(dataset)) {
    throw ssr::Error("missing input: " + dataset.string() + " (run build-dataset first)");
  }
  if (!fs::exists(vocab)) throw ssr::Error("missing input: " + vocab.string() + " (run build-vocab first)");
  const auto v = ssr::Vocab::load(vocab);
  ssr::DatasetReader reader(dataset);
  ssr::SSRExample ex;
  while (reader.next(ex)) {
    if (ex.id == f.example_id) {
      std::cout << ssr::inspect_example(ex, v);
      return 0;
    }
  }
  throw ssr::Error("no example with id " + f.example_id + " in " + dataset.string());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sequence span rewriting experiments"};
  app.require_subcommand(1);
  Flags flags;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", flags.config, "pipeline config (JSON)");
    sub->add_option("--seed", flags.seed, "override the config seed");
    sub->add_option("--out", flags.out, "output directory");
    sub->add_flag("--force", flags.force, "rerun completed stages");
    sub->add_option("--generator", flags.generator, "ngram | rule | identity | self | external:<command>");
    sub->add_option("--strategy", flags.strategy, "curriculum | none | anti | loss-only | length-only");
  };

  using Stage = void (ssr::Pipeline::*)();
  const std::vector<std::tuple<std::string, std::string, Stage>> stages{
      {"build-vocab", "build the vocabulary", &ssr::Pipeline::build_vocab},
      {"build-dataset", "build infilling, SSR and task datasets", &ssr::Pipeline::build_dataset},
      {"train-generator", "train the imperfect span generator", &ssr::Pipeline::train_generator},
      {"score-curriculum", "assign difficulty buckets", &ssr::Pipeline::score_curriculum},
      {"pretrain", "infilling then SSR continual pre-training", &ssr::Pipeline::pretrain},
      {"finetune", "fine-tune on the task", &ssr::Pipeline::finetune},
      {"evaluate", "evaluate the fine-tuned model", &ssr::Pipeline::evaluate},
      {"run-all", "every stage in order", &ssr::Pipeline::run_all},
      {"ablate-curriculum", "compare the curriculum strategies", &ssr::Pipeline::ablate_curriculum},
  };
  std::vector<std::pair<CLI::App*, Stage>> subs;
  for (const auto& [name, help, fn] : stages) {
    auto* sub = app.add_subcommand(name, help);
    common(sub);
    subs.emplace_back(sub, fn);
  }
  auto* insp = app.add_subcommand("inspect", "pretty-print one dataset record");
  insp->add_option("id", flags.example_id, "example id")->required();
  insp->add_option("--dataset", flags.dataset, "dataset JSONL");
  insp->add_option("--vocab", flags.vocab, "vocabulary TSV");
  insp->add_option("--out", flags.out, "output directory of a run");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail(e.what(), 2);
  }

  try {
    if (insp->parsed()) return inspect(flags);
    for (const auto& [sub, fn] : subs) {
      if (!sub->parsed()) continue;
      ssr::Pipeline pipeline(make_config(flags), flags.force);
      (pipeline.*fn)();
      return 0;
    }
  } catch (const std::exception& e) {
    return fail(e.what());
  }
  return fail("no command");
}
