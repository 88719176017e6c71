// Regenerates the bundled demo files under data/.
#include <filesystem>
#include <fstream>
#include <iostream>

#include "ssr/dataset.hpp"
#include "ssr/synthetic.hpp"

namespace fs = std::filesystem;

int main(int argc, char** argv) {
  const fs::path dir = argc > 1 ? argv[1] : "data";
  fs::create_directories(dir);

  std::ofstream corpus(dir / "demo_corpus.txt");
  for (const auto& s : ssr::synthetic_sentences(2000, 1)) corpus << s << '\n';

  const std::string text = "In 2002, Elon Musk founded SpaceX, an aerospace manufacturer company.";
  const auto vocab = ssr::build_vocab(std::vector<ssr::Document>{{"elon", text}, {"extra", "2001 joined a"}}, {});
  vocab.save(dir / "elon_vocab.tsv");

  ssr::SpanMask mask;
  mask.seq = ssr::tokenize(text, vocab, {}, "elon");
  auto span = [&](int index, std::size_t start, std::size_t len) {
    ssr::Span s;
    s.index = index;
    s.start = start;
    s.length = len;
    s.gt_ids.assign(mask.seq.ids.begin() + static_cast<long>(start),
                    mask.seq.ids.begin() + static_cast<long>(start + len));
    return s;
  };
  mask.spans = {span(1, 1, 1), span(2, 5, 1), span(3, 8, 3)};
  ssr::ScriptedGenerator gen({ssr::tokenize("2001", vocab).ids, ssr::tokenize("joined", vocab).ids,
                              ssr::tokenize("a manufacturer", vocab).ids},
                             {{0.5}, {0.25}, {0.9, 0.8}});
  ssr::Rng rng(0);
  const auto ex = ssr::build_ssr_example(mask, ssr::generate_spans(gen, mask, rng, vocab), vocab);
  ssr::write_dataset(std::vector<ssr::SSRExample>{ex}, dir / "elon_demo.jsonl", vocab);
  std::cout << "wrote " << dir.string() << "\n";
}
