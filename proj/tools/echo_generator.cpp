// Usage: ssr_echo_generator <infill.jsonl>
// Reads generator requests on stdin and replies with the masked ground truth,
// recovered from the "target_text" of the matching infilling record.
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

namespace {

bool is_mask_surface(const std::string& t) {
  if (t.size() < 3 || t[0] != 'M' || t[1] != '_') return false;
  return t.find_first_not_of("0123456789", 2) == std::string::npos;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 2) {
    std::cerr << "usage: ssr_echo_generator <infill.jsonl>\n";
    return 2;
  }
  std::map<std::string, std::vector<std::vector<std::string>>> spans;
  std::ifstream in(argv[1]);
  if (!in) {
    std::cerr << "cannot read " << argv[1] << "\n";
    return 2;
  }
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto rec = nlohmann::json::parse(line);
    std::vector<std::vector<std::string>> out;
    std::istringstream words(rec.at("target_text").get<std::string>());
    std::string w;
    while (words >> w) {
      if (is_mask_surface(w)) {
        out.emplace_back();
      } else if (!out.empty()) {
        out.back().push_back(w);
      }
    }
    spans[rec.at("id").get<std::string>()] = std::move(out);
  }

  while (std::getline(std::cin, line)) {
    const auto req = nlohmann::json::parse(line);
    const auto id = req.at("id").get<std::string>();
    nlohmann::ordered_json reply;
    reply["id"] = id;
    reply["spans"] = nlohmann::ordered_json::array();
    const auto it = spans.find(id);
    const auto n = req.at("n_spans").get<std::size_t>();
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<std::string> toks;
      if (it != spans.end() && i < it->second.size()) toks = it->second[i];
      reply["spans"].push_back({{"tokens", toks}, {"nll", std::vector<double>(toks.size(), 0.0)}});
    }
    std::cout << reply.dump() << "\n" << std::flush;
  }
  return 0;
}
