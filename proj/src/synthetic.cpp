#include "ssr/synthetic.hpp"

#include <array>
#include <cstdio>
#include <string_view>

#include "ssr/rng.hpp"

namespace ssr {

namespace {

struct Noun {
  std::string_view singular;
  std::string_view plural;
};

struct Verb {
  std::string_view third;  // present, 3rd person singular
  std::string_view base;   // present, plural
  std::string_view past;
};

constexpr std::array<Noun, 28> kNouns{{
    {"dog", "dogs"},           {"cat", "cats"},         {"farmer", "farmers"},
    {"teacher", "teachers"},   {"child", "children"},   {"bird", "birds"},
    {"student", "students"},   {"doctor", "doctors"},   {"horse", "horses"},
    {"city", "cities"},        {"river", "rivers"},     {"company", "companies"},
    {"engineer", "engineers"}, {"writer", "writers"},   {"window", "windows"},
    {"garden", "gardens"},     {"book", "books"},       {"letter", "letters"},
    {"car", "cars"},           {"house", "houses"},     {"tree", "trees"},
    {"friend", "friends"},     {"rocket", "rockets"},   {"machine", "machines"},
    {"village", "villages"},   {"song", "songs"},       {"man", "men"},
    {"woman", "women"},
}};

constexpr std::array<std::string_view, 18> kAdjectives{
    "small", "old",    "young", "quick",  "quiet", "bright", "large", "happy",  "tired",
    "red",   "strange", "famous", "busy", "green", "heavy",  "clever", "gentle", "new",
};

constexpr std::array<Verb, 16> kTransitive{{
    {"sees", "see", "saw"},           {"finds", "find", "found"},
    {"builds", "build", "built"},     {"chases", "chase", "chased"},
    {"visits", "visit", "visited"},   {"writes", "write", "wrote"},
    {"likes", "like", "liked"},       {"follows", "follow", "followed"},
    {"helps", "help", "helped"},      {"carries", "carry", "carried"},
    {"founds", "found", "founded"},   {"joins", "join", "joined"},
    {"paints", "paint", "painted"},   {"reads", "read", "read"},
    {"watches", "watch", "watched"},  {"repairs", "repair", "repaired"},
}};

constexpr std::array<Verb, 10> kIntransitive{{
    {"sleeps", "sleep", "slept"},   {"runs", "run", "ran"},
    {"sings", "sing", "sang"},      {"waits", "wait", "waited"},
    {"laughs", "laugh", "laughed"}, {"works", "work", "worked"},
    {"arrives", "arrive", "arrived"}, {"travels", "travel", "traveled"},
    {"rests", "rest", "rested"},    {"smiles", "smile", "smiled"},
}};

constexpr std::array<std::string_view, 12> kNames{
    "Alice", "Bob", "Carol", "Dmitri", "Elena", "Farid",
    "Grace", "Hiro", "Ines", "Jonas", "Kemal", "Lena",
};

constexpr std::array<std::string_view, 8> kPrepositions{
    "near", "behind", "under", "beside", "with", "from", "across", "inside",
};

constexpr std::array<std::string_view, 7> kAdverbs{
    "quickly", "slowly", "happily", "quietly", "again", "today", "often",
};

constexpr std::array<std::string_view, 4> kSingularDets{"the", "a", "this", "every"};
constexpr std::array<std::string_view, 4> kPluralDets{"the", "these", "some", "many"};

template <class T, std::size_t N>
const T& pick(Rng& rng, const std::array<T, N>& xs) {
  return xs[rng.below(N)];
}

class Builder {
 public:
  explicit Builder(Rng& rng) : rng_(rng) {}

  void word(std::string_view w) {
    if (!out_.empty()) out_.push_back(' ');
    out_ += w;
  }

  // Returns true when the phrase is plural.
  bool noun_phrase(bool allow_pp) {
    if (rng_.bernoulli(0.15)) {
      word(pick(rng_, kNames));
      return false;
    }
    const bool plural = rng_.bernoulli(0.4);
    word(plural ? pick(rng_, kPluralDets) : pick(rng_, kSingularDets));
    if (rng_.bernoulli(0.5)) word(pick(rng_, kAdjectives));
    const auto& n = pick(rng_, kNouns);
    word(plural ? n.plural : n.singular);
    if (allow_pp && rng_.bernoulli(0.2)) prep_phrase();
    return plural;
  }

  void prep_phrase() {
    word(pick(rng_, kPrepositions));
    noun_phrase(false);
  }

  void verb(const Verb& v, bool plural, bool past) {
    word(past ? v.past : (plural ? v.base : v.third));
  }

  void clause(bool past) {
    const bool plural = noun_phrase(true);
    if (rng_.bernoulli(0.6)) {
      verb(pick(rng_, kTransitive), plural, past);
      noun_phrase(true);
    } else {
      verb(pick(rng_, kIntransitive), plural, past);
      if (rng_.bernoulli(0.5)) word(pick(rng_, kAdverbs));
      if (rng_.bernoulli(0.4)) prep_phrase();
    }
  }

  std::string sentence() {
    out_.clear();
    const bool past = rng_.bernoulli(0.5);
    const double form = rng_.uniform();
    if (form < 0.12) {
      char year[16];
      std::snprintf(year, sizeof year, "%d", 1990 + static_cast<int>(rng_.below(30)));
      word("in");
      word(year);
      word(",");
      clause(true);
    } else if (form < 0.24) {
      word(pick(rng_, kNames));
      word(past ? "said" : "says");
      word("that");
      clause(past);
    } else if (form < 0.36) {
      clause(past);
      word(",");
      word(rng_.bernoulli(0.5) ? "and" : "but");
      clause(past);
    } else {
      clause(past);
    }
    word(".");
    // Capitalize the first letter.
    if (!out_.empty() && out_[0] >= 'a' && out_[0] <= 'z') out_[0] = static_cast<char>(out_[0] - 32);
    return out_;
  }

 private:
  Rng& rng_;
  std::string out_;
};

}  // namespace

std::vector<std::string> synthetic_sentences(std::size_t n, std::uint64_t seed) {
  Rng rng(seed, "synthetic-corpus");
  Builder b(rng);
  std::vector<std::string> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(b.sentence());
  return out;
}

std::vector<Document> synthetic_corpus(std::size_t n, std::uint64_t seed) {
  std::vector<Document> docs;
  docs.reserve(n);
  auto sentences = synthetic_sentences(n, seed);
  for (std::size_t i = 0; i < n; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "d%07zu", i + 1);
    docs.push_back({id, std::move(sentences[i])});
  }
  return docs;
}

}  // namespace ssr
