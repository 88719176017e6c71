#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ssr/corpus.hpp"

namespace ssr {

// Sentences from a small agreement-respecting English-like grammar
// (determiners, adjectives, subject-verb number agreement, tense,
// prepositional phrases, clause embedding). Deterministic in the seed.
std::vector<std::string> synthetic_sentences(std::size_t n, std::uint64_t seed);

/// Same sentences wrapped as documents with ids "d0000001", ...
std::vector<Document> synthetic_corpus(std::size_t n, std::uint64_t seed);

}  // namespace ssr
