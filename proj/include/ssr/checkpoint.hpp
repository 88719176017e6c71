#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "ssr/model.hpp"

namespace ssr {

struct AdamState {
  ModelParams m;
  ModelParams v;
  std::size_t t = 0;
};

struct Checkpoint {
  ModelParams params;
  std::optional<AdamState> adam;
  std::size_t step = 0;
  std::string rng_state;
  std::string objective;          // dataset mode trained last; empty for a fresh model
  std::string vocab_fingerprint;  // hex
};

// Layout: "SSRCKPT1\n", u64 little-endian header length, JSON header
// {config, step, rng_state, objective, vocab_fingerprint, adam_t,
//  tensors:[{name, shape:[rows, cols], offset}]}, then the tensors as
// little-endian float64 in header order (row-major), offsets in values.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string fingerprint_hex(std::uint64_t fp);

}  // namespace ssr
