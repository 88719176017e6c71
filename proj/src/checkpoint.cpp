#include "ssr/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include "json.hpp"

#include "ssr/error.hpp"

namespace ssr {

namespace {

constexpr char kMagic[] = "SSRCKPT1\n";
constexpr std::size_t kMagicLen = sizeof(kMagic) - 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

nlohmann::ordered_json config_json(const ModelConfig& c) {
  return {{"n_layers", c.n_layers},     {"n_heads", c.n_heads},
          {"d_model", c.d_model},       {"d_ff", c.d_ff},
          {"vocab_size", c.vocab_size}, {"max_rel_distance", c.max_rel_distance},
          {"dropout", c.dropout},       {"max_decode_len", c.max_decode_len}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.n_layers = j.at("n_layers").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.d_model = j.at("d_model").get<int>();
  c.d_ff = j.at("d_ff").get<int>();
  c.vocab_size = j.at("vocab_size").get<int>();
  c.max_rel_distance = j.at("max_rel_distance").get<int>();
  c.dropout = j.at("dropout").get<double>();
  c.max_decode_len = j.at("max_decode_len").get<int>();
  return c;
}

using NamedTensors = std::vector<std::pair<std::string, const Mat*>>;

NamedTensors all_tensors(const Checkpoint& ck) {
  NamedTensors out = ck.params.tensors();
  if (ck.adam) {
    for (const auto& [n, m] : ck.adam->m.tensors()) out.emplace_back("adam.m." + n, m);
    for (const auto& [n, m] : ck.adam->v.tensors()) out.emplace_back("adam.v." + n, m);
  }
  return out;
}

}  // namespace

std::string fingerprint_hex(std::uint64_t fp) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fp));
  return buf;
}

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  const auto tensors = all_tensors(ck);
  nlohmann::ordered_json header;
  header["config"] = config_json(ck.params.config);
  header["step"] = ck.step;
  header["rng_state"] = ck.rng_state;
  header["objective"] = ck.objective;
  header["vocab_fingerprint"] = ck.vocab_fingerprint;
  header["adam_t"] = ck.adam ? nlohmann::ordered_json(ck.adam->t) : nlohmann::ordered_json(nullptr);
  auto& list = header["tensors"] = nlohmann::ordered_json::array();
  std::size_t offset = 0;
  for (const auto& [name, m] : tensors) {
    list.push_back({{"name", name}, {"shape", {m->rows(), m->cols()}}, {"offset", offset}});
    offset += static_cast<std::size_t>(m->size());
  }
  const std::string text = header.dump();

  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write checkpoint: " + path.string());
    out.write(kMagic, kMagicLen);
    const std::uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    std::vector<double> row;
    for (const auto& [name, m] : tensors) {
      row.resize(static_cast<std::size_t>(m->cols()));
      for (Eigen::Index r = 0; r < m->rows(); ++r) {
        for (Eigen::Index c = 0; c < m->cols(); ++c) row[static_cast<std::size_t>(c)] = (*m)(r, c);
        out.write(reinterpret_cast<const char*>(row.data()),
                  static_cast<std::streamsize>(row.size() * sizeof(double)));
      }
    }
    if (!out) throw Error("cannot write checkpoint: " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint: " + path.string());
  char magic[kMagicLen];
  in.read(magic, kMagicLen);
  if (!in || std::memcmp(magic, kMagic, kMagicLen) != 0) {
    throw Error("not a checkpoint file: " + path.string());
  }
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || len > (1ULL << 30)) throw Error("corrupt checkpoint header: " + path.string());
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw Error("corrupt checkpoint header: " + path.string());

  Checkpoint ck;
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
    const auto cfg = config_from_json(header.at("config"));
    ck.params = zero_params(cfg);
    ck.step = header.at("step").get<std::size_t>();
    ck.rng_state = header.at("rng_state").get<std::string>();
    ck.objective = header.at("objective").get<std::string>();
    ck.vocab_fingerprint = header.at("vocab_fingerprint").get<std::string>();
    if (!header.at("adam_t").is_null()) {
      ck.adam = AdamState{zero_params(cfg), zero_params(cfg), header.at("adam_t").get<std::size_t>()};
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error("corrupt checkpoint header: " + path.string() + ": " + e.what());
  }

  std::vector<std::pair<std::string, Mat*>> targets = ck.params.tensors();
  if (ck.adam) {
    for (const auto& [n, m] : ck.adam->m.tensors()) targets.emplace_back("adam.m." + n, m);
    for (const auto& [n, m] : ck.adam->v.tensors()) targets.emplace_back("adam.v." + n, m);
  }
  const auto& list = header.at("tensors");
  if (list.size() != targets.size()) throw Error("checkpoint tensor list mismatch: " + path.string());
  std::size_t expected_offset = 0;
  std::vector<double> row;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    auto& [name, m] = targets[i];
    const auto& entry = list[i];
    if (entry.at("name").get<std::string>() != name ||
        entry.at("shape")[0].get<Eigen::Index>() != m->rows() ||
        entry.at("shape")[1].get<Eigen::Index>() != m->cols() ||
        entry.at("offset").get<std::size_t>() != expected_offset) {
      throw Error("checkpoint tensor mismatch at " + name + ": " + path.string());
    }
    row.resize(static_cast<std::size_t>(m->cols()));
    for (Eigen::Index r = 0; r < m->rows(); ++r) {
      in.read(reinterpret_cast<char*>(row.data()),
              static_cast<std::streamsize>(row.size() * sizeof(double)));
      if (!in) throw Error("truncated checkpoint: " + path.string());
      for (Eigen::Index c = 0; c < m->cols(); ++c) (*m)(r, c) = row[static_cast<std::size_t>(c)];
    }
    expected_offset += static_cast<std::size_t>(m->size());
  }
  if (in.peek() != std::char_traits<char>::eof()) throw Error("trailing bytes in checkpoint: " + path.string());
  return ck;
}

}  // namespace ssr
