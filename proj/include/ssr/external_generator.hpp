#pragma once

#include <chrono>
#include <string>
#include <sys/types.h>

#include "ssr/generators.hpp"

namespace ssr {

// Child process speaking line-delimited JSON on stdin/stdout.
class ChildProcess {
 public:
  /// Runs `command` through /bin/sh -c.
  explicit ChildProcess(const std::string& command);
  ~ChildProcess();
  ChildProcess(const ChildProcess&) = delete;
  ChildProcess& operator=(const ChildProcess&) = delete;

  void write_line(const std::string& line);
  /// Reads one line without the trailing newline; throws on timeout or EOF.
  std::string read_line(std::chrono::milliseconds timeout);

 private:
  pid_t pid_ = -1;
  int to_child_ = -1;
  int from_child_ = -1;
  std::string buffer_;
};

/// {"id": ..., "masked": [surface tokens with literal M_i], "n_spans": n}
std::string external_request(const SpanMask& mask, const Vocab& vocab);

/// Parses {"id": ..., "spans": [{"tokens": [...], "nll": [...]}]} and checks it
/// against the request. Errors quote the offending line.
GeneratorOutput parse_external_response(const std::string& line, const std::string& expected_id,
                                        std::size_t n_spans, const Vocab& vocab);

class ExternalGenerator final : public SpanGenerator {
 public:
  ExternalGenerator(std::string command, const Vocab& vocab,
                    std::chrono::milliseconds timeout = std::chrono::seconds(30))
      : command_(std::move(command)), vocab_(&vocab), timeout_(timeout) {}

  std::string name() const override { return "external"; }
  bool concurrent() const override { return false; }
  GeneratorOutput fill(const SpanMask& mask, Rng& rng) override;

 private:
  std::string command_;
  const Vocab* vocab_;
  std::chrono::milliseconds timeout_;
  std::unique_ptr<ChildProcess> child_;
};

}  // namespace ssr
