#include "ssr/external_generator.hpp"

#include <cerrno>
#include <csignal>
#include <cstring>
#include <fcntl.h>
#include <poll.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cmath>

#include "json.hpp"
#include "ssr/error.hpp"

namespace ssr {

ChildProcess::ChildProcess(const std::string& command) {
  std::signal(SIGPIPE, SIG_IGN);
  int in_pipe[2];
  int out_pipe[2];
  if (pipe(in_pipe) != 0) throw Error("pipe failed: " + std::string(std::strerror(errno)));
  if (pipe(out_pipe) != 0) {
    close(in_pipe[0]);
    close(in_pipe[1]);
    throw Error("pipe failed: " + std::string(std::strerror(errno)));
  }
  pid_ = fork();
  if (pid_ < 0) throw Error("fork failed: " + std::string(std::strerror(errno)));
  if (pid_ == 0) {
    dup2(in_pipe[0], STDIN_FILENO);
    dup2(out_pipe[1], STDOUT_FILENO);
    close(in_pipe[0]);
    close(in_pipe[1]);
    close(out_pipe[0]);
    close(out_pipe[1]);
    execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
    _exit(127);
  }
  close(in_pipe[0]);
  close(out_pipe[1]);
  to_child_ = in_pipe[1];
  from_child_ = out_pipe[0];
  fcntl(to_child_, F_SETFD, FD_CLOEXEC);
  fcntl(from_child_, F_SETFD, FD_CLOEXEC);
}

ChildProcess::~ChildProcess() {
  if (to_child_ >= 0) close(to_child_);
  if (from_child_ >= 0) close(from_child_);
  if (pid_ > 0) {
    // Give the child a moment to exit on EOF, then make sure it is gone.
    for (int i = 0; i < 50; ++i) {
      if (waitpid(pid_, nullptr, WNOHANG) == pid_) return;
      usleep(2000);
    }
    kill(pid_, SIGKILL);
    waitpid(pid_, nullptr, 0);
  }
}

void ChildProcess::write_line(const std::string& line) {
  std::string data = line + "\n";
  std::size_t off = 0;
  while (off < data.size()) {
    const auto n = write(to_child_, data.data() + off, data.size() - off);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error("external generator write failed: " + std::string(std::strerror(errno)));
    }
    off += static_cast<std::size_t>(n);
  }
}

std::string ChildProcess::read_line(std::chrono::milliseconds timeout) {
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  for (;;) {
    const auto nl = buffer_.find('\n');
    if (nl != std::string::npos) {
      std::string line = buffer_.substr(0, nl);
      buffer_.erase(0, nl + 1);
      return line;
    }
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
        deadline - std::chrono::steady_clock::now());
    if (left.count() <= 0) throw Error("external generator timeout");
    pollfd pfd{from_child_, POLLIN, 0};
    const int rc = poll(&pfd, 1, static_cast<int>(left.count()));
    if (rc < 0) {
      if (errno == EINTR) continue;
      throw Error("external generator poll failed: " + std::string(std::strerror(errno)));
    }
    if (rc == 0) throw Error("external generator timeout");
    char chunk[4096];
    const auto n = read(from_child_, chunk, sizeof chunk);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error("external generator read failed: " + std::string(std::strerror(errno)));
    }
    if (n == 0) throw Error("external generator exited before responding");
    buffer_.append(chunk, static_cast<std::size_t>(n));
  }
}

std::string external_request(const SpanMask& mask, const Vocab& vocab) {
  const auto pair = apply_mask(mask, vocab);
  nlohmann::json j;
  j["id"] = mask.seq.doc_id;
  j["masked"] = surfaces(pair.source.ids, vocab);
  j["n_spans"] = mask.spans.size();
  return j.dump();
}

GeneratorOutput parse_external_response(const std::string& line, const std::string& expected_id,
                                        std::size_t n_spans, const Vocab& vocab) {
  auto fail = [&](const std::string& why) -> Error {
    return Error("malformed external generator response (" + why + "): " + line);
  };
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception&) {
    throw fail("invalid JSON");
  }
  if (!j.is_object()) throw fail("not an object");
  if (!j.contains("id") || !j["id"].is_string()) throw fail("missing string field \"id\"");
  if (j["id"].get<std::string>() != expected_id) throw fail("id mismatch");
  if (!j.contains("spans") || !j["spans"].is_array()) throw fail("missing array field \"spans\"");
  const auto& spans = j["spans"];
  if (spans.size() != n_spans) throw fail("expected " + std::to_string(n_spans) + " spans");
  GeneratorOutput out;
  for (const auto& s : spans) {
    if (!s.is_object()) throw fail("span is not an object");
    if (!s.contains("tokens") || !s["tokens"].is_array()) throw fail("missing array field \"tokens\"");
    if (!s.contains("nll") || !s["nll"].is_array()) throw fail("missing array field \"nll\"");
    if (s["tokens"].size() != s["nll"].size()) throw fail("nll not aligned with tokens");
    SpanFill f;
    for (const auto& t : s["tokens"]) {
      if (!t.is_string()) throw fail("token is not a string");
      const auto surface = t.get<std::string>();
      if (auto id = vocab.find(surface); id && vocab.is_special(*id)) {
        throw fail("special token in span: " + surface);
      }
      f.imperfect_ids.push_back(vocab.id_or_unk(surface));
    }
    for (const auto& x : s["nll"]) {
      if (!x.is_number()) throw fail("nll is not a number");
      const double v = x.get<double>();
      if (!std::isfinite(v) || v < 0.0) throw fail("nll must be finite and non-negative");
      f.nll.push_back(v);
    }
    out.spans.push_back(std::move(f));
  }
  return out;
}

GeneratorOutput ExternalGenerator::fill(const SpanMask& mask, Rng&) {
  if (!child_) child_ = std::make_unique<ChildProcess>(command_);
  child_->write_line(external_request(mask, *vocab_));
  const auto line = child_->read_line(timeout_);
  return parse_external_response(line, mask.seq.doc_id, mask.spans.size(), *vocab_);
}

}  // namespace ssr
