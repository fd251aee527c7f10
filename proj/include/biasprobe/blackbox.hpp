#pragma once

// Client side of the adapter protocol: one JSON object per line over the
// child's stdin/stdout. The child gets one end of a Unix socket pair as both
// stdin and stdout, which lets writes use MSG_NOSIGNAL instead of touching
// the process-wide SIGPIPE disposition.

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <spawn.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "biasprobe/csv.hpp"
#include "biasprobe/errors.hpp"
#include "biasprobe/learners/classifier.hpp"
#include "biasprobe/protocol.hpp"

extern char** environ;

namespace biasprobe {

enum class Transport { Inline, FileReference };

struct AdapterConfig {
  std::vector<std::string> command;  // executable followed by its arguments
  double train_timeout_seconds = 600.0;
  double predict_timeout_seconds = 600.0;
  double shutdown_grace_seconds = 5.0;
  Transport transport = Transport::Inline;
  std::string label = "adapter";

  void validate() const {
    if (command.empty() || command.front().empty()) throw InvalidSpec("adapter command is empty");
    if (!(train_timeout_seconds > 0.0) || !(predict_timeout_seconds > 0.0)) {
      throw InvalidSpec("adapter timeouts must be positive");
    }
    if (!(shutdown_grace_seconds >= 0.0)) throw InvalidSpec("shutdown grace must be >= 0");
  }
};

namespace wire {

using Message = nlohmann::ordered_json;

inline Message features_json(std::span<const FeatureRow> xs) {
  Message rows = Message::array();
  for (const auto& x : xs) rows.push_back(x);
  return rows;
}

inline Message train_inline(std::uint64_t seed, const QuadrantTable& table) {
  Message labels = Message::array();
  for (const auto& r : table.rows()) labels.push_back(r.y ? 1 : 0);
  Message m;
  m["type"] = "train";
  m["seed"] = seed;
  m["features"] = features_json(table.features());
  m["labels"] = std::move(labels);
  return m;
}

inline Message train_file(std::uint64_t seed, const std::string& path) {
  Message m;
  m["type"] = "train";
  m["seed"] = seed;
  m["dataset_path"] = path;
  return m;
}

inline Message predict_inline(std::span<const FeatureRow> xs) {
  Message m;
  m["type"] = "predict";
  m["features"] = features_json(xs);
  return m;
}

inline Message predict_file(const std::string& path) {
  Message m;
  m["type"] = "predict";
  m["dataset_path"] = path;
  return m;
}

inline Message shutdown() {
  Message m;
  m["type"] = "shutdown";
  return m;
}

inline bool known_type(const std::string& t) {
  return t == "train" || t == "trained" || t == "predict" || t == "predictions" || t == "shutdown" || t == "error";
}

// Parses one adapter reply and checks it is of type `expected`. Error replies
// become RemoteError; everything else unexpected is a protocol violation.
inline nlohmann::json parse_reply(const std::string& line, const std::string& expected) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception&) {
    throw ProtocolViolation("malformed adapter message", line);
  }
  if (!j.is_object() || !j.contains("type") || !j["type"].is_string()) {
    throw ProtocolViolation("adapter message lacks a string 'type'", line);
  }
  const std::string type = j["type"];
  if (type == "error") {
    const auto it = j.find("message");
    throw RemoteError(it != j.end() && it->is_string() ? it->get<std::string>() : it != j.end() ? it->dump() : "",
                      line);
  }
  if (!known_type(type)) throw ProtocolViolation("unknown adapter message type '" + type + "'", line);
  if (type != expected) {
    throw ProtocolViolation("expected '" + expected + "' but adapter sent '" + type + "'", line);
  }
  return j;
}

}  // namespace wire

namespace detail {

class TempFile {
 public:
  explicit TempFile(const std::string& stem) {
    std::string tmpl = (std::filesystem::temp_directory_path() / (stem + "-XXXXXX")).string();
    const int fd = ::mkstemp(tmpl.data());
    if (fd < 0) throw Error("cannot create temporary file: " + std::string(std::strerror(errno)));
    ::close(fd);
    path_ = tmpl;
  }
  TempFile(const TempFile&) = delete;
  TempFile& operator=(const TempFile&) = delete;
  ~TempFile() {
    std::error_code ec;
    std::filesystem::remove(path_, ec);
  }
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

}  // namespace detail

// One adapter subprocess holding at most one trained model.
class AdapterSession {
 public:
  explicit AdapterSession(AdapterConfig config) : config_(std::move(config)) {
    config_.validate();
    spawn();
  }
  AdapterSession(const AdapterSession&) = delete;
  AdapterSession& operator=(const AdapterSession&) = delete;
  ~AdapterSession() { shutdown(); }

  const AdapterConfig& config() const noexcept { return config_; }
  bool trained() const noexcept { return trained_; }
  std::optional<double> train_accuracy() const noexcept { return train_accuracy_; }
  std::size_t input_dim() const noexcept { return input_dim_; }

  // Returns the training accuracy the adapter reported, if any.
  std::optional<double> train(const QuadrantTable& table, std::uint64_t seed) {
    if (trained_ || train_attempted_) {
      throw ProtocolViolation("session already holds a model; training twice is not allowed", "");
    }
    train_attempted_ = true;
    std::optional<detail::TempFile> file;
    wire::Message msg;
    if (config_.transport == Transport::FileReference) {
      file.emplace("biasprobe-train");
      std::ofstream os(file->path());
      csv::write_table(os, table);
      if (!os) throw Error("cannot write " + file->path());
      os.close();
      msg = wire::train_file(seed, file->path());
    } else {
      msg = wire::train_inline(seed, table);
    }
    send(msg, "train");
    const auto reply = wire::parse_reply(receive(config_.train_timeout_seconds, "trained"), "trained");
    if (auto it = reply.find("train_accuracy"); it != reply.end() && !it->is_null()) {
      if (!it->is_number()) throw ProtocolViolation("train_accuracy is not a number", reply.dump());
      train_accuracy_ = it->get<double>();
    }
    trained_ = true;
    input_dim_ = table.dim();
    return train_accuracy_;
  }

  std::vector<int> predict(std::span<const FeatureRow> xs) {
    if (!trained_) throw UntrainedModel("adapter session has no trained model");
    std::optional<detail::TempFile> file;
    wire::Message msg;
    if (config_.transport == Transport::FileReference) {
      file.emplace("biasprobe-predict");
      std::ofstream os(file->path());
      csv::write_features(os, xs, input_dim_);
      os.close();
      msg = wire::predict_file(file->path());
    } else {
      msg = wire::predict_inline(xs);
    }
    send(msg, "predict");
    const std::string line = receive(config_.predict_timeout_seconds, "predictions");
    const auto reply = wire::parse_reply(line, "predictions");
    const auto it = reply.find("labels");
    if (it == reply.end() || !it->is_array()) throw ProtocolViolation("predictions lack a 'labels' array", line);
    if (it->size() != xs.size()) {
      throw LengthMismatch("adapter returned " + std::to_string(it->size()) + " labels for " +
                           std::to_string(xs.size()) + " inputs");
    }
    std::vector<int> labels;
    labels.reserve(xs.size());
    for (const auto& v : *it) {
      if (!v.is_number_integer() || (v.get<long long>() != 0 && v.get<long long>() != 1)) {
        throw ProtocolViolation("labels must be 0 or 1", line);
      }
      labels.push_back(v.get<int>());
    }
    return labels;
  }

  // Idempotent. Returns the child's exit code, or 128 + signal number when it
  // had to be killed or died from a signal.
  int shutdown() {
    if (exit_status_) return *exit_status_;
    if (pid_ <= 0) {
      exit_status_ = 0;
      return 0;
    }
    if (fd_ >= 0) {
      const std::string line = wire::shutdown().dump() + "\n";
      (void)::send(fd_, line.data(), line.size(), MSG_NOSIGNAL);
    }
    int status = 0;
    const auto deadline = std::chrono::steady_clock::now() + std::chrono::duration<double>(config_.shutdown_grace_seconds);
    bool reaped = false;
    while (true) {
      const pid_t r = ::waitpid(pid_, &status, WNOHANG);
      if (r == pid_ || (r < 0 && errno != EINTR)) {
        reaped = r == pid_;
        break;
      }
      if (std::chrono::steady_clock::now() >= deadline) break;
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
    if (!reaped) {
      ::kill(pid_, SIGKILL);
      while (::waitpid(pid_, &status, 0) < 0 && errno == EINTR) {
      }
    }
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
    pid_ = -1;
    exit_status_ = WIFEXITED(status) ? WEXITSTATUS(status) : WIFSIGNALED(status) ? 128 + WTERMSIG(status) : 1;
    return *exit_status_;
  }

 private:
  void spawn() {
    int sv[2];
    if (::socketpair(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0, sv) != 0) {
      throw SpawnFailure("socketpair failed: " + std::string(std::strerror(errno)));
    }
    posix_spawn_file_actions_t actions;
    posix_spawn_file_actions_init(&actions);
    posix_spawn_file_actions_adddup2(&actions, sv[1], STDIN_FILENO);
    posix_spawn_file_actions_adddup2(&actions, sv[1], STDOUT_FILENO);
    std::vector<char*> argv;
    for (auto& a : config_.command) argv.push_back(a.data());
    argv.push_back(nullptr);
    pid_t pid = -1;
    const int rc = ::posix_spawnp(&pid, argv[0], &actions, nullptr, argv.data(), environ);
    posix_spawn_file_actions_destroy(&actions);
    ::close(sv[1]);
    if (rc != 0) {
      ::close(sv[0]);
      throw SpawnFailure("cannot start '" + config_.command.front() + "': " + std::strerror(rc));
    }
    pid_ = pid;
    fd_ = sv[0];
  }

  void send(const wire::Message& msg, const char* what) {
    const std::string line = msg.dump() + "\n";
    std::size_t off = 0;
    while (off < line.size()) {
      const ssize_t n = ::send(fd_, line.data() + off, line.size() - off, MSG_NOSIGNAL);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw SpawnFailure(std::string("adapter closed its input before the ") + what +
                           " request was delivered: " + std::strerror(errno));
      }
      off += static_cast<std::size_t>(n);
    }
  }

  std::string receive(double timeout_seconds, const char* expected) {
    const auto deadline = std::chrono::steady_clock::now() + std::chrono::duration<double>(timeout_seconds);
    while (true) {
      if (auto nl = buffer_.find('\n'); nl != std::string::npos) {
        std::string line = buffer_.substr(0, nl);
        buffer_.erase(0, nl + 1);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        return line;
      }
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
      if (left.count() <= 0) {
        throw Timeout("adapter did not send '" + std::string(expected) + "' within " +
                      csv::number(timeout_seconds) + " s");
      }
      pollfd p{fd_, POLLIN, 0};
      const int r = ::poll(&p, 1, static_cast<int>(std::min<long long>(left.count(), 1 << 30)));
      if (r < 0 && errno == EINTR) continue;
      if (r < 0) throw Error("poll failed: " + std::string(std::strerror(errno)));
      if (r == 0) continue;
      char buf[65536];
      const ssize_t n = ::recv(fd_, buf, sizeof buf, 0);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) {
        if (!buffer_.empty()) throw ProtocolViolation("adapter exited mid-message", buffer_);
        throw SpawnFailure("adapter exited before sending '" + std::string(expected) + "'");
      }
      buffer_.append(buf, static_cast<std::size_t>(n));
    }
  }

  AdapterConfig config_;
  pid_t pid_ = -1;
  int fd_ = -1;
  std::string buffer_;
  bool train_attempted_ = false;
  bool trained_ = false;
  std::size_t input_dim_ = 0;
  std::optional<double> train_accuracy_;
  std::optional<int> exit_status_;
};

inline std::unique_ptr<AdapterSession> adapter_train(const AdapterConfig& config, const QuadrantTable& table,
                                                     std::uint64_t seed) {
  auto s = std::make_unique<AdapterSession>(config);
  s->train(table, seed);
  return s;
}

inline std::vector<int> adapter_predict(AdapterSession& session, std::span<const FeatureRow> xs) {
  return session.predict(xs);
}

inline int adapter_shutdown(AdapterSession& session) { return session.shutdown(); }

// Classifier view of a trained session. predict() serialises access to the
// pipe, so the model may be shared even though the session is stateful.
class AdapterModel final : public Classifier {
 public:
  explicit AdapterModel(std::unique_ptr<AdapterSession> session) : session_(std::move(session)) {
    if (!session_ || !session_->trained()) throw UntrainedModel("adapter model needs a trained session");
  }

  std::string name() const override { return "BB:" + session_->config().label; }
  std::size_t input_dim() const override { return session_->input_dim(); }
  std::vector<int> predict(std::span<const FeatureRow> xs) const override {
    std::lock_guard lock(mutex_);
    return session_->predict(xs);
  }
  TrainDiagnostics diagnostics() const override {
    TrainDiagnostics d;
    d.converged = true;
    return d;
  }
  int shutdown() {
    std::lock_guard lock(mutex_);
    return session_->shutdown();
  }

 private:
  std::unique_ptr<AdapterSession> session_;
  mutable std::mutex mutex_;
};

}  // namespace biasprobe
