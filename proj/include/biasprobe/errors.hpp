#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace biasprobe {

// Root of every error raised by the library. Callers that only need a
// diagnostic can catch this; the subclasses carry structured detail.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidSpec : public Error {
 public:
  using Error::Error;
};

// Correlation between discriminant and distractor is undefined because the
// distractor is constant (beta in {0, 1}).
class DegenerateCorrelation : public Error {
 public:
  using Error::Error;
};

class InsufficientQuadrant : public Error {
 public:
  InsufficientQuadrant(bool z_disc, bool z_dist, std::size_t needed, std::size_t available)
      : Error("quadrant (z_disc=" + std::to_string(int(z_disc)) + ", z_dist=" +
              std::to_string(int(z_dist)) + ") needs " + std::to_string(needed) +
              " rows but only " + std::to_string(available) + " are available (shortfall " +
              std::to_string(needed - available) + ")"),
        z_disc_(z_disc),
        z_dist_(z_dist),
        shortfall_(needed - available) {}

  bool z_disc() const noexcept { return z_disc_; }
  bool z_dist() const noexcept { return z_dist_; }
  std::size_t shortfall() const noexcept { return shortfall_; }

 private:
  bool z_disc_;
  bool z_dist_;
  std::size_t shortfall_;
};

class UnknownAttribute : public Error {
 public:
  explicit UnknownAttribute(const std::string& name)
      : Error("unknown attribute '" + name + "'"), name_(name) {}
  const std::string& name() const noexcept { return name_; }

 private:
  std::string name_;
};

class OverlappingAttributes : public Error {
 public:
  using Error::Error;
};

class SingleClassData : public Error {
 public:
  using Error::Error;
};

class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

class SizeCapExceeded : public Error {
 public:
  using Error::Error;
};

class NotPositiveDefinite : public Error {
 public:
  using Error::Error;
};

class UntrainedModel : public Error {
 public:
  using Error::Error;
};

class EmptyInput : public Error {
 public:
  using Error::Error;
};

class LengthMismatch : public Error {
 public:
  using Error::Error;
};

class DegenerateDesign : public Error {
 public:
  using Error::Error;
};

class OutOfRange : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

// Adapter sent something the wire protocol does not allow. raw() holds the
// offending bytes, cut at 4 KiB.
class ProtocolViolation : public Error {
 public:
  static constexpr std::size_t kMaxRaw = 4096;

  ProtocolViolation(const std::string& what, std::string raw)
      : Error(what + (raw.empty() ? std::string() : ": " + truncate(raw))), raw_(truncate(std::move(raw))) {}
  const std::string& raw() const noexcept { return raw_; }

 private:
  static std::string truncate(std::string s) {
    if (s.size() > kMaxRaw) s.resize(kMaxRaw);
    return s;
  }
  std::string raw_;
};

class SpawnFailure : public Error {
 public:
  using Error::Error;
};

class Timeout : public Error {
 public:
  using Error::Error;
};

// Adapter answered with an error message; the message is kept verbatim.
class RemoteError : public Error {
 public:
  RemoteError(const std::string& message, std::string raw)
      : Error("adapter error: " + message), message_(message), raw_(std::move(raw)) {
    if (raw_.size() > ProtocolViolation::kMaxRaw) raw_.resize(ProtocolViolation::kMaxRaw);
  }
  const std::string& message() const noexcept { return message_; }
  const std::string& raw() const noexcept { return raw_; }

 private:
  std::string message_;
  std::string raw_;
};

// A training/evaluation job failed and the plan did not ask to keep going.
class JobFailure : public Error {
 public:
  using Error::Error;
};

}  // namespace biasprobe
