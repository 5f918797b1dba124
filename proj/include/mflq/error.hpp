#pragma once

#include <functional>
#include <iostream>
#include <stdexcept>
#include <string>
#include <string_view>

namespace mflq {

enum class ErrorKind {
  DimensionMismatch,
  Asymmetric,
  NotSolvable,
  NotStabilizer,
  PdcViolated,
  SingularInnerTerm,
  RankDeficient,
  MaxIterationsExceeded,
  Diverged,
  Parse,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::Asymmetric: return "Asymmetric";
    case ErrorKind::NotSolvable: return "NotSolvable";
    case ErrorKind::NotStabilizer: return "NotStabilizer";
    case ErrorKind::PdcViolated: return "PdcViolated";
    case ErrorKind::SingularInnerTerm: return "SingularInnerTerm";
    case ErrorKind::RankDeficient: return "RankDeficient";
    case ErrorKind::MaxIterationsExceeded: return "MaxIterationsExceeded";
    case ErrorKind::Diverged: return "Diverged";
    case ErrorKind::Parse: return "Parse";
  }
  return "Unknown";
}

/// Exception carrying a machine-readable kind. The CLI maps kinds to exit codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Thrown by the least-squares solver; carries the measured numerical rank.
class RankDeficientError : public Error {
 public:
  RankDeficientError(const std::string& what, long rank, long required)
      : Error(ErrorKind::RankDeficient,
              what + " (numerical rank " + std::to_string(rank) + " < " +
                  std::to_string(required) + ")"),
        rank_(rank),
        required_(required) {}

  long rank() const noexcept { return rank_; }
  long required() const noexcept { return required_; }

 private:
  long rank_;
  long required_;
};

/// Thrown by the simulator when a state leaves the finite range.
class DivergedError : public Error {
 public:
  DivergedError(const std::string& what, long step)
      : Error(ErrorKind::Diverged, what + " (first non-finite state at step " +
                                       std::to_string(step) + ")"),
        step_(step) {}

  long step() const noexcept { return step_; }

 private:
  long step_;
};

using WarningHandler = std::function<void(std::string_view)>;

inline WarningHandler& warning_handler() {
  static WarningHandler handler = [](std::string_view msg) {
    std::cerr << "[mflq] warning: " << msg << '\n';
  };
  return handler;
}

inline void set_warning_handler(WarningHandler handler) {
  warning_handler() = std::move(handler);
}

inline void warn(std::string_view msg) {
  if (warning_handler()) warning_handler()(msg);
}

}  // namespace mflq
