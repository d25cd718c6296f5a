#pragma once

#include <stdexcept>
#include <string>

namespace symc {

/// Error category; the CLI maps categories to exit codes.
enum class ErrorKind {
  InvalidDimension,
  SingularMatrix,
  Precondition,
  DegeneratePairing,
  ConeViolation,
  UndefinedAngle,
  NoGap,
  Horizon,
  Format,
  Numeric,
  Parameter,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

  /// True for failures of the input rather than of the computation.
  bool is_validation() const noexcept {
    return kind_ != ErrorKind::Numeric && kind_ != ErrorKind::SingularMatrix &&
           kind_ != ErrorKind::NoGap;
  }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

}  // namespace symc
