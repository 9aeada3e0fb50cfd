// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace qebench {

// All library failures derive from Error and carry a short machine-readable
// code ("dimension", "config", ...) so the CLI can emit one-line diagnostics.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& msg)
      : std::runtime_error(msg), code_(std::move(code)) {}
  const std::string& code() const { return code_; }

 private:
  std::string code_;
};

struct DimensionError : Error {
  explicit DimensionError(const std::string& msg) : Error("dimension", msg) {}
};

struct DomainError : Error {
  explicit DomainError(const std::string& msg) : Error("domain", msg) {}
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& msg) : Error("config", msg) {}
};

struct LookupError : Error {
  explicit LookupError(const std::string& msg) : Error("lookup", msg) {}
};

struct DataError : Error {
  explicit DataError(const std::string& msg) : Error("data", msg) {}
};

struct IoError : Error {
  explicit IoError(const std::string& msg) : Error("io", msg) {}
};

struct NumericError : Error {
  explicit NumericError(const std::string& msg) : Error("numeric", msg) {}
};

// Raised when a training loss goes non-finite; carries enough state to
// reproduce the failure point.
class TrainingDiverged : public NumericError {
 public:
  TrainingDiverged(std::size_t step, double loss, double param_norm,
                   const std::string& msg)
      : NumericError(msg), step_(step), loss_(loss), param_norm_(param_norm) {}
  std::size_t step() const { return step_; }
  double loss() const { return loss_; }
  double param_norm() const { return param_norm_; }

 private:
  std::size_t step_;
  double loss_;
  double param_norm_;
};

}  // namespace qebench
