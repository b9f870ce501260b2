#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace crs {

// Exit codes surfaced by the command-line tool.
enum class ExitCode : int {
  Ok = 0,
  Validation = 2,
  Leakage = 3,
  ReplayMiss = 4,
  Numeric = 5,
};

class Error : public std::runtime_error {
 public:
  Error(ExitCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ExitCode code() const noexcept { return code_; }

 private:
  ExitCode code_;
};

class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& what) : Error(ExitCode::Validation, what) {}
};

struct LeakageViolation {
  std::string feature;
  std::string pattern;
  bool operator==(const LeakageViolation&) const = default;
};

class LeakageError : public Error {
 public:
  explicit LeakageError(std::vector<LeakageViolation> violations);
  const std::vector<LeakageViolation>& violations() const noexcept { return violations_; }

 private:
  std::vector<LeakageViolation> violations_;
};

class ReplayMissError : public Error {
 public:
  ReplayMissError(std::string prompt_hash, int replicate_index);
  const std::string& prompt_hash() const noexcept { return hash_; }

 private:
  std::string hash_;
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(ExitCode::Numeric, what) {}
};

}  // namespace crs
