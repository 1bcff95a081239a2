#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ivhazard {

// Exit codes used by the command-line front end; library consumers can map
// exception types to their own handling instead.
enum class ExitCode : int {
  ok = 0,
  usage = 2,
  data = 3,
  estimation = 4,
  vce = 5,
};

class Error : public std::runtime_error {
 public:
  Error(ExitCode code, const std::string& what_arg)
      : std::runtime_error(what_arg), code_(code) {}
  ExitCode code() const noexcept { return code_; }

 private:
  ExitCode code_;
};

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& msg) : Error(ExitCode::usage, msg) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& msg) : Error(ExitCode::data, msg) {}
};

class EstimationError : public Error {
 public:
  explicit EstimationError(const std::string& msg)
      : Error(ExitCode::estimation, msg) {}
};

class VceError : public Error {
 public:
  explicit VceError(const std::string& msg) : Error(ExitCode::vce, msg) {}
};

// Thrown by the linear algebra kernel when a factorization meets a pivot it
// must treat as zero.  pivot_index is zero-based.
class SingularMatrixError : public VceError {
 public:
  SingularMatrixError(std::size_t pivot_index, const std::string& msg)
      : VceError(msg), pivot_index_(pivot_index) {}
  std::size_t pivot_index() const noexcept { return pivot_index_; }

 private:
  std::size_t pivot_index_;
};

}  // namespace ivhazard
