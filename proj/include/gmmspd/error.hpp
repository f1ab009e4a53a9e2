#pragma once

#include <stdexcept>
#include <string>

namespace gmmspd {

// Exit codes used by the command line front end.
enum class ExitCode : int { ok = 0, usage = 1, data = 2, numerical = 3 };

class Error : public std::runtime_error {
public:
  Error(ExitCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ExitCode code() const noexcept { return code_; }
  int exit_code() const noexcept { return static_cast<int>(code_); }

private:
  ExitCode code_;
};

// Bad arguments or configuration.
class UsageError : public Error {
public:
  explicit UsageError(const std::string& what) : Error(ExitCode::usage, what) {}
};

// Malformed, missing or incompatible input data.
class DataError : public Error {
public:
  explicit DataError(const std::string& what) : Error(ExitCode::data, what) {}
};

// Shapes of two operands do not agree.
class DimensionError : public DataError {
public:
  explicit DimensionError(const std::string& what) : DataError(what) {}
};

// Eigensolver failure, loss of definiteness and the like.
class NumericalError : public Error {
public:
  explicit NumericalError(const std::string& what) : Error(ExitCode::numerical, what) {}
};

}  // namespace gmmspd
