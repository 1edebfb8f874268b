#pragma once

#include <stdexcept>
#include <string>

namespace vog {

// Exit codes used by the command line tool.
enum class ExitCode : int {
  kOk = 0,
  kConfig = 2,
  kData = 3,
  kContract = 4,
};

class Error : public std::runtime_error {
 public:
  Error(ExitCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ExitCode code() const { return code_; }

 private:
  ExitCode code_;
};

// Bad configuration or conflicting options.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what)
      : Error(ExitCode::kConfig, "config error: " + what) {}
};

// Malformed or inconsistent input data (parse, validation, missing files).
class DataError : public Error {
 public:
  explicit DataError(const std::string& what)
      : Error(ExitCode::kData, "data error: " + what) {}
};

// A precondition of an operation was violated by the caller.
class ContractError : public Error {
 public:
  explicit ContractError(const std::string& what)
      : Error(ExitCode::kContract, "contract error: " + what) {}
};

// Tensor shape mismatch; a contract violation with a dedicated type so tests
// can tell it apart.
class ShapeError : public ContractError {
 public:
  explicit ShapeError(const std::string& what) : ContractError("shape: " + what) {}
};

}  // namespace vog
