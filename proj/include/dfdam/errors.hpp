#pragma once

#include <stdexcept>
#include <string>

namespace dfdam {

enum class ErrorKind { kContract, kConfig, kShape, kFormat, kNumeric, kIo };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

struct ContractError : Error {
  explicit ContractError(const std::string& w) : Error(ErrorKind::kContract, w) {}
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& w) : Error(ErrorKind::kConfig, w) {}
};

struct ShapeError : Error {
  explicit ShapeError(const std::string& w) : Error(ErrorKind::kShape, w) {}
};

struct FormatError : Error {
  explicit FormatError(const std::string& w) : Error(ErrorKind::kFormat, w) {}
};

struct NumericError : Error {
  explicit NumericError(const std::string& w) : Error(ErrorKind::kNumeric, w) {}
};

struct IoError : Error {
  explicit IoError(const std::string& w) : Error(ErrorKind::kIo, w) {}
};

}  // namespace dfdam
