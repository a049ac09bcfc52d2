#pragma once

#include <stdexcept>
#include <string>

namespace vtb {

// Base of every error the toolkit throws. `kind()` is a stable machine-readable
// tag used by the CLI error records.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

struct StructuralError : Error {
  explicit StructuralError(const std::string& m) : Error("structural", m) {}
};

struct InvalidArgument : Error {
  explicit InvalidArgument(const std::string& m) : Error("invalid_argument", m) {}
};

struct IoError : Error {
  explicit IoError(const std::string& m) : Error("io", m) {}
};

struct FormatError : Error {
  explicit FormatError(const std::string& m) : Error("format", m) {}
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& m) : Error("config", m) {}
};

struct NumericError : Error {
  explicit NumericError(const std::string& m) : Error("numeric", m) {}
};

// Bad flag combinations or arguments on the command line.
struct UsageError : Error {
  explicit UsageError(const std::string& m) : Error("usage", m) {}
};

struct ClientError : Error {
  explicit ClientError(const std::string& m) : Error("client", m) {}
};

}  // namespace vtb
