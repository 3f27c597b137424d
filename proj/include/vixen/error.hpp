#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace vixen {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shapes of two operands do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(std::vector<std::string> problems);
  const std::vector<std::string>& problems() const noexcept { return problems_; }

 private:
  std::vector<std::string> problems_;
};

class TokenError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

/// Raised by adapters; the message always carries the adapter name.
class AdapterError : public Error {
 public:
  AdapterError(std::string adapter, const std::string& what);
  const std::string& adapter() const noexcept { return adapter_; }

 private:
  std::string adapter_;
};

class ImageIoError : public Error {
 public:
  using Error::Error;
};

}  // namespace vixen
