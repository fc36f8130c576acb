#pragma once

#include <stdexcept>
#include <string>

namespace stsx {

/// Base class for every error raised by the library. `kind()` is a short
/// machine-parsable tag used by the CLI when reporting failures.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define STSX_DEFINE_ERROR(Name, tag)                                   \
  class Name : public Error {                                          \
   public:                                                             \
    explicit Name(const std::string& message) : Error(tag, message) {} \
  };

STSX_DEFINE_ERROR(DimensionError, "dimension")
STSX_DEFINE_ERROR(ContractError, "contract")
STSX_DEFINE_ERROR(BoundsError, "bounds")
STSX_DEFINE_ERROR(NumericError, "numeric")
STSX_DEFINE_ERROR(NotFoundError, "not-found")
STSX_DEFINE_ERROR(IntegrityError, "integrity")
STSX_DEFINE_ERROR(ConfigError, "config")
STSX_DEFINE_ERROR(IoError, "io")

#undef STSX_DEFINE_ERROR

}  // namespace stsx
