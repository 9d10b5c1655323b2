#pragma once

#include <stdexcept>
#include <string>

namespace pfmn {

enum class ErrorKind {
  kDimension,
  kDomain,
  kConfig,
  kContract,
  kFormat,
  kIo,
  kDecode,
  kNumeric,
};

const char* to_string(ErrorKind kind) noexcept;

/// Base of every exception thrown by the library. The kind drives CLI exit codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define PFMN_DEFINE_ERROR(Name, Kind)                                       \
  class Name : public Error {                                               \
   public:                                                                  \
    explicit Name(const std::string& what) : Error(ErrorKind::Kind, what) {} \
  };

PFMN_DEFINE_ERROR(DimensionError, kDimension)
PFMN_DEFINE_ERROR(DomainError, kDomain)
PFMN_DEFINE_ERROR(ConfigError, kConfig)
PFMN_DEFINE_ERROR(ContractError, kContract)
PFMN_DEFINE_ERROR(FormatError, kFormat)
PFMN_DEFINE_ERROR(IoError, kIo)
PFMN_DEFINE_ERROR(DecodeError, kDecode)
PFMN_DEFINE_ERROR(NumericError, kNumeric)

#undef PFMN_DEFINE_ERROR

}  // namespace pfmn
