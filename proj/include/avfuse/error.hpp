#pragma once

#include <stdexcept>
#include <string>

namespace avf {

enum class ErrorKind {
  kConfig,
  kDimension,
  kNumeric,
  kIndex,
  kContract,
  kValidation,
  kParse,
  kIo,
};

const char* to_string(ErrorKind kind);

// Every failure raised by the library derives from Error so the C boundary can
// map it to a status code without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define AVF_DEFINE_ERROR(Name, Kind)                                   \
  class Name : public Error {                                          \
   public:                                                             \
    explicit Name(const std::string& what) : Error(ErrorKind::Kind, what) {} \
  };

AVF_DEFINE_ERROR(ConfigError, kConfig)
AVF_DEFINE_ERROR(DimensionError, kDimension)
AVF_DEFINE_ERROR(NumericError, kNumeric)
AVF_DEFINE_ERROR(IndexError, kIndex)
AVF_DEFINE_ERROR(ContractError, kContract)
AVF_DEFINE_ERROR(ValidationError, kValidation)
AVF_DEFINE_ERROR(IoError, kIo)

#undef AVF_DEFINE_ERROR

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(ErrorKind::kParse, "line " + std::to_string(line) + ": " + what),
        line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace avf
