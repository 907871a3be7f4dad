#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace alab {

// Broad classes used by the CLI to choose an exit code.
enum class ErrorClass { internal, usage, config, data, transport };

class Error : public std::runtime_error {
 public:
  Error(ErrorClass cls, const std::string& what) : std::runtime_error(what), cls_(cls) {}
  ErrorClass error_class() const noexcept { return cls_; }

 private:
  ErrorClass cls_;
};

#define ALAB_DEFINE_ERROR(Name, Class)                                         \
  class Name : public Error {                                                  \
   public:                                                                     \
    explicit Name(const std::string& what) : Error(ErrorClass::Class, what) {} \
  }

ALAB_DEFINE_ERROR(DimensionError, internal);
ALAB_DEFINE_ERROR(ContractError, internal);
ALAB_DEFINE_ERROR(NonFiniteError, internal);
ALAB_DEFINE_ERROR(DegenerateBatchError, data);
ALAB_DEFINE_ERROR(ContextError, data);
ALAB_DEFINE_ERROR(LookupError, config);
ALAB_DEFINE_ERROR(RankError, config);
ALAB_DEFINE_ERROR(FusionError, config);
ALAB_DEFINE_ERROR(ConfigError, config);
ALAB_DEFINE_ERROR(ScopeError, data);
ALAB_DEFINE_ERROR(UndefinedMetricError, data);
ALAB_DEFINE_ERROR(NoTrainableParamsError, config);
ALAB_DEFINE_ERROR(TransportError, transport);
ALAB_DEFINE_ERROR(JudgeUnavailableError, transport);
ALAB_DEFINE_ERROR(UsageError, usage);

#undef ALAB_DEFINE_ERROR

// Malformed binary file; carries the byte offset where decoding failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : Error(ErrorClass::data, what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

// Malformed text row; carries the 1-based line number.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(ErrorClass::data, "line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace alab
