#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace alc {

/// Root of every error the library throws. The CLI maps these to exit code 2
/// (bad input) and anything else to exit code 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define ALC_DEFINE_ERROR(Name)            \
  class Name : public Error {             \
   public:                                \
    using Error::Error;                   \
  }

// dataset parsing
ALC_DEFINE_ERROR(IoError);
ALC_DEFINE_ERROR(ColumnCountError);
ALC_DEFINE_ERROR(NumberFormatError);
ALC_DEFINE_ERROR(DomainError);
ALC_DEFINE_ERROR(UnknownActivityError);

// preprocessing and experiment plumbing
ALC_DEFINE_ERROR(ParamError);
ALC_DEFINE_ERROR(EmptySetError);
ALC_DEFINE_ERROR(InsufficientSubjectsError);
ALC_DEFINE_ERROR(FormatError);

// tensor engine
ALC_DEFINE_ERROR(ShapeError);
ALC_DEFINE_ERROR(NumericError);
ALC_DEFINE_ERROR(GraphError);
ALC_DEFINE_ERROR(LabelRangeError);
ALC_DEFINE_ERROR(SpecError);

// statistics
ALC_DEFINE_ERROR(DegenerateError);
ALC_DEFINE_ERROR(KeyMismatchError);

#undef ALC_DEFINE_ERROR

/// A parse failure inside a file, carrying the 1-based line number.
class LineError : public Error {
 public:
  LineError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace alc
