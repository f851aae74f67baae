#pragma once

#include <stdexcept>
#include <string>

namespace gaussmark {

// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define GAUSSMARK_DEFINE_ERROR(Name)        \
  class Name : public Error {               \
   public:                                  \
    using Error::Error;                     \
  }

GAUSSMARK_DEFINE_ERROR(InvalidDimension);
GAUSSMARK_DEFINE_ERROR(InvalidInput);
GAUSSMARK_DEFINE_ERROR(DomainError);
GAUSSMARK_DEFINE_ERROR(DimensionError);
GAUSSMARK_DEFINE_ERROR(NumericalOverflow);
GAUSSMARK_DEFINE_ERROR(NumericalError);
GAUSSMARK_DEFINE_ERROR(EmptySequence);
GAUSSMARK_DEFINE_ERROR(EmptyInput);
GAUSSMARK_DEFINE_ERROR(BudgetError);
GAUSSMARK_DEFINE_ERROR(NullGradient);
GAUSSMARK_DEFINE_ERROR(FormatError);
GAUSSMARK_DEFINE_ERROR(IoError);

#undef GAUSSMARK_DEFINE_ERROR

}  // namespace gaussmark
