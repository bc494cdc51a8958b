#pragma once

#include <stdexcept>
#include <string>

namespace softcheck {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define SOFTCHECK_ERROR(Name)            \
  class Name : public Error {            \
   public:                               \
    using Error::Error;                  \
  }

SOFTCHECK_ERROR(InvalidArgument);
SOFTCHECK_ERROR(ChecklistSpecMismatch);
SOFTCHECK_ERROR(UnsatisfiableFamily);
SOFTCHECK_ERROR(AllSpurious);
SOFTCHECK_ERROR(InsufficientSupport);
SOFTCHECK_ERROR(MissingGroundTruth);
SOFTCHECK_ERROR(CorrelatedFormUnavailable);
SOFTCHECK_ERROR(NonEnumerable);
SOFTCHECK_ERROR(EmptyBuffers);
SOFTCHECK_ERROR(NumericalFailure);
SOFTCHECK_ERROR(ConfigInvalid);
SOFTCHECK_ERROR(OutputUnwritable);
SOFTCHECK_ERROR(AssertionFailed);
SOFTCHECK_ERROR(GridTooLarge);

#undef SOFTCHECK_ERROR

}  // namespace softcheck
