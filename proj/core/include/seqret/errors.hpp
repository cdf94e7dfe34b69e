#pragma once

#include <stdexcept>
#include <string>

namespace seqret {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define SEQRET_DEFINE_ERROR(Name)        \
  class Name : public Error {            \
   public:                               \
    using Error::Error;                  \
  }

SEQRET_DEFINE_ERROR(ConfigError);
SEQRET_DEFINE_ERROR(DomainError);
SEQRET_DEFINE_ERROR(NumericError);
SEQRET_DEFINE_ERROR(SequenceError);
SEQRET_DEFINE_ERROR(LabelingError);
SEQRET_DEFINE_ERROR(SplitError);
SEQRET_DEFINE_ERROR(CapacityError);
SEQRET_DEFINE_ERROR(AttentionError);
SEQRET_DEFINE_ERROR(DimensionError);
SEQRET_DEFINE_ERROR(DegenerateEmbeddingError);
SEQRET_DEFINE_ERROR(InputError);
SEQRET_DEFINE_ERROR(FormatError);
SEQRET_DEFINE_ERROR(ArgumentError);
SEQRET_DEFINE_ERROR(DegenerateInputError);

#undef SEQRET_DEFINE_ERROR

}  // namespace seqret
