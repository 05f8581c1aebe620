#pragma once

#include <stdexcept>
#include <string>

namespace fedfocal {

// All library failures derive from Error so callers can catch one type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define FEDFOCAL_DEFINE_ERROR(Name)        \
  class Name : public Error {              \
   public:                                 \
    using Error::Error;                    \
  }

FEDFOCAL_DEFINE_ERROR(ConfigError);
FEDFOCAL_DEFINE_ERROR(DimensionError);
FEDFOCAL_DEFINE_ERROR(NumericError);
FEDFOCAL_DEFINE_ERROR(DomainError);
FEDFOCAL_DEFINE_ERROR(FormatError);
FEDFOCAL_DEFINE_ERROR(LengthError);
FEDFOCAL_DEFINE_ERROR(ParseError);
FEDFOCAL_DEFINE_ERROR(ValidationError);
FEDFOCAL_DEFINE_ERROR(PartitionError);
FEDFOCAL_DEFINE_ERROR(ImbalanceError);
FEDFOCAL_DEFINE_ERROR(AggregationError);
FEDFOCAL_DEFINE_ERROR(IntegrityError);
FEDFOCAL_DEFINE_ERROR(IoError);

#undef FEDFOCAL_DEFINE_ERROR

}  // namespace fedfocal
