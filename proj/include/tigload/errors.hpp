#pragma once

#include <stdexcept>
#include <string>

namespace tigload {

// Base of every error the library raises. Each subclass maps to one failure
// mode named in the public contract; the CLI maps them onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define TIGLOAD_DEFINE_ERROR(Name)        \
  class Name : public Error {             \
   public:                                \
    using Error::Error;                   \
  }

TIGLOAD_DEFINE_ERROR(CycleError);
TIGLOAD_DEFINE_ERROR(UnknownEdge);
TIGLOAD_DEFINE_ERROR(InvalidTask);
TIGLOAD_DEFINE_ERROR(ParseError);
TIGLOAD_DEFINE_ERROR(ConfigError);

TIGLOAD_DEFINE_ERROR(ScorerUnavailable);
TIGLOAD_DEFINE_ERROR(MalformedScore);

TIGLOAD_DEFINE_ERROR(TooFewTasks);
TIGLOAD_DEFINE_ERROR(EmptyBucket);
TIGLOAD_DEFINE_ERROR(DegenerateCalibration);
TIGLOAD_DEFINE_ERROR(UnmatchedTrial);

TIGLOAD_DEFINE_ERROR(DomainError);
TIGLOAD_DEFINE_ERROR(InsufficientData);
TIGLOAD_DEFINE_ERROR(DegenerateLoads);
TIGLOAD_DEFINE_ERROR(DegenerateGroup);

TIGLOAD_DEFINE_ERROR(TargetUnreachable);
TIGLOAD_DEFINE_ERROR(NoProfiles);

#undef TIGLOAD_DEFINE_ERROR

}  // namespace tigload
