#pragma once

#include <stdexcept>
#include <string>

namespace pdistill {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define PDISTILL_ERROR(Name)                  \
  class Name : public Error {                 \
   public:                                    \
    explicit Name(const std::string& what)    \
        : Error(std::string(#Name ": ") + what) {} \
  }

PDISTILL_ERROR(InvalidParams);
PDISTILL_ERROR(GenerationExhausted);
PDISTILL_ERROR(InvalidState);
PDISTILL_ERROR(DegenerateTeacher);
PDISTILL_ERROR(MissingTeacherValue);
PDISTILL_ERROR(HorizonUnbounded);
PDISTILL_ERROR(DegenerateCurve);
PDISTILL_ERROR(InsufficientRuns);
PDISTILL_ERROR(ConfigError);

#undef PDISTILL_ERROR

}  // namespace pdistill
