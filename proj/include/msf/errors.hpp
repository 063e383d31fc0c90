#pragma once

#include <stdexcept>
#include <string>

namespace msf {

// Base for every error raised by the library. Subclasses name the failure
// mode so callers can catch exactly what they handle.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define MSF_DEFINE_ERROR(Name)              \
  class Name : public Error {               \
   public:                                  \
    using Error::Error;                     \
  }

MSF_DEFINE_ERROR(DegenerateModel);
MSF_DEFINE_ERROR(DegenerateInput);
MSF_DEFINE_ERROR(DegenerateSample);
MSF_DEFINE_ERROR(NearParallelRays);
MSF_DEFINE_ERROR(SolverFailure);
MSF_DEFINE_ERROR(NotEnoughData);
MSF_DEFINE_ERROR(ShapeMismatch);
MSF_DEFINE_ERROR(EmptyDataset);
MSF_DEFINE_ERROR(FormatError);
MSF_DEFINE_ERROR(IoError);
MSF_DEFINE_ERROR(GenerationFailed);
MSF_DEFINE_ERROR(NoModelFound);
MSF_DEFINE_ERROR(ConfigError);

#undef MSF_DEFINE_ERROR

}  // namespace msf
