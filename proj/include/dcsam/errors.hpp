#pragma once

#include <stdexcept>
#include <string>

namespace dcsam {

// Broad failure classes; the CLI maps these onto process exit codes.
enum class ErrorCategory {
    kValidation = 1,
    kNumerical = 2,
    kIo = 3,
};

class Error : public std::runtime_error {
   public:
    Error(ErrorCategory category, const std::string& what)
        : std::runtime_error(what), category_(category) {}

    ErrorCategory category() const noexcept { return category_; }

   private:
    ErrorCategory category_;
};

#define DCSAM_DEFINE_ERROR(Name, Category)                                   \
    class Name : public Error {                                              \
       public:                                                               \
        explicit Name(const std::string& what)                               \
            : Error(ErrorCategory::Category, std::string(#Name ": ") + what) \
        {}                                                                   \
    };

DCSAM_DEFINE_ERROR(ShapeMismatch, kValidation)
DCSAM_DEFINE_ERROR(NonFiniteInput, kNumerical)
DCSAM_DEFINE_ERROR(AllMasked, kNumerical)
DCSAM_DEFINE_ERROR(UntrackedLoss, kValidation)
DCSAM_DEFINE_ERROR(EmptySupportMask, kValidation)
DCSAM_DEFINE_ERROR(EmptyReport, kValidation)
DCSAM_DEFINE_ERROR(FrameCountMismatch, kValidation)
DCSAM_DEFINE_ERROR(NonDivisibleClassCount, kValidation)
DCSAM_DEFINE_ERROR(UnknownClass, kValidation)
DCSAM_DEFINE_ERROR(InvalidArgument, kValidation)
DCSAM_DEFINE_ERROR(ConfigError, kValidation)
DCSAM_DEFINE_ERROR(DivergenceDetected, kNumerical)
DCSAM_DEFINE_ERROR(CheckpointMissing, kIo)
DCSAM_DEFINE_ERROR(IoError, kIo)

#undef DCSAM_DEFINE_ERROR

}  // namespace dcsam
