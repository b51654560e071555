#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace lsjm {

enum class ErrorCode {
  kDimensionMismatch,
  kUnknownSubject,
  kNonIncreasingTimes,
  kRowAfterEventTime,
  kNoLongitudinalRows,
  kInvalidSpec,
  kNotPositiveDefinite,
  kDegenerateDensity,
  kUnsortedCohort,
  kSingularGram,
  kLostPositiveDefiniteness,
  kZeroDenominator,
  kSingularInformation,
  kNonFiniteLoglik,
  kLandmarkBeyondData,
  kEmptyHistory,
  kEmptyGroup,
  kInsufficientRiskSet,
  kInputError,
};

std::string_view to_string(ErrorCode code);

// Every failure raised by the library carries one of the codes above so that
// callers (tests, CLI) can branch on the kind without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace lsjm
