#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace rcml {

enum class ErrorCode {
  dimension_mismatch,
  containment_violation,
  rank_deficient_design,
  not_symmetric,
  degenerate_individual,
  singular_information,
  non_positive_determinant,
  non_positive_definite_sigma,
  invalid_config,
  parse_error,
};

inline constexpr std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::dimension_mismatch: return "DimensionMismatch";
    case ErrorCode::containment_violation: return "ContainmentViolation";
    case ErrorCode::rank_deficient_design: return "RankDeficientDesign";
    case ErrorCode::not_symmetric: return "NotSymmetric";
    case ErrorCode::degenerate_individual: return "DegenerateIndividual";
    case ErrorCode::singular_information: return "SingularInformation";
    case ErrorCode::non_positive_determinant: return "NonPositiveDeterminant";
    case ErrorCode::non_positive_definite_sigma: return "NonPositiveDefiniteSigma";
    case ErrorCode::invalid_config: return "InvalidConfig";
    case ErrorCode::parse_error: return "ParseError";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above. The
/// message is prefixed with the code name so it reads well on stderr.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace rcml
