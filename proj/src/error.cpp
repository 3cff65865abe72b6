#include "mesa/error.hpp"

namespace mesa {

const char *to_string(ErrorCode code) {
  switch (code) {
  case ErrorCode::invalid_parameter:
    return "invalid parameter";
  case ErrorCode::invalid_input:
    return "invalid input";
  case ErrorCode::degenerate_geometry:
    return "degenerate geometry";
  case ErrorCode::degenerate_input:
    return "degenerate input";
  case ErrorCode::degenerate_weights:
    return "degenerate weights";
  case ErrorCode::empty_basis:
    return "empty basis";
  case ErrorCode::unknown_group:
    return "unknown group";
  case ErrorCode::unknown_term:
    return "unknown term";
  case ErrorCode::parameter_out_of_range:
    return "parameter out of range";
  case ErrorCode::singular_system:
    return "singular system";
  case ErrorCode::numerical_inconsistency:
    return "numerical inconsistency";
  case ErrorCode::degenerate_likelihood:
    return "degenerate likelihood";
  case ErrorCode::optimization_failure:
    return "optimization failure";
  case ErrorCode::empty_data:
    return "empty data";
  case ErrorCode::malformed_data:
    return "malformed data";
  case ErrorCode::model_version:
    return "model version";
  }
  return "error";
}

int exit_status(ErrorCode code) {
  switch (code) {
  case ErrorCode::invalid_parameter:
  case ErrorCode::unknown_term:
    return 1;
  case ErrorCode::invalid_input:
  case ErrorCode::degenerate_geometry:
  case ErrorCode::degenerate_input:
  case ErrorCode::degenerate_weights:
  case ErrorCode::empty_basis:
  case ErrorCode::unknown_group:
  case ErrorCode::empty_data:
  case ErrorCode::malformed_data:
  case ErrorCode::model_version:
    return 2;
  case ErrorCode::parameter_out_of_range:
  case ErrorCode::singular_system:
  case ErrorCode::numerical_inconsistency:
  case ErrorCode::degenerate_likelihood:
  case ErrorCode::optimization_failure:
    return 3;
  }
  return 3;
}

} // namespace mesa
