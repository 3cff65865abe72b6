#pragma once

#include <stdexcept>
#include <string>

namespace mesa {

enum class ErrorCode {
  invalid_parameter,
  invalid_input,
  degenerate_geometry,
  degenerate_input,
  degenerate_weights,
  empty_basis,
  unknown_group,
  unknown_term,
  parameter_out_of_range,
  singular_system,
  numerical_inconsistency,
  degenerate_likelihood,
  optimization_failure,
  empty_data,
  malformed_data,
  model_version,
};

const char *to_string(ErrorCode code);

// Process exit status a failure of this kind maps to (1 usage, 2 data, 3 numerical).
int exit_status(ErrorCode code);

class Error : public std::runtime_error {
public:
  Error(ErrorCode code, const std::string &what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string &what) {
  throw Error(code, what);
}

inline void require(bool condition, ErrorCode code, const std::string &what) {
  if (!condition) {
    throw Error(code, what);
  }
}

} // namespace mesa
