#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace oadlab {

// Failure categories surfaced to callers (and mapped to CLI exit codes:
// config/usage-type errors -> 2, numeric failures -> 3).
enum class errc {
  invalid_dimension,
  candidate_set_too_large,
  invalid_argument,
  config,
  io,
  data_shape,
  singular_information,
  singular_state,
  estimation,
  moment_computation,
  non_convergence,
  infeasible_rounding,
  curvature_computation,
  harness,
};

constexpr std::string_view errc_name(errc c) {
  switch (c) {
    case errc::invalid_dimension: return "invalid-dimension";
    case errc::candidate_set_too_large: return "candidate-set-too-large";
    case errc::invalid_argument: return "invalid-argument";
    case errc::config: return "config";
    case errc::io: return "io";
    case errc::data_shape: return "data-shape";
    case errc::singular_information: return "singular-information";
    case errc::singular_state: return "singular-state";
    case errc::estimation: return "estimation";
    case errc::moment_computation: return "moment-computation";
    case errc::non_convergence: return "non-convergence";
    case errc::infeasible_rounding: return "infeasible-rounding";
    case errc::curvature_computation: return "curvature-computation";
    case errc::harness: return "harness";
  }
  return "unknown";
}

// Whether the failure is a usage/configuration problem (CLI exit 2) as
// opposed to a numeric/estimation failure (CLI exit 3).
constexpr bool is_usage_error(errc c) {
  switch (c) {
    case errc::invalid_dimension:
    case errc::candidate_set_too_large:
    case errc::invalid_argument:
    case errc::config:
    case errc::io:
    case errc::data_shape:
      return true;
    default:
      return false;
  }
}

class OadError : public std::runtime_error {
 public:
  OadError(errc code, const std::string& msg)
      : std::runtime_error(std::string(errc_name(code)) + ": " + msg),
        code_(code) {}
  errc code() const noexcept { return code_; }

 private:
  errc code_;
};

[[noreturn]] inline void fail(errc code, const std::string& msg) {
  throw OadError(code, msg);
}

inline void require(bool cond, errc code, const std::string& msg) {
  if (!cond) fail(code, msg);
}

}  // namespace oadlab
