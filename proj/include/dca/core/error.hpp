#pragma once

#include <stdexcept>
#include <string>

namespace dca {

enum class Errc {
  invalid_argument,
  dimension_mismatch,
  shape_mismatch,
  missing_timestep,
  numeric_underflow,
  non_finite,
  out_of_range,
  degenerate_dataset,
  same_class,
  precondition,
  empty_input,
  insufficient_sample,
  architecture_mismatch,
  missing_barrier_stats,
  frozen_parameters,
  config_parse,
  unknown_key,
  missing_artifact,
  version_mismatch,
  mixed_config_hash,
  io,
};

inline const char* to_string(Errc code) {
  switch (code) {
    case Errc::invalid_argument: return "invalid-argument";
    case Errc::dimension_mismatch: return "dimension-mismatch";
    case Errc::shape_mismatch: return "shape-mismatch";
    case Errc::missing_timestep: return "missing-timestep";
    case Errc::numeric_underflow: return "numeric-underflow";
    case Errc::non_finite: return "non-finite";
    case Errc::out_of_range: return "out-of-range";
    case Errc::degenerate_dataset: return "degenerate-dataset";
    case Errc::same_class: return "same-class";
    case Errc::precondition: return "precondition-violation";
    case Errc::empty_input: return "empty-input";
    case Errc::insufficient_sample: return "insufficient-sample";
    case Errc::architecture_mismatch: return "architecture-mismatch";
    case Errc::missing_barrier_stats: return "missing-barrier-stats";
    case Errc::frozen_parameters: return "frozen-parameters";
    case Errc::config_parse: return "config-parse";
    case Errc::unknown_key: return "unknown-key";
    case Errc::missing_artifact: return "missing-dependency-artifact";
    case Errc::version_mismatch: return "checkpoint-version-mismatch";
    case Errc::mixed_config_hash: return "mixed-config-hash";
    case Errc::io: return "io";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code), message_(message) {}

  Errc code() const noexcept { return code_; }
  const std::string& message() const noexcept { return message_; }

 private:
  Errc code_;
  std::string message_;
};

[[noreturn]] inline void fail(Errc code, const std::string& message) { throw Error(code, message); }

inline void require(bool condition, Errc code, const std::string& message) {
  if (!condition) fail(code, message);
}

}  // namespace dca
