#pragma once

#include <stdexcept>
#include <string>

namespace vtrace {

enum class ErrorCode {
  io,
  size_mismatch,
  invalid_argument,
  grid_mismatch,
  empty_crop,
  constant_image,
  empty_foreground,
  empty_mask,
  segmentation_failure,
  contract_violation,
  no_caps,
  source_outside,
  backtrace_failure,
  centerline_failure,
  chances_exhausted,
  seed_outside,
  malformed_file,
  all_differences_zero,
};

/// Library-wide exception. `code()` lets callers branch on the failure kind
/// (the tracer treats several of them as recoverable step failures).
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message) : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace vtrace
