#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace decc {

enum class ErrorCode {
  validation,
  config,
  io,
  // Transport failure that may succeed on retry (connection reset, 429, 5xx).
  transport_transient,
  transport,
  protocol,
  capability,
  empty_input,
  bad_counts,
  empty_logprobs,
  positive_logprob,
  role_mismatch,
  missing_second_iteration,
  inconsistent_input,
  wrong_paraphrase_count,
  unbound_placeholder,
  missing_scores,
  usage,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace decc
