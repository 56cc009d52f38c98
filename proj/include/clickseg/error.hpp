#pragma once

#include <stdexcept>
#include <string>

namespace clickseg {

/// Broad failure categories. The service maps these onto HTTP status codes.
enum class ErrorCode {
  invalid_argument,
  out_of_range,
  not_found,
  shape_mismatch,
  parse_error,
  unavailable,
  io_error,
  numerical,
  not_implemented,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace clickseg
