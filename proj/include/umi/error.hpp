#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace umi {

/// Failure categories. The numeric value doubles as the CLI exit code.
enum class ErrorCode : int {
  dimension = 2,
  rank_deficient = 3,
  not_positive_definite = 4,
  non_finite = 5,
  domain = 6,
  format = 7,
  config = 8,
  io = 9,
};

inline std::string_view to_string(ErrorCode code)
{
  switch (code) {
  case ErrorCode::dimension: return "dimension";
  case ErrorCode::rank_deficient: return "rank_deficient";
  case ErrorCode::not_positive_definite: return "not_positive_definite";
  case ErrorCode::non_finite: return "non_finite";
  case ErrorCode::domain: return "domain";
  case ErrorCode::format: return "format";
  case ErrorCode::config: return "config";
  case ErrorCode::io: return "io";
  }
  return "unknown";
}

class Error : public std::runtime_error {
public:
  Error(ErrorCode code, std::string const &what)
    : std::runtime_error(std::string(to_string(code)) + ": " + what)
    , code_{code}
  {
  }

  ErrorCode code() const noexcept { return code_; }

private:
  ErrorCode code_;
};

inline void require(bool ok, ErrorCode code, std::string const &what)
{
  if (!ok) { throw Error(code, what); }
}

} // namespace umi
