#pragma once

#include <stdexcept>
#include <string>

namespace dysurv {

enum class ErrorCode {
  schema,
  parse,
  referential,
  domain,
  shape,
  numerical,
  contract,
  reproducibility,
  undefined_metric,
  weight_degeneracy,
  incompatible,
  corrupt,
  io,
  no_checkpoint,
  search_failure,
  usage,
};

/// Stable machine-parsable name, e.g. "E_NO_CHECKPOINT".
const char* code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace dysurv
