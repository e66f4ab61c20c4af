#include "dysurv/error.hpp"

namespace dysurv {

const char* code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::schema: return "E_SCHEMA";
    case ErrorCode::parse: return "E_PARSE";
    case ErrorCode::referential: return "E_REFERENTIAL";
    case ErrorCode::domain: return "E_DOMAIN";
    case ErrorCode::shape: return "E_SHAPE";
    case ErrorCode::numerical: return "E_NUMERICAL";
    case ErrorCode::contract: return "E_CONTRACT";
    case ErrorCode::reproducibility: return "E_REPRODUCIBILITY";
    case ErrorCode::undefined_metric: return "E_UNDEFINED_METRIC";
    case ErrorCode::weight_degeneracy: return "E_WEIGHT_DEGENERACY";
    case ErrorCode::incompatible: return "E_INCOMPATIBLE";
    case ErrorCode::corrupt: return "E_CORRUPT";
    case ErrorCode::io: return "E_IO";
    case ErrorCode::no_checkpoint: return "E_NO_CHECKPOINT";
    case ErrorCode::search_failure: return "E_SEARCH_FAILURE";
    case ErrorCode::usage: return "E_USAGE";
  }
  return "E_UNKNOWN";
}

}  // namespace dysurv
