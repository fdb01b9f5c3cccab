#include "spmoe/error.hpp"

namespace spmoe {

const char* ErrorCodeName(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidParameter: return "invalid parameter";
    case ErrorCode::kInvalidInput: return "invalid input";
    case ErrorCode::kUnsupportedSize: return "unsupported size";
    case ErrorCode::kInternal: return "internal error";
    case ErrorCode::kShape: return "shape error";
    case ErrorCode::kInvalidToken: return "invalid token";
    case ErrorCode::kDivergedTraining: return "diverged training";
    case ErrorCode::kInvalidSpec: return "invalid spec";
    case ErrorCode::kParse: return "parse error";
    case ErrorCode::kEmptyCorpus: return "empty corpus";
    case ErrorCode::kUnlabeledCorpus: return "unlabeled corpus";
    case ErrorCode::kUndefinedOrder: return "undefined order";
    case ErrorCode::kInvalidLength: return "invalid length";
    case ErrorCode::kInsufficientOutputs: return "insufficient outputs";
    case ErrorCode::kEmptyInput: return "empty input";
    case ErrorCode::kNotFound: return "not found";
    case ErrorCode::kIo: return "i/o error";
    case ErrorCode::kVersion: return "version error";
    case ErrorCode::kCorruptCheckpoint: return "corrupt checkpoint";
  }
  return "unknown error";
}

}  // namespace spmoe
