#pragma once

#include <stdexcept>
#include <string>

namespace spmoe {

enum class ErrorCode {
  kInvalidParameter,
  kInvalidInput,
  kUnsupportedSize,
  kInternal,
  kShape,
  kInvalidToken,
  kDivergedTraining,
  kInvalidSpec,
  kParse,
  kEmptyCorpus,
  kUnlabeledCorpus,
  kUndefinedOrder,
  kInvalidLength,
  kInsufficientOutputs,
  kEmptyInput,
  kNotFound,
  kIo,
  kVersion,
  kCorruptCheckpoint,
};

const char* ErrorCodeName(ErrorCode code);

// Single exception type for the library; callers dispatch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(ErrorCodeName(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace spmoe
