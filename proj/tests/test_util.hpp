#pragma once

#include <doctest.h>

#include <functional>

#include "spmoe/error.hpp"

namespace spmoe::testing {

// Runs fn and returns the code of the spmoe::Error it throws.
inline ErrorCode CodeOf(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an spmoe::Error");
  return ErrorCode::kInternal;
}

}  // namespace spmoe::testing
