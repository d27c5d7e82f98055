#pragma once

#include <stdexcept>
#include <string>

namespace cigar {

enum class ErrorCode {
  InvalidArgument = 1,
  Io = 2,
  Parse = 3,
  Format = 4,     // container magic/version mismatch
  Empty = 5,      // empty dataset or empty k-core result
  Numeric = 6,    // non-finite values during optimization
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace cigar
