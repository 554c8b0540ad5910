#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace s3rp {

enum class ErrorCode {
  config,      // invalid configuration or mode mismatch
  data,        // shape mismatch, non-finite input, missing samples
  io,          // cannot open / read / write a file
  corrupt,     // bad magic, truncated file, malformed header
  version,     // container version not supported
  stability,   // CFL / diffusion limit violated
  model,       // model state misuse (e.g. uninitialized recurrent state)
  numeric,     // NaN / Inf during training or evaluation
  evaluation,  // evaluation inputs missing (HR, metadata)
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what);
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& what);

inline void require(bool ok, ErrorCode code, const std::string& what) {
  if (!ok) fail(code, what);
}

}  // namespace s3rp
