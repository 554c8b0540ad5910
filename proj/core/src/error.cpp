#include "s3rp/error.hpp"

namespace s3rp {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::config: return "config";
    case ErrorCode::data: return "data";
    case ErrorCode::io: return "io";
    case ErrorCode::corrupt: return "corrupt";
    case ErrorCode::version: return "version";
    case ErrorCode::stability: return "stability";
    case ErrorCode::model: return "model";
    case ErrorCode::numeric: return "numeric";
    case ErrorCode::evaluation: return "evaluation";
  }
  return "unknown";
}

Error::Error(ErrorCode code, const std::string& what)
    : std::runtime_error(std::string(to_string(code)) + " error: " + what), code_(code) {}

void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

}  // namespace s3rp
