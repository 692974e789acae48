#pragma once

#include <stdexcept>
#include <string>

namespace causeloc {

enum class ErrorCode {
  InvalidArgument,
  BadMagic,
  UnsupportedVersion,
  Truncated,
  DimensionOverflow,
  NonFinite,
  Io,
  Parse,
  Config,
  Protocol,
  ClientFatal,
  ClientRetryExhausted,
};

const char* to_string(ErrorCode code);

// Single exception type for the library; callers branch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

inline void require(bool ok, const std::string& what) {
  if (!ok) fail(ErrorCode::InvalidArgument, what);
}

}  // namespace causeloc
