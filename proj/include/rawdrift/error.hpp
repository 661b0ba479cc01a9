#pragma once

#include <stdexcept>
#include <string>

namespace rawdrift {

/// Error categories. Format errors carry distinct codes so callers can tell
/// a bad header from a missing sidecar without parsing messages.
enum class ErrorCode {
  Config,
  Shape,
  Domain,
  Io,
  FormatMagic,
  FormatMaxval,
  FormatOddDimensions,
  FormatTruncated,
  MissingSidecar,
  Sidecar,
  Schema,
  NonFinite,
  Unsupported,
  Checksum,
  Network,
};

const char* to_string(ErrorCode code);

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

}  // namespace rawdrift
