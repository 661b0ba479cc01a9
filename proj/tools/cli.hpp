#pragma once

#include <string>
#include <vector>

namespace rawdrift::cli {

/// Process exit codes.
enum Exit : int {
  kOk = 0,
  kConfigError = 2,
  kIoError = 3,
  kNumericAbort = 4,
  kGradcheckFail = 5,
  kChecksumFail = 6,
};

/// Entry point shared by the executable and the tests. `args` excludes the
/// program name.
int run(const std::vector<std::string>& args);

}  // namespace rawdrift::cli
