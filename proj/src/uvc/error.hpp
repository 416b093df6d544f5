#pragma once

#include <stdexcept>
#include <string>

namespace uvc {

// Error categories map 1:1 onto process exit codes and C API status values.
enum class ErrorCode : int {
  ok = 0,
  usage = 2,
  data = 3,
  checkpoint = 4,
  internal = 5,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void throw_usage(const std::string& msg) {
  throw Error(ErrorCode::usage, msg);
}
[[noreturn]] inline void throw_data(const std::string& msg) {
  throw Error(ErrorCode::data, msg);
}
[[noreturn]] inline void throw_checkpoint(const std::string& msg) {
  throw Error(ErrorCode::checkpoint, msg);
}
[[noreturn]] inline void throw_internal(const std::string& msg) {
  throw Error(ErrorCode::internal, msg);
}

}  // namespace uvc
