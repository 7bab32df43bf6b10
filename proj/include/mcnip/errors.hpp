#pragma once

#include <stdexcept>
#include <string>

namespace mcnip {

// Categories map onto the CLI exit codes: config/parse/integrity -> 2,
// numeric -> 3, missing_input -> 4.
enum class ErrorCode { kConfig, kParse, kIntegrity, kNumeric, kMissingInput };

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ErrorCode code() const { return code_; }

  int exit_code() const {
    switch (code_) {
      case ErrorCode::kNumeric: return 3;
      case ErrorCode::kMissingInput: return 4;
      default: return 2;
    }
  }

 private:
  ErrorCode code_;
};

inline Error config_error(const std::string& msg) {
  return Error(ErrorCode::kConfig, msg);
}
inline Error parse_error(const std::string& file, long line,
                         const std::string& msg) {
  return Error(ErrorCode::kParse,
               file + ":" + std::to_string(line) + ": " + msg);
}
inline Error integrity_error(const std::string& msg) {
  return Error(ErrorCode::kIntegrity, msg);
}
inline Error numeric_error(const std::string& msg) {
  return Error(ErrorCode::kNumeric, msg);
}
inline Error missing_input_error(const std::string& msg) {
  return Error(ErrorCode::kMissingInput, msg);
}

}  // namespace mcnip
