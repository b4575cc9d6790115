#pragma once

#include <stdexcept>
#include <string>

namespace msmcost {

// All validation and numerical failures carry a stable machine-readable code
// (e.g. "NonMonotoneTimes", "ZeroCensoringSurvival") next to the human message.
// The CLI surfaces the code in its error JSON.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(code + ": " + message), code_(std::move(code)) {}

  const std::string& code() const { return code_; }

 private:
  std::string code_;
};

[[noreturn]] inline void fail(const std::string& code, const std::string& message) {
  throw Error(code, message);
}

inline void require(bool cond, const std::string& code, const std::string& message) {
  if (!cond) fail(code, message);
}

}  // namespace msmcost
