#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace edfusion {

enum class ErrorCode {
  EmptyModel,
  InsufficientNodes,
  NoConstraints,
  SingularSystem,
  PoseInitFailed,
  EmptyRender,
  NoFrames,
  InvalidArgument,
  MalformedInput,
  Io,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace edfusion
