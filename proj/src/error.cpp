#include "edfusion/error.hpp"

namespace edfusion {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::EmptyModel: return "EmptyModel";
    case ErrorCode::InsufficientNodes: return "InsufficientNodes";
    case ErrorCode::NoConstraints: return "NoConstraints";
    case ErrorCode::SingularSystem: return "SingularSystem";
    case ErrorCode::PoseInitFailed: return "PoseInitFailed";
    case ErrorCode::EmptyRender: return "EmptyRender";
    case ErrorCode::NoFrames: return "NoFrames";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::MalformedInput: return "MalformedInput";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

}  // namespace edfusion
