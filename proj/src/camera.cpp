#include "edfusion/camera.hpp"

#include <sstream>

#include "edfusion/error.hpp"

namespace edfusion {

void CameraIntrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0) || width <= 0 || height <= 0 || !(cx >= 0.0) || !(cy >= 0.0) || cx >= width ||
      cy >= height) {
    std::ostringstream os;
    os << "invalid intrinsics: fx=" << fx << " fy=" << fy << " cx=" << cx << " cy=" << cy << " size=" << width << "x"
       << height;
    throw Error(ErrorCode::InvalidArgument, os.str());
  }
}

}  // namespace edfusion
