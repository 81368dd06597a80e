#pragma once

#include <cassert>
#include <optional>
#include <vector>

#include "edfusion/camera.hpp"
#include "edfusion/types.hpp"

namespace edfusion {

/// Dense row-major H x W raster.
template <typename T>
class Image {
 public:
  Image() = default;
  Image(int width, int height, const T& fill = T{})
      : width_(width), height_(height), data_(static_cast<std::size_t>(width) * height, fill) {}

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  bool in_bounds(int x, int y) const { return x >= 0 && y >= 0 && x < width_ && y < height_; }

  T& operator()(int x, int y) {
    assert(in_bounds(x, y));
    return data_[static_cast<std::size_t>(y) * width_ + x];
  }
  const T& operator()(int x, int y) const {
    assert(in_bounds(x, y));
    return data_[static_cast<std::size_t>(y) * width_ + x];
  }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }

  bool operator==(const Image&) const = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<T> data_;
};

using DepthImage = Image<double>;
using RgbImage = Image<Rgb8>;
using GrayImage = Image<float>;
using NormalImage = Image<std::optional<Vec3>>;

/// One depth + color observation. Depth in mm, 0 marks an invalid pixel.
struct DepthFrame {
  DepthImage depth;
  RgbImage rgb;
  CameraIntrinsics intrinsics;
  int frame_index = 0;

  /// Throws Error(InvalidArgument) on negative/non-finite depth or mismatched sizes.
  void validate() const;

  bool valid(int x, int y) const { return depth.in_bounds(x, y) && depth(x, y) > 0.0; }
};

/// Pi(u) for a frame pixel; empty when the depth there is 0 or u is outside the image.
std::optional<Vec3> back_project(const DepthFrame& frame, const PixelCoord& u);

/// Per-pixel unit normals from central differences of back-projected
/// neighbors, oriented toward the camera (n . p < 0, which gives n.z < 0 for
/// surfaces facing the camera). Empty where the pixel or any of its four
/// neighbors is invalid, and on the image border.
NormalImage depth_normals(const DepthFrame& frame);

GrayImage to_gray(const RgbImage& rgb);

/// Color at a sub-pixel location, bilinear over the four surrounding pixels
/// with coordinates clamped to the image.
Rgb8 sample_rgb(const RgbImage& rgb, const PixelCoord& p);

/// Edge-preserving smoothing of valid depth: Gaussian in pixel distance
/// (sigma_px) times Gaussian in depth difference (sigma_mm) over a window of
/// radius ceil(2 sigma_px). Invalid pixels stay 0 and are never sampled.
/// sigma_px <= 0 returns the input unchanged.
DepthImage bilateral_filter(const DepthImage& depth, double sigma_px, double sigma_mm);

/// Depth frame plus its derived normal map, shared by the stages that read
/// the observation.
struct Observation {
  DepthFrame frame;
  NormalImage normals;

  explicit Observation(DepthFrame f);
};

}  // namespace edfusion
