#include "edfusion/image.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "edfusion/error.hpp"
#include "edfusion/parallel.hpp"

namespace edfusion {

void DepthFrame::validate() const {
  intrinsics.validate();
  if (depth.width() != intrinsics.width || depth.height() != intrinsics.height || rgb.width() != depth.width() ||
      rgb.height() != depth.height())
    throw Error(ErrorCode::InvalidArgument, "depth, rgb and intrinsics dimensions disagree");
  for (double d : depth.data())
    if (!std::isfinite(d) || d < 0.0) throw Error(ErrorCode::InvalidArgument, "depth must be finite and >= 0");
}

std::optional<Vec3> back_project(const DepthFrame& frame, const PixelCoord& u) {
  if (!frame.intrinsics.contains(u)) return std::nullopt;
  const PixelIndex p = nearest_pixel(u);
  if (!frame.depth.in_bounds(p.x, p.y)) return std::nullopt;
  const double d = frame.depth(p.x, p.y);
  if (d <= 0.0) return std::nullopt;
  return back_project(frame.intrinsics, u, d);
}

NormalImage depth_normals(const DepthFrame& frame) {
  const int w = frame.depth.width();
  const int h = frame.depth.height();
  NormalImage normals(w, h);
  auto lift = [&](int x, int y) {
    return back_project(frame.intrinsics, PixelCoord{double(x), double(y)}, frame.depth(x, y));
  };
  for (int y = 1; y + 1 < h; ++y) {
    for (int x = 1; x + 1 < w; ++x) {
      if (!frame.valid(x, y) || !frame.valid(x - 1, y) || !frame.valid(x + 1, y) || !frame.valid(x, y - 1) ||
          !frame.valid(x, y + 1))
        continue;
      const Vec3 dx = lift(x + 1, y) - lift(x - 1, y);
      const Vec3 dy = lift(x, y + 1) - lift(x, y - 1);
      Vec3 n = dx.cross(dy);
      const double len = n.norm();
      if (!(len > 0.0)) continue;
      n /= len;
      if (n.dot(lift(x, y)) > 0.0) n = -n;
      normals(x, y) = n;
    }
  }
  return normals;
}

GrayImage to_gray(const RgbImage& rgb) {
  GrayImage g(rgb.width(), rgb.height());
  for (std::size_t i = 0; i < rgb.size(); ++i)
    g[i] = 0.299f * rgb[i][0] + 0.587f * rgb[i][1] + 0.114f * rgb[i][2];
  return g;
}

Rgb8 sample_rgb(const RgbImage& rgb, const PixelCoord& p) {
  const double x = std::clamp(p.x, 0.0, rgb.width() - 1.0);
  const double y = std::clamp(p.y, 0.0, rgb.height() - 1.0);
  const int x0 = std::min(static_cast<int>(x), std::max(rgb.width() - 2, 0));
  const int y0 = std::min(static_cast<int>(y), std::max(rgb.height() - 2, 0));
  const int x1 = std::min(x0 + 1, rgb.width() - 1), y1 = std::min(y0 + 1, rgb.height() - 1);
  const double ax = x - x0, ay = y - y0;
  Rgb8 out;
  for (int k = 0; k < 3; ++k) {
    const double top = (1.0 - ax) * rgb(x0, y0)[k] + ax * rgb(x1, y0)[k];
    const double bottom = (1.0 - ax) * rgb(x0, y1)[k] + ax * rgb(x1, y1)[k];
    out[k] = static_cast<std::uint8_t>(std::lround(std::clamp((1.0 - ay) * top + ay * bottom, 0.0, 255.0)));
  }
  return out;
}

DepthImage bilateral_filter(const DepthImage& depth, double sigma_px, double sigma_mm) {
  if (!(sigma_px > 0.0)) return depth;
  if (!(sigma_mm > 0.0)) throw Error(ErrorCode::InvalidArgument, "bilateral range sigma must be > 0");
  const int r = static_cast<int>(std::ceil(2.0 * sigma_px));
  std::vector<double> spatial(static_cast<std::size_t>((2 * r + 1) * (2 * r + 1)));
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx)
      spatial[static_cast<std::size_t>((dy + r) * (2 * r + 1) + dx + r)] =
          std::exp(-(dx * dx + dy * dy) / (2.0 * sigma_px * sigma_px));
  const double inv_range = 1.0 / (2.0 * sigma_mm * sigma_mm);
  DepthImage out(depth.width(), depth.height(), 0.0);
  parallel_for(0, static_cast<std::size_t>(depth.height()), [&](std::size_t row) {
    const int y = static_cast<int>(row);
    for (int x = 0; x < depth.width(); ++x) {
      const double c = depth(x, y);
      if (!(c > 0.0)) continue;
      double sum = 0.0, wsum = 0.0;
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
          if (!depth.in_bounds(x + dx, y + dy)) continue;
          const double d = depth(x + dx, y + dy);
          if (!(d > 0.0)) continue;
          const double w =
              spatial[static_cast<std::size_t>((dy + r) * (2 * r + 1) + dx + r)] * std::exp(-(d - c) * (d - c) * inv_range);
          sum += w * d;
          wsum += w;
        }
      out(x, y) = sum / wsum;
    }
  });
  return out;
}

Observation::Observation(DepthFrame f) : frame(std::move(f)), normals(depth_normals(frame)) {}

}  // namespace edfusion
