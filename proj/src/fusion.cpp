#include "edfusion/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "edfusion/error.hpp"
#include "edfusion/parallel.hpp"

namespace edfusion {

void FusionParams::validate() const {
  if (!(tau > 0.0) || !(omega_max >= 1.0) || !(eps > 0.0) || !(insert_cell > 0.0))
    throw Error(ErrorCode::InvalidArgument, "fusion requires tau > 0, omega_max >= 1, eps > 0, insert_cell > 0");
}

namespace {

std::optional<PixelIndex> pixel_of(const DepthFrame& frame, const Vec3& p) {
  const auto uv = project(frame.intrinsics, p);
  if (!uv) return std::nullopt;
  const PixelIndex px = nearest_pixel(*uv);
  if (!frame.valid(px.x, px.y)) return std::nullopt;
  return px;
}

}  // namespace

double tsdw(const Vec3& warped, const PointBinding& binding, const EDGraph& graph, const DepthFrame& frame,
            const FusionParams& params) {
  const auto px = pixel_of(frame, warped);
  if (!px) return 0.0;
  if (!(std::abs(warped.z() - frame.depth(px->x, px->y)) < params.tau)) return 0.0;
  double d_min = std::numeric_limits<double>::infinity();
  for (int i = 0; i < binding.count; ++i) {
    const EDNode& n = graph.nodes[binding.node_ids[i]];
    d_min = std::min(d_min, (warped - (n.g + n.t)).norm());
  }
  if (!std::isfinite(d_min)) return 0.0;
  return d_min / (0.5 * params.eps);
}

FusionStats fuse_depth(SurfelCloud& cloud, const EDGraph& graph, std::span<const PointBinding> bindings,
                       std::span<const int> visible, const DepthFrame& frame, const FusionParams& params) {
  params.validate();
  if (bindings.size() != cloud.size()) throw Error(ErrorCode::InvalidArgument, "bindings do not cover the cloud");
  std::vector<char> fused(visible.size(), 0);
  auto& surfels = cloud.surfels();
  parallel_for(0, visible.size(), [&](std::size_t k) {
    Surfel& s = surfels[static_cast<std::size_t>(visible[k])];
    const double w = tsdw(s.position, bindings[static_cast<std::size_t>(visible[k])], graph, frame, params);
    if (!(w > 0.0)) return;
    const PixelIndex px = *pixel_of(frame, s.position);
    const double z = s.position.z();
    const double fused_z = (z * s.weight + frame.depth(px.x, px.y)) / (s.weight + 1.0);
    s.position *= fused_z / z;
    s.weight = std::min(s.weight + 1.0, params.omega_max);
    s.color = sample_rgb(frame.rgb, *project(frame.intrinsics, s.position));
    fused[k] = 1;
  });
  FusionStats stats;
  stats.fused = static_cast<std::size_t>(std::count(fused.begin(), fused.end(), 1));
  stats.gated = visible.size() - stats.fused;
  return stats;
}

Image<char> model_coverage(const SurfelCloud& cloud, const DepthFrame& frame, double tau) {
  const int w = frame.depth.width(), h = frame.depth.height();
  Image<char> hit(w, h, 0);
  for (const Surfel& s : cloud.surfels()) {
    const auto uv = project(frame.intrinsics, s.position);
    if (!uv) continue;
    const PixelIndex px = nearest_pixel(*uv);
    if (frame.valid(px.x, px.y) && std::abs(s.position.z() - frame.depth(px.x, px.y)) < tau) hit(px.x, px.y) = 1;
  }
  Image<char> covered(w, h, 0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (!hit(x, y)) continue;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx)
          if (covered.in_bounds(x + dx, y + dy)) covered(x + dx, y + dy) = 1;
    }
  return covered;
}

std::size_t insert_new_points(SurfelCloud& cloud, const Observation& obs, const FusionParams& params,
                              std::vector<PixelIndex>* origins) {
  params.validate();
  const DepthFrame& f = obs.frame;
  const Image<char> covered = model_coverage(cloud, f, params.tau);
  std::vector<Vec3> points;
  std::vector<PixelIndex> pixels;
  for (int y = 0; y < f.depth.height(); ++y)
    for (int x = 0; x < f.depth.width(); ++x) {
      if (!f.valid(x, y) || covered(x, y) || !obs.normals(x, y)) continue;
      points.push_back(back_project(f.intrinsics, PixelCoord{double(x), double(y)}, f.depth(x, y)));
      pixels.push_back({x, y});
    }
  const auto groups = voxel_groups(points, params.insert_cell);
  for (const auto& members : groups) {
    Vec3 p = Vec3::Zero(), n = Vec3::Zero(), c = Vec3::Zero();
    for (int i : members) {
      const PixelIndex px = pixels[static_cast<std::size_t>(i)];
      p += points[static_cast<std::size_t>(i)];
      n += *obs.normals(px.x, px.y);
      const Rgb8& rgb = f.rgb(px.x, px.y);
      c += Vec3(rgb[0], rgb[1], rgb[2]);
    }
    const double m = static_cast<double>(members.size());
    Surfel s;
    s.position = p / m;
    s.normal = n.norm() > 0.0 ? Vec3(n.normalized()) : Vec3(-s.position.normalized());
    c /= m;
    for (int k = 0; k < 3; ++k) s.color[k] = static_cast<std::uint8_t>(std::lround(std::clamp(c[k], 0.0, 255.0)));
    s.weight = 1.0;
    cloud.push_back(s);
    if (origins) origins->push_back(pixels[static_cast<std::size_t>(members.front())]);
  }
  return groups.size();
}

}  // namespace edfusion
