#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "edfusion/image.hpp"
#include "edfusion/surfel_cloud.hpp"

namespace edfusion::io {

namespace fs = std::filesystem;

// All readers throw Error(Io) when a file cannot be opened and
// Error(MalformedInput) when its contents do not parse.

/// 16-bit big-endian binary PGM, one unit = 0.01 mm, 0 = invalid.
DepthImage read_depth_pgm(const fs::path& path);
void write_depth_pgm(const fs::path& path, const DepthImage& depth);

/// Raw little-endian float32 depth in mm with a text sidecar `<path>.hdr`
/// holding "width W" and "height H" lines.
DepthImage read_depth_raw(const fs::path& path);
void write_depth_raw(const fs::path& path, const DepthImage& depth);

/// Binary PPM (P6, maxval 255).
RgbImage read_ppm(const fs::path& path);
void write_ppm(const fs::path& path, const RgbImage& rgb);

/// Plain text "fx fy cx cy width height".
CameraIntrinsics read_intrinsics(const fs::path& path);
void write_intrinsics(const fs::path& path, const CameraIntrinsics& intr);

enum class PlyFormat { Ascii, BinaryLittleEndian };

/// Vertex properties x y z nx ny nz red green blue weight.
void write_ply(const fs::path& path, const SurfelCloud& cloud, PlyFormat format = PlyFormat::BinaryLittleEndian);

struct PlyData {
  SurfelCloud cloud;
  std::vector<std::array<int, 3>> faces;  // polygons fan-triangulated
};

/// Triangle mesh with double-precision vertices (binary little-endian).
void write_mesh_ply(const fs::path& path, std::span<const Vec3> vertices, std::span<const std::array<int, 3>> faces);

/// Reads ascii or binary little-endian PLY. Vertex properties other than
/// x y z are optional; missing normals default to (0, 0, -1), colors to
/// black and weights to 0.
PlyData read_ply(const fs::path& path);

inline constexpr const char* kIntrinsicsFile = "intrinsics.txt";

fs::path depth_path(const fs::path& dir, int index);  // frame_%06d.depth.pgm
fs::path rgb_path(const fs::path& dir, int index);    // frame_%06d.rgb.ppm

/// Writes the frame's depth, color and (if absent) the shared intrinsics file.
void write_frame(const fs::path& dir, const DepthFrame& frame);

/// A directory of frame_%06d.{depth.pgm|depth.raw, rgb.ppm} files plus intrinsics.txt.
class FrameDirectory {
 public:
  /// Scans `dir`. Throws Error(Io) if it is not a directory and
  /// Error(MalformedInput) if intrinsics.txt is missing or invalid.
  explicit FrameDirectory(fs::path dir);

  const std::vector<int>& indices() const { return indices_; }
  std::size_t size() const { return indices_.size(); }
  const CameraIntrinsics& intrinsics() const { return intrinsics_; }
  DepthFrame load(int index) const;

 private:
  fs::path dir_;
  CameraIntrinsics intrinsics_;
  std::vector<int> indices_;
};

}  // namespace edfusion::io
