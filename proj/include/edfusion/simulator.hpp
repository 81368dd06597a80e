#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "edfusion/correspond.hpp"
#include "edfusion/image.hpp"
#include "edfusion/surfel_cloud.hpp"

namespace edfusion::sim {

enum class SurfaceKind { Plane, Sinusoid, HalfCylinder, Mesh };
enum class TextureKind { Checker, Noise, Image };
enum class DeformationKind { None, Random, Scripted };

struct DeformationEvent {
  int frame = 0;    // applied before rendering this frame
  int control = 0;  // index into the control vertices
  Vec3 displacement = Vec3::Zero();  // world mm
};

/// A synthetic scene. The surface is built in world coordinates around the
/// point (0, 0, distance) facing -z, so an identity camera looks straight at it.
struct SceneSpec {
  SurfaceKind surface = SurfaceKind::Plane;
  std::filesystem::path mesh_path;  // SurfaceKind::Mesh
  double extent_x = 80.0;            // mm
  double extent_y = 60.0;            // mm
  double distance = 50.0;            // mm
  double mesh_spacing = 1.0;         // mm between grid vertices
  double bump_amplitude = 3.0;       // mm, Sinusoid
  double bump_wavelength = 40.0;     // mm, Sinusoid
  double cylinder_radius = 40.0;     // mm, HalfCylinder

  TextureKind texture = TextureKind::Noise;
  std::filesystem::path texture_path;  // TextureKind::Image, binary PPM
  double checker_cell = 4.0;           // mm
  double noise_scale = 3.0;            // mm, finest noise feature size
  double texture_contrast = 1.0;       // 0 gives a flat color

  int frames = 10;
  CameraIntrinsics intrinsics{100.0, 100.0, 63.5, 47.5, 128, 96};
  double noise_sigma = 0.0;  // mm, Gaussian depth noise
  std::uint64_t seed = 0;

  DeformationKind deformation = DeformationKind::None;
  double control_spacing = 4.0;  // mm; falloff radius is 3x this
  double displacement_min = 2.0;  // mm, random script magnitude range
  double displacement_max = 3.0;
  std::vector<DeformationEvent> events;  // DeformationKind::Scripted

  /// Camera-to-world pose per frame; missing frames continue with camera_step.
  std::vector<RigidTransform> camera_poses;
  RigidTransform camera_step;  // applied per frame after the listed poses

  /// Throws Error(InvalidArgument) on non-positive extents, frame counts or spacings.
  void validate() const;
};

/// Flat JSON scene description; see README for keys. Throws Error(MalformedInput).
SceneSpec parse_scene(const std::string& json_text, const std::filesystem::path& base_dir = {});
SceneSpec load_scene(const std::filesystem::path& path);

/// Which triangle and where on it each pixel sees (-1 where nothing).
struct MaterialMap {
  Image<int> triangle;
  Image<Vec3> barycentric;
};

struct GroundTruth {
  std::vector<std::array<int, 3>> triangles;
  std::vector<std::vector<Vec3>> vertices;  // per frame, world mm
  std::vector<RigidTransform> poses;        // per frame, camera-to-world
  std::vector<MaterialMap> material;        // per frame (empty when loaded from disk)
  std::vector<DepthImage> clean_depth;      // per frame, before noise (empty when loaded from disk)
  std::vector<int> control_vertices;        // mesh vertex ids usable as control points
  std::vector<DeformationEvent> events;     // as applied

  std::size_t num_frames() const { return vertices.size(); }

  /// World position at frame `at` of the material point seen at `pixel` in frame `seen`.
  std::optional<Vec3> material_point(int seen, PixelIndex pixel, int at) const;
  /// Same point in the camera coordinates of frame `at`.
  std::optional<Vec3> track(int seen, PixelIndex pixel, int at) const;
};

struct Sequence {
  std::vector<DepthFrame> frames;
  GroundTruth truth;
};

/// Builds the mesh, applies the deformation script cumulatively and renders
/// every frame. Throws Error(EmptyRender) when a frame sees no surface.
Sequence generate(const SceneSpec& spec);

/// Smooth bump used by deformation events: (1 - s^2)^3 for s = r / radius < 1.
double falloff(double r, double radius);

struct Metrics {
  double mean = 0.0;
  double median = 0.0;
  double max = 0.0;
  std::size_t count = 0;
};

/// Distance from each model surfel (camera coordinates of `frame`) to the
/// true surface at that frame. Throws Error(EmptyModel) for an empty model.
Metrics evaluate(const SurfelCloud& model, const GroundTruth& truth, int frame);

/// Distance from each surfel to where its origin material point truly is at
/// `frame`. Surfels without a usable origin are skipped.
Metrics evaluate_tracked(const SurfelCloud& model, std::span<const Provenance> origins, const GroundTruth& truth,
                         int frame);

/// Writes frames (frame_%06d.*), intrinsics and truth/ (mesh_%06d.ply in
/// world coordinates, poses.txt with one camera-to-world pose per line).
void write_sequence(const std::filesystem::path& dir, const Sequence& seq);

/// Reads truth/ written by write_sequence (geometry and poses only).
GroundTruth load_truth(const std::filesystem::path& dir);

/// Exact correspondences from the simulator. Every stride-th model-view pixel
/// is paired with the true position in the new frame of the same material.
/// Without a tracked model that material is what the previous camera saw at the
/// pixel; with one it is the origin of the surfel that won the pixel, so the
/// pairs carry each model point's true motion. Points occluded in the new
/// frame are dropped.
class GroundTruthProvider : public CorrespondenceProvider {
 public:
  explicit GroundTruthProvider(const GroundTruth& truth, int stride = 3) : truth_(&truth), stride_(stride) {}

  /// Pairs surfels by provenance from now on. Both objects must outlive the
  /// provider and stay parallel; passing a pipeline state's model and origins
  /// keeps them current across frames.
  void track_model(const SurfelCloud& model, const std::vector<Provenance>& origins) {
    model_ = &model;
    origins_ = &origins;
  }

  CorrespondenceSet find(const ModelView& view, const DepthFrame& frame) const override;

 private:
  const GroundTruth* truth_;
  int stride_;
  const SurfelCloud* model_ = nullptr;
  const std::vector<Provenance>* origins_ = nullptr;
};

}  // namespace edfusion::sim
