#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "edfusion/error.hpp"
#include "edfusion/simulator.hpp"
#include "test_support.hpp"

namespace edfusion {
namespace {

using sim::SceneSpec;

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::InvalidArgument;
}

/// Surfels at every valid pixel, camera coordinates.
SurfelCloud cloud_from(const DepthFrame& f) { return test::cloud_of(f); }

TEST(Generate, PlaneDepthIsAnalytic) {
  SceneSpec spec;
  spec.frames = 1;
  const sim::Sequence seq = sim::generate(spec);
  const DepthFrame& f = seq.frames[0];
  int valid = 0;
  for (int y = 0; y < f.depth.height(); ++y)
    for (int x = 0; x < f.depth.width(); ++x) {
      if (!f.valid(x, y)) continue;
      ++valid;
      EXPECT_NEAR(f.depth(x, y), spec.distance, 1e-6);
    }
  EXPECT_EQ(valid, f.depth.width() * f.depth.height());
}

TEST(Generate, TiltedCameraSeesTheAnalyticPlane) {
  SceneSpec spec;
  spec.frames = 1;
  spec.camera_poses = {rigid_from_euler_deg(10.0, -5.0, 0.0, Vec3(2.0, 1.0, 0.0))};
  const sim::Sequence seq = sim::generate(spec);
  const DepthFrame& f = seq.frames[0];
  const RigidTransform pose = seq.truth.poses[0];
  for (int y = 0; y < f.depth.height(); y += 7)
    for (int x = 0; x < f.depth.width(); x += 7) {
      if (!f.valid(x, y)) continue;
      const Vec3 world = pose(back_project(f.intrinsics, PixelCoord{double(x), double(y)}, f.depth(x, y)));
      EXPECT_NEAR(world.z(), spec.distance, 1e-6);
    }
}

TEST(Generate, ScriptedPushMovesTheSurfaceByItsAmount) {
  SceneSpec spec;
  spec.frames = 2;
  spec.deformation = sim::DeformationKind::Scripted;
  const sim::Sequence probe = sim::generate(spec);
  // Control vertex nearest the optical axis.
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < probe.truth.control_vertices.size(); ++c) {
    const Vec3& v = probe.truth.vertices[0][std::size_t(probe.truth.control_vertices[c])];
    if (v.head<2>().norm() < best_d) {
      best_d = v.head<2>().norm();
      best = int(c);
    }
  }
  spec.events = {{1, best, Vec3(0.0, 0.0, -2.0)}};
  const sim::Sequence seq = sim::generate(spec);
  const Vec3 c = seq.truth.vertices[0][std::size_t(seq.truth.control_vertices[std::size_t(best)])];
  EXPECT_EQ(seq.truth.vertices[1][std::size_t(seq.truth.control_vertices[std::size_t(best)])], c + Vec3(0, 0, -2));
  const PixelCoord u = *project(spec.intrinsics, c);
  const PixelIndex px{int(std::lround(u.x)), int(std::lround(u.y))};
  EXPECT_NEAR(seq.frames[0].depth(px.x, px.y), c.z(), 1e-6);
  EXPECT_NEAR(seq.frames[1].depth(px.x, px.y), c.z() - 2.0, 0.02);
  // The material seen there in frame 0 is 2 mm nearer in frame 1, less the
  // falloff at the surrounding vertices 1 mm away: 2 (1 - 1/144)^3 = 1.958.
  const auto before = seq.truth.material_point(0, px, 0), after = seq.truth.material_point(0, px, 1);
  ASSERT_TRUE(before && after);
  EXPECT_NEAR((*after - *before).z(), -2.0, 0.042);
  EXPECT_NEAR((*after - *before).head<2>().norm(), 0.0, 1e-9);
  // Far from the push nothing moves.
  EXPECT_EQ(seq.frames[1].depth(2, 2), seq.frames[0].depth(2, 2));
}

TEST(Generate, SameSeedSameSequence) {
  SceneSpec spec;
  spec.frames = 2;
  spec.deformation = sim::DeformationKind::Random;
  spec.noise_sigma = 0.3;
  spec.seed = 44;
  const sim::Sequence a = sim::generate(spec), b = sim::generate(spec);
  for (int f = 0; f < 2; ++f) {
    EXPECT_EQ(a.frames[f].depth, b.frames[f].depth);
    EXPECT_EQ(a.frames[f].rgb, b.frames[f].rgb);
    EXPECT_EQ(a.truth.vertices[f], b.truth.vertices[f]);
  }
  spec.seed = 45;
  EXPECT_NE(sim::generate(spec).frames[1].depth, a.frames[1].depth);
}

TEST(Generate, RandomPushesAreTwoToThreeMillimetres) {
  SceneSpec spec;
  spec.frames = 30;
  spec.surface = sim::SurfaceKind::Sinusoid;
  spec.deformation = sim::DeformationKind::Random;
  spec.seed = 8;
  const sim::Sequence seq = sim::generate(spec);
  ASSERT_EQ(seq.truth.events.size(), 29u);
  for (const auto& e : seq.truth.events) {
    EXPECT_GE(e.displacement.norm(), 2.0);
    EXPECT_LE(e.displacement.norm(), 3.0);
  }
}

TEST(Generate, NoiseHasTheRequestedSpread) {
  SceneSpec spec;
  spec.frames = 1;
  spec.noise_sigma = 0.3;
  const sim::Sequence seq = sim::generate(spec);
  double sq = 0.0;
  const auto& depth = seq.frames[0].depth.data();
  const auto& clean = seq.truth.clean_depth[0].data();
  for (std::size_t i = 0; i < depth.size(); ++i) sq += (depth[i] - clean[i]) * (depth[i] - clean[i]);
  EXPECT_NEAR(std::sqrt(sq / double(depth.size())), 0.3, 0.01);
}

TEST(Generate, CameraFacingAwayIsAnError) {
  SceneSpec spec;
  spec.frames = 1;
  spec.camera_poses = {rigid_from_euler_deg(0.0, 180.0, 0.0, Vec3::Zero())};
  EXPECT_EQ(code_of([&] { sim::generate(spec); }), ErrorCode::EmptyRender);
}

TEST(Generate, InvalidSpecsAreRejected) {
  SceneSpec spec;
  spec.extent_x = 0.0;
  EXPECT_EQ(code_of([&] { spec.validate(); }), ErrorCode::InvalidArgument);
  spec = {};
  spec.frames = 0;
  EXPECT_EQ(code_of([&] { spec.validate(); }), ErrorCode::InvalidArgument);
  spec = {};
  spec.deformation = sim::DeformationKind::Scripted;
  spec.frames = 2;
  spec.events = {{1, 1 << 20, Vec3(0, 0, 1)}};
  EXPECT_EQ(code_of([&] { sim::generate(spec); }), ErrorCode::InvalidArgument);
}

TEST(Falloff, SmoothCompactBump) {
  EXPECT_EQ(sim::falloff(0.0, 12.0), 1.0);
  EXPECT_EQ(sim::falloff(12.0, 12.0), 0.0);
  EXPECT_EQ(sim::falloff(20.0, 12.0), 0.0);
  EXPECT_NEAR(sim::falloff(6.0, 12.0), std::pow(0.75, 3), 1e-15);
  double prev = 1.0;
  for (double r = 0.1; r < 12.0; r += 0.1) {
    const double v = sim::falloff(r, 12.0);
    EXPECT_LT(v, prev);
    prev = v;
  }
}

// ---------------------------------------------------------------------------
// Evaluation

TEST(Evaluate, SampledTrueSurfaceIsWithinRenderTolerance) {
  for (sim::SurfaceKind kind : {sim::SurfaceKind::Plane, sim::SurfaceKind::Sinusoid, sim::SurfaceKind::HalfCylinder}) {
    SceneSpec spec;
    spec.surface = kind;
    spec.frames = 1;
    const sim::Sequence seq = sim::generate(spec);
    const sim::Metrics m = sim::evaluate(cloud_from(seq.frames[0]), seq.truth, 0);
    EXPECT_LT(m.mean, 0.05) << int(kind);
    // Round trip: every back-projected pixel lies on the surface.
    EXPECT_LT(m.max, 0.05) << int(kind);
  }
}

TEST(Evaluate, OffsetAlongTheNormalIsMeasured) {
  SceneSpec spec;
  spec.frames = 1;
  spec.extent_x = 200.0;
  spec.extent_y = 200.0;
  const sim::Sequence seq = sim::generate(spec);
  SurfelCloud cloud = cloud_from(seq.frames[0]);
  for (Surfel& s : cloud.surfels()) s.position.z() += 1.0;
  const sim::Metrics m = sim::evaluate(cloud, seq.truth, 0);
  EXPECT_NEAR(m.mean, 1.0, 0.02);
  EXPECT_NEAR(m.median, 1.0, 0.02);
}

TEST(Evaluate, EmptyModelIsAnError) {
  SceneSpec spec;
  spec.frames = 1;
  const sim::Sequence seq = sim::generate(spec);
  EXPECT_EQ(code_of([&] { sim::evaluate(SurfelCloud{}, seq.truth, 0); }), ErrorCode::EmptyModel);
}

TEST(EvaluateTracked, PerfectTrackingHasZeroError) {
  SceneSpec spec;
  spec.frames = 2;
  spec.deformation = sim::DeformationKind::Random;
  spec.seed = 2;
  const sim::Sequence seq = sim::generate(spec);
  // Surfels placed where their frame-0 material is at frame 1.
  SurfelCloud cloud;
  std::vector<Provenance> origins;
  for (int y = 0; y < 96; y += 4)
    for (int x = 0; x < 128; x += 4) {
      const auto p = seq.truth.track(0, {x, y}, 1);
      if (!p) continue;
      Surfel s;
      s.position = *p;
      cloud.push_back(s);
      origins.push_back({0, {x, y}});
    }
  const sim::Metrics m = sim::evaluate_tracked(cloud, origins, seq.truth, 1);
  EXPECT_GT(m.count, 500u);
  EXPECT_LT(m.max, 1e-9);
}

// ---------------------------------------------------------------------------
// Files

TEST(WriteSequence, TruthRoundTrips) {
  SceneSpec spec;
  spec.frames = 3;
  spec.deformation = sim::DeformationKind::Random;
  spec.camera_step = rigid_from_euler_deg(0.5, 0.2, 0.1, Vec3(0.3, 0.1, 0.0));
  const sim::Sequence seq = sim::generate(spec);
  const test::TempDir dir("sim_truth");
  sim::write_sequence(dir.path(), seq);
  const sim::GroundTruth back = sim::load_truth(dir.path());
  ASSERT_EQ(back.num_frames(), 3u);
  EXPECT_EQ(back.triangles, seq.truth.triangles);
  for (std::size_t f = 0; f < 3; ++f) {
    EXPECT_LT((back.poses[f].rotation - seq.truth.poses[f].rotation).norm(), 1e-14);
    EXPECT_LT((back.poses[f].translation - seq.truth.poses[f].translation).norm(), 1e-13);
    ASSERT_EQ(back.vertices[f].size(), seq.truth.vertices[f].size());
    for (std::size_t i = 0; i < back.vertices[f].size(); ++i)
      EXPECT_LT((back.vertices[f][i] - seq.truth.vertices[f][i]).norm(), 1e-4);
  }
  // Evaluation from disk matches evaluation in memory.
  const SurfelCloud cloud = cloud_from(seq.frames[2]);
  EXPECT_NEAR(sim::evaluate(cloud, back, 2).mean, sim::evaluate(cloud, seq.truth, 2).mean, 1e-4);
}

TEST(ParseScene, ReadsKeys) {
  const SceneSpec s = sim::parse_scene(R"({
    "surface": "sinusoid", "extent_mm": [70, 50], "distance_mm": 60, "bump_amplitude_mm": 2,
    "texture": "checker", "checker_cell_mm": 5, "frames": 4, "noise_sigma_mm": 0.25, "seed": 9,
    "deformation": "scripted", "events": [{"frame": 2, "control": 3, "displacement": [0, 0, -2.5]}],
    "camera_step": [0, 1, 0, 0.5, 0, 0]
  })");
  EXPECT_EQ(s.surface, sim::SurfaceKind::Sinusoid);
  EXPECT_EQ(s.extent_x, 70.0);
  EXPECT_EQ(s.extent_y, 50.0);
  EXPECT_EQ(s.distance, 60.0);
  EXPECT_EQ(s.texture, sim::TextureKind::Checker);
  EXPECT_EQ(s.frames, 4);
  EXPECT_EQ(s.seed, 9u);
  ASSERT_EQ(s.events.size(), 1u);
  EXPECT_EQ(s.events[0].control, 3);
  EXPECT_EQ(s.events[0].displacement, Vec3(0, 0, -2.5));
  EXPECT_NEAR(s.camera_step.translation.x(), 0.5, 1e-15);
}

TEST(ParseScene, RejectsMalformedInput) {
  for (const char* text : {R"({"surfce": "plane"})", R"({"frames": "ten"})", R"({"surface": "torus"})",
                           R"({"extent_mm": [1]})", R"([1, 2])", "{not json"}) {
    EXPECT_EQ(code_of([&] { sim::parse_scene(text); }), ErrorCode::MalformedInput) << text;
  }
}

}  // namespace
}  // namespace edfusion
