#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <random>

#include <Eigen/Eigenvalues>

#include "edfusion/correspond.hpp"
#include "edfusion/error.hpp"
#include "edfusion/simulator.hpp"
#include "test_support.hpp"

namespace edfusion {
namespace {

/// Surfels at the frame's pixels with normals from the depth map.
SurfelCloud oriented_cloud(const DepthFrame& f) {
  const NormalImage normals = depth_normals(f);
  SurfelCloud cloud;
  for (int y = 0; y < f.depth.height(); ++y)
    for (int x = 0; x < f.depth.width(); ++x) {
      if (!f.valid(x, y) || !normals(x, y)) continue;
      Surfel s;
      s.position = back_project(f.intrinsics, PixelCoord{double(x), double(y)}, f.depth(x, y));
      s.normal = *normals(x, y);
      s.color = f.rgb(x, y);
      s.weight = 1.0;
      cloud.push_back(s);
    }
  return cloud;
}

ModelView view_of(const DepthFrame& f) {
  const SurfelCloud cloud = oriented_cloud(f);
  return render_model_view(cloud, f.intrinsics, facing_surfels(cloud, f.intrinsics), f.frame_index);
}

sim::Sequence textured_scene(sim::SurfaceKind surface, sim::TextureKind texture, int frames = 1,
                             RigidTransform step = {}) {
  sim::SceneSpec spec;
  spec.surface = surface;
  spec.texture = texture;
  spec.frames = frames;
  spec.camera_step = step;
  spec.seed = 5;
  return sim::generate(spec);
}

/// Pixel displacement of a correspondence as seen by one camera.
Eigen::Vector2d displacement(const CameraIntrinsics& intr, const Correspondence& c) {
  const PixelCoord a = *project(intr, c.src), b = *project(intr, c.dst);
  return {b.x - a.x, b.y - a.y};
}

TEST(RenderModelView, ReproducesTheDepthItWasBuiltFrom) {
  const DepthFrame f = textured_scene(sim::SurfaceKind::Sinusoid, sim::TextureKind::Noise).frames[0];
  const ModelView view = view_of(f);
  int covered = 0;
  for (int y = 0; y < f.depth.height(); ++y)
    for (int x = 0; x < f.depth.width(); ++x) {
      if (view.surfel(x, y) < 0) continue;
      ++covered;
      EXPECT_NEAR(view.depth(x, y), f.depth(x, y), 0.1) << x << "," << y;
    }
  EXPECT_GT(covered, f.depth.width() * f.depth.height() * 9 / 10);
}

TEST(RenderModelView, NearerSurfelWinsAndTiesGoToTheLowerIndex) {
  const CameraIntrinsics intr = test::small_camera();
  SurfelCloud cloud;
  auto add = [&](double z, Rgb8 c) {
    Surfel s;
    s.position = Vec3(0.0, 0.0, z);
    s.normal = Vec3(0.0, 0.0, -1.0);
    s.color = c;
    cloud.push_back(s);
  };
  add(60.0, {255, 0, 0});
  add(50.0, {0, 255, 0});
  add(50.0, {0, 0, 255});
  const std::vector<int> all{0, 1, 2};
  const ModelView view = render_model_view(cloud, intr, all);
  EXPECT_EQ(view.surfel(50, 50), 1);
  EXPECT_DOUBLE_EQ(view.depth(50, 50), 50.0);
  EXPECT_EQ(view.surfel(10, 10), -1);
  EXPECT_EQ(view.depth(10, 10), 0.0);
}

TEST(RenderModelView, CheckerTextureSurvivesTheRoundTrip) {
  const DepthFrame f = textured_scene(sim::SurfaceKind::Plane, sim::TextureKind::Checker).frames[0];
  const ModelView view = view_of(f);
  int covered = 0, same = 0;
  for (int y = 0; y < f.depth.height(); ++y)
    for (int x = 0; x < f.depth.width(); ++x) {
      if (view.surfel(x, y) < 0) continue;
      ++covered;
      same += view.rgb(x, y) == f.rgb(x, y);
    }
  ASSERT_GT(covered, 0);
  EXPECT_GT(double(same) / covered, 0.95);
}

TEST(RenderModelView, BackFacingSurfelsAreNotCandidates) {
  SurfelCloud cloud;
  Surfel s;
  s.position = Vec3(0.0, 0.0, 50.0);
  s.normal = Vec3(0.0, 0.0, 1.0);
  cloud.push_back(s);
  s.normal = Vec3(0.0, 0.0, -1.0);
  cloud.push_back(s);
  s.position = Vec3(0.0, 0.0, -50.0);
  cloud.push_back(s);
  EXPECT_EQ(facing_surfels(cloud, test::small_camera()), std::vector<int>{1});
}

TEST(CloseViewHoles, FillsIsolatedGapsFromNeighbours) {
  const DepthFrame f = test::plane_frame(test::small_camera(), 40.0);
  ModelView view = view_of(f);
  const double before = view.depth(30, 30);
  view.depth(30, 30) = 0.0;
  view.surfel(30, 30) = -1;
  view.depth(60, 60) = 0.0;
  view.surfel(60, 60) = -1;
  close_view_holes(view);
  EXPECT_NEAR(view.depth(30, 30), before, 1e-9);
  EXPECT_GT(view.depth(60, 60), 0.0);
  EXPECT_EQ(view.surfel(30, 30), -1);
}

TEST(CloseViewHoles, LeavesLargeEmptyRegionsAlone) {
  DepthFrame f = test::plane_frame(test::small_camera(), 40.0);
  for (int y = 0; y < 101; ++y)
    for (int x = 0; x < 50; ++x) f.depth(x, y) = 0.0;
  ModelView view = view_of(f);
  close_view_holes(view);
  EXPECT_EQ(view.depth(10, 50), 0.0);
  EXPECT_EQ(view.depth(40, 50), 0.0);
}

TEST(MatchDense, IdenticalImagesMatchInPlace) {
  const DepthFrame f = textured_scene(sim::SurfaceKind::Plane, sim::TextureKind::Noise).frames[0];
  const CorrespondenceSet set = match_dense(view_of(f), f, {});
  ASSERT_GT(set.size(), 100u);
  for (const Correspondence& c : set.pairs) EXPECT_LT(displacement(f.intrinsics, c).norm(), 0.05);
}

TEST(MatchDense, ShiftedImageGivesTheShiftAsModalDisplacement) {
  const DepthFrame f = textured_scene(sim::SurfaceKind::Plane, sim::TextureKind::Noise).frames[0];
  DepthFrame shifted = f;
  for (int y = 0; y < f.depth.height(); ++y)
    for (int x = 0; x < f.depth.width(); ++x) {
      const int sx = std::max(x - 5, 0);
      shifted.depth(x, y) = f.depth(sx, y);
      shifted.rgb(x, y) = f.rgb(sx, y);
    }
  const CorrespondenceSet set = match_dense(view_of(f), shifted, {});
  ASSERT_GT(set.size(), 100u);
  std::map<std::pair<long, long>, int> votes;
  for (const Correspondence& c : set.pairs) {
    const Eigen::Vector2d d = displacement(f.intrinsics, c);
    ++votes[{std::lround(d.x()), std::lround(d.y())}];
  }
  const auto mode = std::max_element(votes.begin(), votes.end(),
                                     [](const auto& a, const auto& b) { return a.second < b.second; });
  EXPECT_EQ(mode->first, std::make_pair(5L, 0L));
  EXPECT_GT(double(mode->second) / set.size(), 0.9);
}

TEST(MatchDense, TexturelessImagesGiveNothing) {
  const DepthFrame f = test::plane_frame(test::small_camera(), 40.0);
  EXPECT_TRUE(match_dense(view_of(f), f, {}).empty());
}

TEST(MatchDense, ConfigIsValidated) {
  MatcherConfig cfg;
  cfg.patch = 10;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = {};
  cfg.stride = 0;
  EXPECT_THROW(cfg.validate(), Error);
}

// ---------------------------------------------------------------------------
// Rigid fitting

/// Procrustes through the 4x4 quaternion eigenproblem, independent of the SVD path.
RigidTransform horn_fit(const std::vector<Vec3>& src, const std::vector<Vec3>& dst) {
  Vec3 cs = Vec3::Zero(), cd = Vec3::Zero();
  for (std::size_t i = 0; i < src.size(); ++i) cs += src[i], cd += dst[i];
  cs /= double(src.size());
  cd /= double(dst.size());
  Mat3 m = Mat3::Zero();
  for (std::size_t i = 0; i < src.size(); ++i) m += (src[i] - cs) * (dst[i] - cd).transpose();
  Eigen::Matrix4d n;
  n << m(0, 0) + m(1, 1) + m(2, 2), m(1, 2) - m(2, 1), m(2, 0) - m(0, 2), m(0, 1) - m(1, 0),
      m(1, 2) - m(2, 1), m(0, 0) - m(1, 1) - m(2, 2), m(0, 1) + m(1, 0), m(2, 0) + m(0, 2),
      m(2, 0) - m(0, 2), m(0, 1) + m(1, 0), -m(0, 0) + m(1, 1) - m(2, 2), m(1, 2) + m(2, 1),
      m(0, 1) - m(1, 0), m(2, 0) + m(0, 2), m(1, 2) + m(2, 1), -m(0, 0) - m(1, 1) + m(2, 2);
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> eig(n);
  const Eigen::Vector4d q = eig.eigenvectors().col(3);
  RigidTransform out;
  out.rotation = Eigen::Quaterniond(q[0], q[1], q[2], q[3]).toRotationMatrix();
  out.translation = cd - out.rotation * cs;
  return out;
}

CorrespondenceSet pairs_under(const RigidTransform& m, int n, std::mt19937_64& rng, double noise = 0.0) {
  std::normal_distribution<double> g(0.0, noise > 0.0 ? noise : 1.0);
  CorrespondenceSet set;
  for (int i = 0; i < n; ++i) {
    const Vec3 p = test::random_vec(rng, -30.0, 30.0) + Vec3(0, 0, 60);
    Vec3 q = m(p);
    if (noise > 0.0) q += Vec3(g(rng), g(rng), g(rng));
    set.add({p, q, 1.0});
  }
  return set;
}

std::vector<Vec3> srcs(const CorrespondenceSet& s) {
  std::vector<Vec3> out;
  for (const auto& c : s.pairs) out.push_back(c.src);
  return out;
}
std::vector<Vec3> dsts(const CorrespondenceSet& s) {
  std::vector<Vec3> out;
  for (const auto& c : s.pairs) out.push_back(c.dst);
  return out;
}

TEST(FitRigid, AgreesWithTheQuaternionSolution) {
  std::mt19937_64 rng(61);
  for (int trial = 0; trial < 20; ++trial) {
    RigidTransform m;
    m.rotation = test::random_rotation(rng);
    m.translation = test::random_vec(rng, -20.0, 20.0);
    const CorrespondenceSet set = pairs_under(m, 30, rng, 0.5);
    const std::vector<Vec3> s = srcs(set), d = dsts(set);
    const RigidTransform a = fit_rigid(s, d), b = horn_fit(s, d);
    EXPECT_LT((a.rotation - b.rotation).norm(), 1e-9);
    EXPECT_LT((a.translation - b.translation).norm(), 1e-8);
  }
}

TEST(FitRigid, NeverReturnsAReflection) {
  // Mirrored points: the unconstrained optimum is a reflection.
  std::mt19937_64 rng(62);
  std::vector<Vec3> s, d;
  for (int i = 0; i < 20; ++i) {
    const Vec3 p = test::random_vec(rng, -10.0, 10.0);
    s.push_back(p);
    d.push_back(Vec3(-p.x(), p.y(), p.z()));
  }
  EXPECT_TRUE(is_rotation(fit_rigid(s, d).rotation));
}

TEST(RansacRigid, AlignedPairsGiveIdentity) {
  std::mt19937_64 rng(63);
  const CorrespondenceSet set = pairs_under({}, 50, rng);
  const RansacResult r = ransac_rigid(set, {});
  EXPECT_LT((r.transform.rotation - Mat3::Identity()).norm(), 1e-12);
  EXPECT_LT(r.transform.translation.norm(), 1e-10);
  EXPECT_EQ(r.inliers, 50u);
}

TEST(RansacRigid, ExactPairsGiveTheExactMotion) {
  std::mt19937_64 rng(64);
  RigidTransform m;
  m.rotation = test::random_rotation(rng, 30.0);
  m.translation = Vec3(4.0, -7.0, 2.5);
  const CorrespondenceSet set = pairs_under(m, 100, rng);
  const RansacResult r = ransac_rigid(set, {});
  EXPECT_LT((r.transform.rotation - m.rotation).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LT((r.transform.translation - m.translation).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_EQ(r.inliers, 100u);
}

TEST(RansacRigid, ThirtyPercentOutliers) {
  int good = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(1000 + seed);
    RigidTransform m;
    m.rotation = test::random_rotation(rng, 10.0);
    m.translation = test::random_vec(rng, -10.0, 10.0);
    CorrespondenceSet set = pairs_under(m, 70, rng, 0.3);
    for (int i = 0; i < 30; ++i)
      set.add({test::random_vec(rng, -30.0, 30.0) + Vec3(0, 0, 60), test::random_vec(rng, -30.0, 30.0) + Vec3(0, 0, 60), 1.0});
    RansacConfig cfg;
    cfg.seed = seed;
    const RansacResult r = ransac_rigid(set, cfg);
    EXPECT_TRUE(is_rotation(r.transform.rotation));
    EXPECT_GE(r.inliers, r.minimal_sample_inliers);
    const double rot_err = rotation_angle_deg(r.transform.rotation * m.rotation.transpose());
    const double t_err = (r.transform.translation - m.translation).norm();
    good += rot_err < 0.5 && t_err < 0.5;
  }
  EXPECT_GE(good, 99);
}

TEST(RansacRigid, OutputIsAlwaysAProperRotation) {
  std::mt19937_64 rng(65);
  for (int trial = 0; trial < 50; ++trial) {
    CorrespondenceSet set;
    for (int i = 0; i < 40; ++i) set.add({test::random_vec(rng, -5.0, 5.0), test::random_vec(rng, -5.0, 5.0), 1.0});
    RansacConfig cfg;
    cfg.min_inliers = 3;
    cfg.inlier_threshold = 3.0;
    cfg.seed = std::uint64_t(trial);
    try {
      const RansacResult r = ransac_rigid(set, cfg);
      EXPECT_TRUE(is_rotation(r.transform.rotation));
      EXPECT_GE(r.inliers, r.minimal_sample_inliers);
      EXPECT_EQ(r.inlier_mask.size(), set.size());
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::PoseInitFailed);
    }
  }
}

TEST(RansacRigid, SameSeedSameAnswer) {
  std::mt19937_64 rng(66);
  CorrespondenceSet set = pairs_under(rigid_from_euler_deg(3, 2, 1, Vec3(1, 2, 3)), 60, rng, 0.3);
  for (int i = 0; i < 20; ++i) set.add({test::random_vec(rng, -30, 30), test::random_vec(rng, -30, 30), 1.0});
  RansacConfig cfg;
  cfg.seed = 9;
  const RansacResult a = ransac_rigid(set, cfg), b = ransac_rigid(set, cfg);
  EXPECT_EQ(a.transform.rotation, b.transform.rotation);
  EXPECT_EQ(a.transform.translation, b.transform.translation);
  EXPECT_EQ(a.inlier_mask, b.inlier_mask);
}

TEST(RansacRigid, TooFewPairsOrInliersFail) {
  std::mt19937_64 rng(67);
  auto code_of = [](const CorrespondenceSet& s, const RansacConfig& cfg) {
    try {
      ransac_rigid(s, cfg);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::InvalidArgument;
  };
  EXPECT_EQ(code_of(pairs_under({}, 2, rng), {}), ErrorCode::PoseInitFailed);
  EXPECT_EQ(code_of(pairs_under({}, 8, rng), {}), ErrorCode::PoseInitFailed);  // min_inliers 10
}

// ---------------------------------------------------------------------------
// Providers

/// Pose from whichever provider is handed in; the caller never sees its type.
RigidTransform pose_from(const CorrespondenceProvider& provider, const ModelView& view, const DepthFrame& frame) {
  return ransac_rigid(provider.find(view, frame), {}).transform;
}

TEST(Providers, GroundTruthAndNccAreInterchangeable) {
  const RigidTransform step = rigid_from_euler_deg(0.0, 1.0, 0.0, Vec3(1.0, 0.5, 0.0));
  const sim::Sequence seq = textured_scene(sim::SurfaceKind::Sinusoid, sim::TextureKind::Noise, 2, step);
  // Points in camera 0 coordinates move to camera 1 coordinates by the inverse pose change.
  const RigidTransform truth = seq.truth.poses[1].inverse() * seq.truth.poses[0];
  const ModelView view = view_of(seq.frames[0]);
  const sim::GroundTruthProvider gt(seq.truth);
  const NccProvider ncc;
  for (const CorrespondenceProvider* p : {static_cast<const CorrespondenceProvider*>(&gt),
                                          static_cast<const CorrespondenceProvider*>(&ncc)}) {
    const RigidTransform est = pose_from(*p, view, seq.frames[1]);
    EXPECT_LT(rotation_angle_deg(est.rotation * truth.rotation.transpose()), 0.2);
    EXPECT_LT((est.translation - truth.translation).norm(), 0.3);
  }
}

TEST(Providers, NccRefineUsesTheSmallRadiusAndCanBeDisabled) {
  const DepthFrame f = textured_scene(sim::SurfaceKind::Plane, sim::TextureKind::Noise).frames[0];
  const ModelView view = view_of(f);
  EXPECT_FALSE(NccProvider().refine(view, f).empty());
  MatcherConfig off;
  off.refine_radius = 0;
  EXPECT_TRUE(NccProvider(off).refine(view, f).empty());
}

}  // namespace
}  // namespace edfusion
