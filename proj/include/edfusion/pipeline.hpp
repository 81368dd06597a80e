#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include "edfusion/config.hpp"
#include "edfusion/correspond.hpp"
#include "edfusion/image.hpp"
#include "edfusion/solver.hpp"
#include "edfusion/surfel_cloud.hpp"
#include "edfusion/warp.hpp"

namespace edfusion {

/// Everything carried from one frame to the next. The model is kept in the
/// coordinates of the last accepted camera, so each frame registers against
/// the model alone.
struct PipelineState {
  SurfelCloud model;
  std::vector<Provenance> origins;  // parallel to model
  EDGraph graph;
  std::vector<PointBinding> bindings;  // parallel to model
  int frame_index = -1;                // camera the model is expressed in
  RigidTransform camera_pose;          // that camera relative to the first one
  bool initialized = false;
};

struct StageTimes {
  double visible = 0.0;  // seconds
  double match = 0.0;
  double ransac = 0.0;
  double solve = 0.0;
  double fuse = 0.0;
  double insert = 0.0;
  double graph = 0.0;
  double total = 0.0;
};

enum class FrameOutcome { Initialized, Fused, Discarded, Skipped };
std::string_view to_string(FrameOutcome o);

struct FrameReport {
  int frame_index = 0;
  FrameOutcome outcome = FrameOutcome::Fused;
  std::size_t n_visible = 0;
  std::size_t n_correspondences = 0;
  std::size_t n_inliers = 0;
  bool pose_init_failed = false;
  RigidTransform rigid_init;   // previous camera -> this camera
  RigidTransform camera_pose;  // this camera relative to the first one
  SolveReport solve;
  double mean_residual = 0.0;  // mm, |point-to-plane| over associated visible surfels
  double max_residual = 0.0;
  std::size_t n_fused = 0;
  std::size_t n_inserted = 0;
  std::size_t model_size = 0;
  std::size_t n_nodes = 0;
  StageTimes times;
};

/// Runs one frame through visibility, model-view matching, rigid
/// initialization, the warp solve, deformation, fusion, insertion and graph
/// resampling. The first frame initializes the model. A frame whose mean
/// residual exceeds the skip threshold, or that shares nothing with the model,
/// leaves the state untouched. With w_corr = 0 no matching or rigid
/// initialization is done.
FrameReport process_frame(PipelineState& state, const DepthFrame& frame, const PipelineConfig& cfg,
                          const CorrespondenceProvider& provider);

/// Random-access frame sequence.
class FrameSource {
 public:
  virtual ~FrameSource() = default;
  virtual std::size_t size() const = 0;
  virtual DepthFrame load(std::size_t i) const = 0;
};

class MemorySource : public FrameSource {
 public:
  explicit MemorySource(std::vector<DepthFrame> frames) : frames_(std::move(frames)) {}
  std::size_t size() const override { return frames_.size(); }
  DepthFrame load(std::size_t i) const override { return frames_.at(i); }

 private:
  std::vector<DepthFrame> frames_;
};

struct RunOptions {
  int export_every = 0;                // write model_%06d.ply every N frames (0 = never)
  std::filesystem::path export_dir;    // where periodic models go
  std::function<void(const FrameReport&, const PipelineState&)> on_frame;
};

struct SequenceSummary {
  std::size_t frames = 0;
  std::size_t fused = 0;
  std::size_t discarded = 0;
  std::size_t skipped = 0;
  double mean_residual = 0.0;  // over fused frames
};

struct SequenceResult {
  std::vector<FrameReport> reports;
  PipelineState state;
  SequenceSummary summary;
};

/// Folds process_frame over the source. Throws Error(NoFrames) for an empty
/// source; errors from a frame are rethrown with the frame index in the message.
SequenceResult run_sequence(const PipelineConfig& cfg, const FrameSource& source,
                            const CorrespondenceProvider& provider, const RunOptions& options = {});

/// Column header of summary.csv and one row per report.
std::string summary_csv_header();
std::string summary_csv_row(const FrameReport& r);
inline constexpr int kSummaryCsvVersion = 1;

}  // namespace edfusion
