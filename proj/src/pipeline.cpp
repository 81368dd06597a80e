#include "edfusion/pipeline.hpp"

#include <chrono>
#include <sstream>

#include <spdlog/spdlog.h>

#include "edfusion/energy.hpp"
#include "edfusion/error.hpp"
#include "edfusion/fusion.hpp"
#include "edfusion/io.hpp"

namespace edfusion {

std::string_view to_string(FrameOutcome o) {
  switch (o) {
    case FrameOutcome::Initialized: return "initialized";
    case FrameOutcome::Fused: return "fused";
    case FrameOutcome::Discarded: return "discarded";
    case FrameOutcome::Skipped: return "skipped";
  }
  return "unknown";
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::uint64_t frame_seed(std::uint64_t seed, int frame) {
  std::uint64_t x = seed ^ (static_cast<std::uint64_t>(frame) * 0x9E3779B97F4A7C15ull);
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

// Registration and insertion see the smoothed depth; fusion sees the raw depth.
Observation registration_view(const DepthFrame& frame, const PipelineConfig& cfg) {
  DepthFrame smooth = frame;
  smooth.depth = bilateral_filter(frame.depth, cfg.depth_filter_sigma_px, cfg.depth_filter_sigma_mm);
  return Observation(std::move(smooth));
}

constexpr int kGuidedRounds = 2;

// Matches again against the model rendered under the first rigid estimate,
// where patches line up up to the estimate's error, and refits. Returns
// nothing when the provider has no second pass or the refit fails.
std::optional<std::pair<CorrespondenceSet, RansacResult>> refine_matches(const SurfelCloud& model,
                                                                         const DepthFrame& frame,
                                                                         const CorrespondenceProvider& provider,
                                                                         const RigidTransform& estimate,
                                                                         const RansacConfig& rc) {
  SurfelCloud predicted = model;
  transform(predicted, estimate);
  const auto facing = facing_surfels(predicted, frame.intrinsics);
  ModelView view = render_model_view(predicted, frame.intrinsics, facing, frame.frame_index);
  close_view_holes(view);
  CorrespondenceSet corrs = provider.refine(view, frame);
  if (corrs.empty()) return std::nullopt;
  const RigidTransform back = estimate.inverse();
  for (auto& c : corrs.pairs) c.src = back(c.src);
  try {
    RansacResult rr = ransac_rigid(corrs, rc);
    return std::make_pair(std::move(corrs), std::move(rr));
  } catch (const Error& e) {
    if (e.code() != ErrorCode::PoseInitFailed) throw;
    return std::nullopt;
  }
}

void rebuild_graph(PipelineState& s, const PipelineConfig& cfg) {
  s.graph = sample_nodes(s.model, cfg.node_spacing, cfg.graph_neighbors);
  const auto positions = s.model.positions();
  s.bindings = bind_points_clamped(s.graph, positions, cfg.binding_k);
}

FrameReport initialize(PipelineState& state, const DepthFrame& frame, const PipelineConfig& cfg) {
  const auto t0 = Clock::now();
  FrameReport rep;
  rep.frame_index = frame.frame_index;
  rep.outcome = FrameOutcome::Initialized;
  const Observation obs = registration_view(frame, cfg);
  PipelineState next;
  std::vector<PixelIndex> pixels;
  auto t = Clock::now();
  rep.n_inserted = insert_new_points(next.model, obs, cfg.fusion_params(), &pixels);
  rep.times.insert = seconds_since(t);
  if (next.model.empty()) throw Error(ErrorCode::EmptyModel, "first frame has no usable depth");
  for (const auto& px : pixels) next.origins.push_back({frame.frame_index, px});
  t = Clock::now();
  rebuild_graph(next, cfg);
  rep.times.graph = seconds_since(t);
  next.frame_index = frame.frame_index;
  next.initialized = true;
  state = std::move(next);
  rep.model_size = state.model.size();
  rep.n_nodes = state.graph.size();
  rep.times.total = seconds_since(t0);
  return rep;
}

}  // namespace

FrameReport process_frame(PipelineState& state, const DepthFrame& frame, const PipelineConfig& cfg,
                          const CorrespondenceProvider& provider) {
  frame.validate();
  if (!state.initialized) return initialize(state, frame, cfg);

  const auto t0 = Clock::now();
  FrameReport rep;
  rep.frame_index = frame.frame_index;
  rep.camera_pose = state.camera_pose;
  rep.model_size = state.model.size();
  rep.n_nodes = state.graph.size();
  const CameraIntrinsics& intr = frame.intrinsics;
  const Observation obs = registration_view(frame, cfg);

  // Work on copies; the state changes only when the frame is accepted.
  SurfelCloud model = state.model;
  EDGraph graph = state.graph;

  std::vector<BoundCorrespondence> bound;
  if (cfg.weights.corr > 0.0) {
    auto t = Clock::now();
    const auto facing = facing_surfels(model, intr);
    const ModelView view = render_model_view(model, intr, facing, state.frame_index);
    CorrespondenceSet corrs = provider.find(view, frame);
    rep.n_correspondences = corrs.size();
    rep.times.match = seconds_since(t);

    t = Clock::now();
    RansacConfig rc = cfg.ransac;
    rc.seed = frame_seed(cfg.seed, frame.frame_index);
    try {
      RansacResult rr = ransac_rigid(corrs, rc);
      for (int round = 0; round < kGuidedRounds; ++round) {
        auto guided = refine_matches(model, frame, provider, rr.transform, rc);
        if (!guided) break;
        corrs = std::move(guided->first);
        rr = std::move(guided->second);
        rep.n_correspondences = corrs.size();
      }
      rep.rigid_init = rr.transform;
      rep.n_inliers = rr.inliers;
      for (std::size_t i = 0; i < corrs.pairs.size(); ++i) {
        if (!rr.inlier_mask[i]) continue;
        bound.push_back({rr.transform(corrs.pairs[i].src), corrs.pairs[i].dst, PointBinding{}});
      }
    } catch (const Error& e) {
      if (e.code() != ErrorCode::PoseInitFailed) throw;
      rep.pose_init_failed = true;
      spdlog::warn("frame {}: rigid initialization failed ({}), starting from identity", frame.frame_index, e.what());
    }
    rep.times.ransac = seconds_since(t);
    transform(model, rep.rigid_init);
    graph.apply_rigid_to_nodes(rep.rigid_init);
    if (!bound.empty()) {
      std::vector<Vec3> src;
      src.reserve(bound.size());
      for (const auto& b : bound) src.push_back(b.src);
      const auto bindings = bind_points_clamped(graph, src, cfg.binding_k);
      for (std::size_t i = 0; i < bound.size(); ++i) bound[i].binding = bindings[i];
    }
  }

  auto t = Clock::now();
  std::vector<int> visible = predict_visible(model, obs, cfg.visibility);
  rep.n_visible = visible.size();
  rep.times.visible = seconds_since(t);

  t = Clock::now();
  std::optional<WarpEnergy> energy;
  try {
    energy.emplace(graph, model, state.bindings, std::move(visible), obs, std::move(bound), cfg.weights);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::NoConstraints) throw;
    spdlog::warn("frame {}: no overlap with the model, frame skipped", frame.frame_index);
    rep.outcome = FrameOutcome::Skipped;
    rep.times.total = seconds_since(t0);
    return rep;
  }
  const SolveResult sol = lm_solve(*energy, graph.parameters(), cfg.solver);
  rep.solve = sol.report;
  rep.solve.terms = energy->terms(sol.x);
  const auto stats = energy->data_residual_stats(sol.x);
  rep.mean_residual = stats.mean;
  rep.max_residual = stats.max;
  rep.times.solve = seconds_since(t);

  if (rep.mean_residual > cfg.frame_skip_error_threshold) {
    spdlog::warn("frame {}: mean residual {:.3f} mm above {:.3f} mm, frame discarded", frame.frame_index,
                 rep.mean_residual, cfg.frame_skip_error_threshold);
    rep.outcome = FrameOutcome::Discarded;
    rep.times.total = seconds_since(t0);
    return rep;
  }

  t = Clock::now();
  graph.set_parameters(sol.x);
  WarpDiagnostics diag;
  SurfelCloud warped = apply_warp(graph, model, state.bindings, &diag);
  if (diag.singular_normal_terms > 0)
    spdlog::warn("frame {}: {} near-singular node transforms while warping normals", frame.frame_index,
                 diag.singular_normal_terms);
  estimate_normals(warped, cfg.normal_k);
  const FusionParams fp = cfg.fusion_params();
  const auto fuse_set = predict_visible(warped, obs, cfg.visibility);
  rep.n_fused = fuse_depth(warped, graph, state.bindings, fuse_set, frame, fp).fused;
  rep.times.fuse = seconds_since(t);

  t = Clock::now();
  PipelineState next;
  next.origins = state.origins;
  std::vector<PixelIndex> pixels;
  rep.n_inserted = insert_new_points(warped, obs, fp, &pixels);
  for (const auto& px : pixels) next.origins.push_back({frame.frame_index, px});
  rep.times.insert = seconds_since(t);

  t = Clock::now();
  next.model = std::move(warped);
  rebuild_graph(next, cfg);
  rep.times.graph = seconds_since(t);

  next.frame_index = frame.frame_index;
  next.camera_pose = state.camera_pose * rep.rigid_init.inverse();
  next.initialized = true;
  state = std::move(next);

  rep.outcome = FrameOutcome::Fused;
  rep.camera_pose = state.camera_pose;
  rep.model_size = state.model.size();
  rep.n_nodes = state.graph.size();
  rep.times.total = seconds_since(t0);
  return rep;
}

SequenceResult run_sequence(const PipelineConfig& cfg, const FrameSource& source,
                            const CorrespondenceProvider& provider, const RunOptions& options) {
  cfg.validate();
  if (source.size() == 0) throw Error(ErrorCode::NoFrames, "no frames to process");
  SequenceResult out;
  double residual_sum = 0.0;
  for (std::size_t i = 0; i < source.size(); ++i) {
    FrameReport rep;
    try {
      const DepthFrame frame = source.load(i);
      rep = process_frame(out.state, frame, cfg, provider);
      if (options.export_every > 0 && (i + 1) % static_cast<std::size_t>(options.export_every) == 0) {
        char name[64];
        std::snprintf(name, sizeof name, "model_%06zu.ply", i + 1);
        io::write_ply(options.export_dir / name, out.state.model);
      }
    } catch (const Error& e) {
      throw Error(e.code(), "frame " + std::to_string(i) + ": " + e.what());
    }
    switch (rep.outcome) {
      case FrameOutcome::Fused:
        ++out.summary.fused;
        residual_sum += rep.mean_residual;
        break;
      case FrameOutcome::Discarded: ++out.summary.discarded; break;
      case FrameOutcome::Skipped: ++out.summary.skipped; break;
      case FrameOutcome::Initialized: break;
    }
    if (options.on_frame) options.on_frame(rep, out.state);
    spdlog::info("frame {}: {} visible={} corr={} inliers={} iters={} residual={:.4f} model={}", rep.frame_index,
                 to_string(rep.outcome), rep.n_visible, rep.n_correspondences, rep.n_inliers, rep.solve.iterations,
                 rep.mean_residual, rep.model_size);
    out.reports.push_back(rep);
  }
  out.summary.frames = source.size();
  if (out.summary.fused > 0) out.summary.mean_residual = residual_sum / static_cast<double>(out.summary.fused);
  return out;
}

std::string summary_csv_header() {
  return "schema_version,frame,outcome,n_visible,n_correspondences,n_inliers,pose_init_failed,"
         "rot_deg,tx,ty,tz,lm_iterations,lm_rejected,lm_termination,energy_initial,energy_final,"
         "e_rot,e_reg,e_data,e_corr,mean_residual_mm,max_residual_mm,n_fused,n_inserted,model_size,n_nodes,"
         "t_visible_s,t_match_s,t_ransac_s,t_solve_s,t_fuse_s,t_insert_s,t_graph_s,t_total_s";
}

std::string summary_csv_row(const FrameReport& r) {
  std::ostringstream os;
  os.precision(9);
  const auto& T = r.rigid_init;
  os << kSummaryCsvVersion << ',' << r.frame_index << ',' << to_string(r.outcome) << ',' << r.n_visible << ','
     << r.n_correspondences << ',' << r.n_inliers << ',' << (r.pose_init_failed ? 1 : 0) << ','
     << rotation_angle_deg(T.rotation) << ',' << T.translation.x() << ',' << T.translation.y() << ','
     << T.translation.z() << ',' << r.solve.iterations << ',' << r.solve.rejected_steps << ','
     << to_string(r.solve.reason) << ',' << r.solve.initial_energy << ',' << r.solve.final_energy << ','
     << r.solve.terms.rot << ',' << r.solve.terms.reg << ',' << r.solve.terms.data << ',' << r.solve.terms.corr << ','
     << r.mean_residual << ',' << r.max_residual << ',' << r.n_fused << ',' << r.n_inserted << ',' << r.model_size
     << ',' << r.n_nodes << ',' << r.times.visible << ',' << r.times.match << ',' << r.times.ransac << ','
     << r.times.solve << ',' << r.times.fuse << ',' << r.times.insert << ',' << r.times.graph << ','
     << r.times.total;
  return os.str();
}

}  // namespace edfusion
