#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "edfusion/correspond.hpp"
#include "edfusion/energy.hpp"
#include "edfusion/fusion.hpp"
#include "edfusion/solver.hpp"

namespace edfusion {

struct PipelineConfig {
  double node_spacing = 4.0;  // mm; also the fusion grid size eps
  int graph_neighbors = 6;
  int binding_k = 4;
  int normal_k = 8;
  EnergyWeights weights;
  VisibilityParams visibility;
  SolverConfig solver;
  MatcherConfig matcher;
  RansacConfig ransac;
  FusionParams fusion;
  double depth_filter_sigma_px = 1.0;  // bilateral smoothing of registration depth, 0 = off
  double depth_filter_sigma_mm = 1.0;  // range sigma of that filter
  double frame_skip_error_threshold = 2.0;  // mm, mean residual above which a frame is discarded
  std::uint64_t seed = 0;

  /// Checks every sub-config; throws Error(InvalidArgument).
  void validate() const;

  /// Fusion parameters with eps tied to node_spacing.
  FusionParams fusion_params() const {
    FusionParams p = fusion;
    p.eps = node_spacing;
    return p;
  }
};

/// Flat JSON object; absent keys keep their defaults, unknown keys and
/// mistyped values throw Error(MalformedInput). Keys:
///   node_spacing_mm graph_neighbors binding_k normal_k
///   w_rot w_reg w_data w_corr
///   eps_d_mm eps_n_deg use_distance_field df_cell_mm
///   lm_mu_init lm_mu_up lm_mu_down lm_max_iters lm_rel_tol lm_step_tol lm_max_retries
///   match_stride match_patch match_max_descriptor_dist match_ratio_test
///   match_search_radius match_min_patch_std match_refine_radius
///   ransac_threshold_mm ransac_max_iters ransac_min_inliers ransac_refine_rounds
///   tau_mm omega_max insert_cell_mm depth_filter_sigma_px depth_filter_sigma_mm
///   frame_skip_error_threshold_mm seed
PipelineConfig parse_config(const std::string& json_text);
PipelineConfig load_config(const std::filesystem::path& path);
std::string dump_config(const PipelineConfig& cfg);

}  // namespace edfusion
