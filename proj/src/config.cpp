#include "edfusion/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

#include "edfusion/error.hpp"

namespace edfusion {

namespace {

using nlohmann::json;

template <typename Config, typename F>
void visit_fields(Config& c, F&& f) {
  f("node_spacing_mm", c.node_spacing);
  f("graph_neighbors", c.graph_neighbors);
  f("binding_k", c.binding_k);
  f("normal_k", c.normal_k);
  f("w_rot", c.weights.rot);
  f("w_reg", c.weights.reg);
  f("w_data", c.weights.data);
  f("w_corr", c.weights.corr);
  f("eps_d_mm", c.visibility.eps_d);
  f("eps_n_deg", c.visibility.eps_n_deg);
  f("use_distance_field", c.visibility.use_distance_field);
  f("df_cell_mm", c.visibility.df_cell);
  f("lm_mu_init", c.solver.mu_init);
  f("lm_mu_up", c.solver.mu_up);
  f("lm_mu_down", c.solver.mu_down);
  f("lm_max_iters", c.solver.max_iters);
  f("lm_rel_tol", c.solver.rel_tol);
  f("lm_step_tol", c.solver.step_tol);
  f("lm_max_retries", c.solver.max_retries);
  f("match_stride", c.matcher.stride);
  f("match_patch", c.matcher.patch);
  f("match_max_descriptor_dist", c.matcher.max_descriptor_dist);
  f("match_ratio_test", c.matcher.ratio_test);
  f("match_search_radius", c.matcher.search_radius);
  f("match_min_patch_std", c.matcher.min_patch_std);
  f("match_refine_radius", c.matcher.refine_radius);
  f("ransac_threshold_mm", c.ransac.inlier_threshold);
  f("ransac_max_iters", c.ransac.max_iters);
  f("ransac_min_inliers", c.ransac.min_inliers);
  f("ransac_refine_rounds", c.ransac.refine_rounds);
  f("tau_mm", c.fusion.tau);
  f("omega_max", c.fusion.omega_max);
  f("insert_cell_mm", c.fusion.insert_cell);
  f("depth_filter_sigma_px", c.depth_filter_sigma_px);
  f("depth_filter_sigma_mm", c.depth_filter_sigma_mm);
  f("frame_skip_error_threshold_mm", c.frame_skip_error_threshold);
  f("seed", c.seed);
}

template <typename T>
void read_value(const json& j, const std::string& key, T& out) {
  bool ok = false;
  if constexpr (std::is_same_v<T, bool>) ok = j.is_boolean();
  else if constexpr (std::is_same_v<T, double>) ok = j.is_number();
  else if constexpr (std::is_unsigned_v<T>) ok = j.is_number_unsigned();
  else ok = j.is_number_integer();
  if (!ok) throw Error(ErrorCode::MalformedInput, "config key '" + key + "' has the wrong type");
  out = j.get<T>();
}

}  // namespace

void PipelineConfig::validate() const {
  if (!(node_spacing > 0.0)) throw Error(ErrorCode::InvalidArgument, "node_spacing must be > 0");
  if (graph_neighbors < 1 || binding_k < 1 || binding_k > kMaxBindingNodes || normal_k < 3)
    throw Error(ErrorCode::InvalidArgument, "graph_neighbors >= 1, 1 <= binding_k <= 8 and normal_k >= 3 required");
  if (!(depth_filter_sigma_px >= 0.0) || !(depth_filter_sigma_mm > 0.0))
    throw Error(ErrorCode::InvalidArgument, "depth_filter_sigma_px >= 0 and depth_filter_sigma_mm > 0 required");
  if (!(frame_skip_error_threshold > 0.0))
    throw Error(ErrorCode::InvalidArgument, "frame_skip_error_threshold must be > 0");
  weights.validate();
  visibility.validate();
  solver.validate();
  matcher.validate();
  ransac.validate();
  fusion_params().validate();
}

PipelineConfig parse_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::MalformedInput, std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw Error(ErrorCode::MalformedInput, "config must be a JSON object");
  PipelineConfig cfg;
  std::set<std::string> known;
  visit_fields(cfg, [&](const char* key, auto& field) {
    known.insert(key);
    if (auto it = j.find(key); it != j.end()) read_value(*it, key, field);
  });
  for (const auto& item : j.items())
    if (!known.count(item.key())) throw Error(ErrorCode::MalformedInput, "unknown config key '" + item.key() + "'");
  cfg.ransac.seed = cfg.seed;
  try {
    cfg.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::MalformedInput, e.what());
  }
  return cfg;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MalformedInput, "cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string dump_config(const PipelineConfig& cfg) {
  json j = json::object();
  PipelineConfig copy = cfg;
  visit_fields(copy, [&](const char* key, auto& field) { j[key] = field; });
  return j.dump(2);
}

}  // namespace edfusion
