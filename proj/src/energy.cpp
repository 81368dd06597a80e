#include "edfusion/energy.hpp"

#include <algorithm>
#include <cmath>

#include "edfusion/error.hpp"
#include "edfusion/parallel.hpp"

namespace edfusion {

void EnergyWeights::validate() const {
  if (!(rot >= 0.0) || !(reg >= 0.0) || !(data >= 0.0) || !(corr >= 0.0))
    throw Error(ErrorCode::InvalidArgument, "energy term weights must be >= 0");
}

void VisibilityParams::validate() const {
  if (!(eps_d > 0.0) || !(eps_n_deg > 0.0 && eps_n_deg < 90.0) || !(df_cell > 0.0))
    throw Error(ErrorCode::InvalidArgument, "visibility requires eps_d > 0, 0 < eps_n < 90, df_cell > 0");
}

Vec3 reg_residual(const EDGraph& graph, int j, int k, double alpha) {
  const EDNode& nj = graph.nodes[j];
  const EDNode& nk = graph.nodes[k];
  // A_j (g_k - g_j) + g_j + t_j - (g_k + t_k), written so identity parameters give exact zeros.
  return std::sqrt(alpha) * (Vec3((nj.A - Mat3::Identity()) * (nk.g - nj.g)) + nj.t - nk.t);
}

DistanceField::DistanceField(const DepthFrame& frame, double cell, double max_distance)
    : cell_(cell), max_distance_(max_distance), points_(cell) {
  std::vector<Vec3> pts;
  for (int y = 0; y < frame.depth.height(); ++y)
    for (int x = 0; x < frame.depth.width(); ++x)
      if (frame.valid(x, y)) pts.push_back(back_project(frame.intrinsics, PixelCoord{double(x), double(y)}, frame.depth(x, y)));
  points_.build(pts);
}

bool DistanceField::may_be_near(const Vec3& p) const {
  const VoxelKey key = voxel_key(p, cell_);
  if (auto it = cache_.find(key); it != cache_.end()) return it->second;
  const Vec3 center = (Vec3(double(key.x), double(key.y), double(key.z)) + Vec3::Constant(0.5)) * cell_;
  const double half_diag = 0.5 * std::sqrt(3.0) * cell_;
  bool near = false;
  const auto nn = points_.knn(center, 1);
  if (!nn.empty()) near = nn.front().distance - half_diag < max_distance_;
  cache_.emplace(key, near);
  return near;
}

std::optional<Association> associate_at(const Observation& obs, PixelIndex px) {
  const DepthFrame& f = obs.frame;
  if (!f.valid(px.x, px.y)) return std::nullopt;
  const auto& n = obs.normals(px.x, px.y);
  if (!n) return std::nullopt;
  return Association{back_project(f.intrinsics, PixelCoord{double(px.x), double(px.y)}, f.depth(px.x, px.y)), *n, px};
}

std::optional<Association> associate(const Observation& obs, const Vec3& warped) {
  const auto uv = project(obs.frame.intrinsics, warped);
  if (!uv) return std::nullopt;
  auto a = associate_at(obs, nearest_pixel(*uv));
  if (!a) return std::nullopt;
  // Depth read bilinearly at the projection when the four surrounding pixels
  // are valid and agree, so the target lies on the warped point's own ray.
  const DepthFrame& f = obs.frame;
  const int x0 = static_cast<int>(std::floor(uv->x)), y0 = static_cast<int>(std::floor(uv->y));
  if (f.valid(x0, y0) && f.valid(x0 + 1, y0) && f.valid(x0, y0 + 1) && f.valid(x0 + 1, y0 + 1)) {
    const double d00 = f.depth(x0, y0), d10 = f.depth(x0 + 1, y0);
    const double d01 = f.depth(x0, y0 + 1), d11 = f.depth(x0 + 1, y0 + 1);
    const double lo = std::min({d00, d10, d01, d11}), hi = std::max({d00, d10, d01, d11});
    if (hi - lo < kInterpolationSpread) {
      const double ax = uv->x - x0, ay = uv->y - y0;
      const double d = (1 - ay) * ((1 - ax) * d00 + ax * d10) + ay * ((1 - ax) * d01 + ax * d11);
      a->target = back_project(f.intrinsics, *uv, d);
    }
  }
  return a;
}

std::vector<int> predict_visible(const SurfelCloud& cloud, const Observation& obs, const VisibilityParams& params) {
  params.validate();
  std::optional<DistanceField> field;
  if (params.use_distance_field) field.emplace(obs.frame, params.df_cell, params.eps_d);
  const double cos_n = std::cos(params.eps_n_deg * EIGEN_PI / 180.0);
  std::vector<int> visible;
  const auto& surfels = cloud.surfels();
  for (std::size_t i = 0; i < surfels.size(); ++i) {
    const Surfel& s = surfels[i];
    if (field && !field->may_be_near(s.position)) continue;
    const auto a = associate(obs, s.position);
    if (!a) continue;
    if (!((s.position - a->target).norm() < params.eps_d)) continue;
    if (!(s.normal.dot(a->normal) > cos_n)) continue;
    visible.push_back(static_cast<int>(i));
  }
  return visible;
}

double data_residual(const EDGraph& graph, const PointBinding& binding, const Surfel& surfel, const Observation& obs) {
  const Vec3 warped = warp_point(graph, binding, surfel.position);
  const auto a = associate(obs, warped);
  if (!a) return 0.0;
  return a->normal.dot(warped - a->target);
}

Vec3 corr_residual(const EDGraph& graph, const PointBinding& binding, const Vec3& src, const Vec3& dst) {
  return warp_point(graph, binding, src) - dst;
}

WarpEnergy::WarpEnergy(EDGraph graph, const SurfelCloud& cloud, std::span<const PointBinding> bindings,
                       std::vector<int> visible, const Observation& obs, std::vector<BoundCorrespondence> corrs,
                       EnergyWeights weights)
    : graph_(std::move(graph)), obs_(&obs), corrs_(std::move(corrs)), weights_(weights) {
  weights_.validate();
  if (visible.empty() && corrs_.empty())
    throw Error(ErrorCode::NoConstraints, "no visible surfels and no correspondences constrain the warp");
  if (bindings.size() != cloud.size()) throw Error(ErrorCode::InvalidArgument, "bindings do not cover the cloud");
  points_.reserve(visible.size());
  point_bindings_.reserve(visible.size());
  for (int i : visible) {
    points_.push_back(cloud[static_cast<std::size_t>(i)].position);
    point_bindings_.push_back(bindings[static_cast<std::size_t>(i)]);
  }
  for (std::size_t j = 0; j < graph_.size(); ++j)
    for (std::size_t e = 0; e < graph_.neighbors[j].size(); ++e) {
      edges_.emplace_back(static_cast<int>(j), graph_.neighbors[j][e]);
      edge_alpha_.push_back(graph_.edge_weights[j][e]);
    }
}

std::size_t WarpEnergy::num_residuals() const {
  std::size_t n = 0;
  if (weights_.rot > 0.0) n += 6 * graph_.size();
  if (weights_.reg > 0.0) n += 3 * edges_.size();
  if (weights_.data > 0.0) n += points_.size();
  if (weights_.corr > 0.0) n += 3 * corrs_.size();
  return n;
}

void WarpEnergy::freeze_association(const VecX& x) {
  EDGraph g = graph_;
  g.set_parameters(x);
  frozen_.assign(points_.size(), std::nullopt);
  for (std::size_t i = 0; i < points_.size(); ++i) {
    frozen_[i] = associate(*obs_, warp_point(g, point_bindings_[i], points_[i]));
  }
}

void WarpEnergy::run(const VecX& x, VecX& residuals, SparseMatrix* jacobian, TermEnergies* terms,
                     std::size_t* n_associated) const {
  EDGraph g = graph_;
  g.set_parameters(x);
  const double sw_rot = std::sqrt(weights_.rot), sw_reg = std::sqrt(weights_.reg);
  const double sw_data = std::sqrt(weights_.data), sw_corr = std::sqrt(weights_.corr);
  const bool use_rot = weights_.rot > 0.0, use_reg = weights_.reg > 0.0;
  const bool use_data = weights_.data > 0.0, use_corr = weights_.corr > 0.0;

  residuals.resize(static_cast<Eigen::Index>(num_residuals()));
  std::vector<Eigen::Triplet<double>> trip;
  if (jacobian) trip.reserve(54 * g.size() + 15 * edges_.size() + 48 * points_.size() + 60 * corrs_.size());
  TermEnergies e;
  Eigen::Index row = 0;
  auto col = [](int node, int offset) { return kParamsPerNode * node + offset; };

  for (std::size_t j = 0; j < g.size(); ++j) {
    const Mat3& A = g.nodes[j].A;
    const auto r = rot_residuals(A);
    e.rot += r.squaredNorm();
    if (!use_rot) continue;
    residuals.segment<6>(row) = sw_rot * r;
    if (jacobian) {
      const int n = static_cast<int>(j);
      for (int k = 0; k < 3; ++k) {
        trip.emplace_back(row + 0, col(n, 3 * k + 0), sw_rot * A(k, 1));
        trip.emplace_back(row + 0, col(n, 3 * k + 1), sw_rot * A(k, 0));
        trip.emplace_back(row + 1, col(n, 3 * k + 0), sw_rot * A(k, 2));
        trip.emplace_back(row + 1, col(n, 3 * k + 2), sw_rot * A(k, 0));
        trip.emplace_back(row + 2, col(n, 3 * k + 1), sw_rot * A(k, 2));
        trip.emplace_back(row + 2, col(n, 3 * k + 2), sw_rot * A(k, 1));
        trip.emplace_back(row + 3, col(n, 3 * k + 0), sw_rot * 2.0 * A(k, 0));
        trip.emplace_back(row + 4, col(n, 3 * k + 1), sw_rot * 2.0 * A(k, 1));
        trip.emplace_back(row + 5, col(n, 3 * k + 2), sw_rot * 2.0 * A(k, 2));
      }
    }
    row += 6;
  }

  for (std::size_t e_idx = 0; e_idx < edges_.size(); ++e_idx) {
    const auto [j, k] = edges_[e_idx];
    const double alpha = edge_alpha_[e_idx];
    const Vec3 r = reg_residual(g, j, k, alpha);
    e.reg += r.squaredNorm();
    if (!use_reg) continue;
    residuals.segment<3>(row) = sw_reg * r;
    if (jacobian) {
      const double sa = sw_reg * std::sqrt(alpha);
      const Vec3 d = g.nodes[k].g - g.nodes[j].g;
      for (int rr = 0; rr < 3; ++rr) {
        for (int c = 0; c < 3; ++c) trip.emplace_back(row + rr, col(j, 3 * rr + c), sa * d[c]);
        trip.emplace_back(row + rr, col(j, 9 + rr), sa);
        trip.emplace_back(row + rr, col(k, 9 + rr), -sa);
      }
    }
    row += 3;
  }

  // Data rows are computed in parallel into per-point slots, then emitted in order.
  const std::size_t np = points_.size();
  std::vector<double> data_r(np, 0.0);
  std::vector<Vec3> data_n(np, Vec3::Zero());
  std::vector<char> data_ok(np, 0);
  parallel_for(0, np, [&](std::size_t i) {
    const Vec3 warped = warp_point(g, point_bindings_[i], points_[i]);
    std::optional<Association> a;
    if (!frozen_.empty()) {
      a = frozen_[i];
    } else {
      a = associate(*obs_, warped);
    }
    if (!a) return;
    data_r[i] = a->normal.dot(warped - a->target);
    data_n[i] = a->normal;
    data_ok[i] = 1;
  });
  std::size_t associated = 0;
  for (std::size_t i = 0; i < np; ++i) {
    e.data += data_r[i] * data_r[i];
    associated += static_cast<std::size_t>(data_ok[i]);
    if (!use_data) continue;
    residuals[row] = sw_data * data_r[i];
    if (jacobian) {
      const PointBinding& b = point_bindings_[i];
      for (int m = 0; m < b.count; ++m) {
        const int node = b.node_ids[m];
        const double w = sw_data * b.weights[m];
        const Vec3 d = points_[i] - g.nodes[node].g;
        for (int rr = 0; rr < 3; ++rr) {
          for (int c = 0; c < 3; ++c) trip.emplace_back(row, col(node, 3 * rr + c), w * data_n[i][rr] * d[c]);
          trip.emplace_back(row, col(node, 9 + rr), w * data_n[i][rr]);
        }
      }
    }
    ++row;
  }

  for (const auto& c : corrs_) {
    const Vec3 r = corr_residual(g, c.binding, c.src, c.dst);
    e.corr += r.squaredNorm();
    if (!use_corr) continue;
    residuals.segment<3>(row) = sw_corr * r;
    if (jacobian) {
      for (int m = 0; m < c.binding.count; ++m) {
        const int node = c.binding.node_ids[m];
        const double w = sw_corr * c.binding.weights[m];
        const Vec3 d = c.src - g.nodes[node].g;
        for (int rr = 0; rr < 3; ++rr) {
          for (int cc = 0; cc < 3; ++cc) trip.emplace_back(row + rr, col(node, 3 * rr + cc), w * d[cc]);
          trip.emplace_back(row + rr, col(node, 9 + rr), w);
        }
      }
    }
    row += 3;
  }

  if (jacobian) {
    jacobian->resize(residuals.size(), num_parameters());
    jacobian->setFromTriplets(trip.begin(), trip.end());
  }
  if (terms) *terms = e;
  if (n_associated) *n_associated = associated;
}

void WarpEnergy::evaluate(const VecX& x, VecX& residuals, SparseMatrix* jacobian) const {
  run(x, residuals, jacobian, nullptr, nullptr);
}

EnergyState WarpEnergy::assemble(const VecX& x) const {
  EnergyState s;
  s.parameters = x;
  run(x, s.residuals, &s.jacobian, &s.terms, &s.n_data_associated);
  s.energy = s.residuals.squaredNorm();
  s.n_data = points_.size();
  s.n_corr = corrs_.size();
  return s;
}

TermEnergies WarpEnergy::terms(const VecX& x) const {
  VecX r;
  TermEnergies t;
  run(x, r, nullptr, &t, nullptr);
  return t;
}

WarpEnergy::ResidualStats WarpEnergy::data_residual_stats(const VecX& x) const {
  EDGraph g = graph_;
  g.set_parameters(x);
  ResidualStats s;
  double sum = 0.0;
  for (std::size_t i = 0; i < points_.size(); ++i) {
    const Vec3 warped = warp_point(g, point_bindings_[i], points_[i]);
    const auto a = associate(*obs_, warped);
    if (!a) continue;
    const double r = std::abs(a->normal.dot(warped - a->target));
    sum += r;
    s.max = std::max(s.max, r);
    ++s.count;
  }
  if (s.count > 0) s.mean = sum / static_cast<double>(s.count);
  return s;
}

EnergyState assemble(const EDGraph& graph, const SurfelCloud& cloud, std::span<const PointBinding> bindings,
                     const std::vector<int>& visible, const Observation& obs,
                     const std::vector<BoundCorrespondence>& corrs, const EnergyWeights& weights) {
  const WarpEnergy energy(graph, cloud, bindings, visible, obs, corrs, weights);
  return energy.assemble(graph.parameters());
}

}  // namespace edfusion
