#include "edfusion/warp.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include <Eigen/LU>

#include "edfusion/error.hpp"
#include "edfusion/parallel.hpp"

namespace edfusion {

void EDGraph::reset_parameters() {
  for (auto& n : nodes) {
    n.A.setIdentity();
    n.t.setZero();
  }
}

VecX EDGraph::parameters() const {
  VecX x(num_parameters());
  for (std::size_t j = 0; j < nodes.size(); ++j) {
    const auto base = static_cast<Eigen::Index>(kParamsPerNode * j);
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) x[base + 3 * r + c] = nodes[j].A(r, c);
      x[base + 9 + r] = nodes[j].t[r];
    }
  }
  return x;
}

void EDGraph::set_parameters(const VecX& x) {
  if (static_cast<std::size_t>(x.size()) != num_parameters())
    throw Error(ErrorCode::InvalidArgument, "parameter vector size does not match graph");
  for (std::size_t j = 0; j < nodes.size(); ++j) {
    const auto base = static_cast<Eigen::Index>(kParamsPerNode * j);
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) nodes[j].A(r, c) = x[base + 3 * r + c];
      nodes[j].t[r] = x[base + 9 + r];
    }
  }
}

std::vector<Vec3> EDGraph::positions() const {
  std::vector<Vec3> out;
  out.reserve(nodes.size());
  for (const auto& n : nodes) out.push_back(n.g);
  return out;
}

void EDGraph::set_global_rigid(const RigidTransform& motion) {
  for (auto& n : nodes) {
    n.A = motion.rotation;
    n.t = motion.rotation * n.g + motion.translation - n.g;
  }
}

void EDGraph::apply_rigid_to_nodes(const RigidTransform& motion) {
  for (auto& n : nodes) n.g = motion(n.g);
}

EDGraph sample_nodes(const SurfelCloud& cloud, double spacing, int graph_neighbors) {
  const auto pts = cloud.positions();
  return sample_nodes(std::span<const Vec3>(pts), spacing, graph_neighbors);
}

EDGraph sample_nodes(std::span<const Vec3> points, double spacing, int graph_neighbors) {
  if (points.empty()) throw Error(ErrorCode::EmptyModel, "cannot sample deformation nodes from an empty model");
  if (!(spacing > 0.0)) throw Error(ErrorCode::InvalidArgument, "node spacing must be > 0");
  EDGraph graph;
  graph.node_spacing = spacing;
  for (const Vec3& g : voxel_downsample(points, spacing)) graph.nodes.push_back({g, Mat3::Identity(), Vec3::Zero()});

  const std::size_t m = graph.nodes.size();
  std::vector<std::set<int>> adj(m);
  const VoxelHash index(spacing, graph.positions());
  for (std::size_t j = 0; j < m; ++j) {
    for (const auto& nb : index.knn(graph.nodes[j].g, graph_neighbors + 1)) {
      if (nb.index == static_cast<int>(j)) continue;
      adj[j].insert(nb.index);
      adj[nb.index].insert(static_cast<int>(j));
    }
  }
  graph.neighbors.resize(m);
  graph.edge_weights.resize(m);
  for (std::size_t j = 0; j < m; ++j) {
    graph.neighbors[j].assign(adj[j].begin(), adj[j].end());
    graph.edge_weights[j].assign(graph.neighbors[j].size(), 1.0);
  }
  return graph;
}

namespace {

PointBinding bind_one(const VoxelHash& index, const Vec3& p, int k) {
  const auto nn = index.knn(p, k + 1);
  PointBinding b;
  b.count = k;
  const double d_max = nn[static_cast<std::size_t>(k)].distance;
  double sum = 0.0;
  for (int i = 0; i < k; ++i) {
    b.node_ids[i] = nn[i].index;
    b.weights[i] = d_max > 0.0 ? std::max(0.0, 1.0 - nn[i].distance / d_max) : 0.0;
    sum += b.weights[i];
  }
  for (int i = 0; i < k; ++i) b.weights[i] = sum > 0.0 ? b.weights[i] / sum : 1.0 / k;
  return b;
}

}  // namespace

std::vector<PointBinding> bind_points(const EDGraph& graph, std::span<const Vec3> points, int k) {
  if (k < 1 || k > kMaxBindingNodes) throw Error(ErrorCode::InvalidArgument, "binding k out of range");
  if (graph.size() < static_cast<std::size_t>(k) + 1) {
    std::ostringstream os;
    os << "binding " << k << " nodes per point needs at least " << k + 1 << " nodes, graph has " << graph.size();
    throw Error(ErrorCode::InsufficientNodes, os.str());
  }
  const VoxelHash index(graph.node_spacing, graph.positions());
  std::vector<PointBinding> out(points.size());
  parallel_for(0, points.size(), [&](std::size_t i) { out[i] = bind_one(index, points[i], k); });
  return out;
}

std::vector<PointBinding> bind_points_clamped(const EDGraph& graph, std::span<const Vec3> points, int k) {
  if (graph.size() == 0) throw Error(ErrorCode::EmptyModel, "cannot bind to an empty graph");
  if (graph.size() == 1) {
    PointBinding b;
    b.count = 1;
    b.node_ids[0] = 0;
    b.weights[0] = 1.0;
    return std::vector<PointBinding>(points.size(), b);
  }
  return bind_points(graph, points, std::min<int>(k, static_cast<int>(graph.size()) - 1));
}

// Evaluated as v + sum_j w_j [(A_j - I)(v - g_j) + t_j], which equals the
// weighted blend of node transforms when the weights sum to 1 and returns v
// bit-for-bit under identity parameters.
Vec3 warp_point(const EDGraph& graph, const PointBinding& binding, const Vec3& v) {
  Vec3 delta = Vec3::Zero();
  for (int i = 0; i < binding.count; ++i) {
    const EDNode& n = graph.nodes[binding.node_ids[i]];
    delta += binding.weights[i] * ((n.A - Mat3::Identity()) * (v - n.g) + n.t);
  }
  return v + delta;
}

Vec3 warp_normal(const EDGraph& graph, const PointBinding& binding, const Vec3& n, WarpDiagnostics* diag) {
  Vec3 delta = Vec3::Zero();
  for (int i = 0; i < binding.count; ++i) {
    const Mat3& A = graph.nodes[binding.node_ids[i]].A;
    if (std::abs(A.determinant()) < 1e-12) {
      delta += binding.weights[i] * (A * n - n);
      if (diag) ++diag->singular_normal_terms;
    } else {
      delta += binding.weights[i] * (A.inverse().transpose() * n - n);
    }
  }
  if (delta.isZero(0.0)) return n;
  const Vec3 out = n + delta;
  const double len = out.norm();
  return len > 0.0 ? Vec3(out / len) : n;
}

SurfelCloud apply_warp(const EDGraph& graph, const SurfelCloud& cloud, std::span<const PointBinding> bindings,
                       WarpDiagnostics* diag) {
  if (bindings.size() != cloud.size()) throw Error(ErrorCode::InvalidArgument, "bindings do not cover the cloud");
  SurfelCloud out = cloud;
  auto& dst = out.surfels();
  const auto& src = cloud.surfels();
  std::vector<std::size_t> singular(src.size(), 0);
  parallel_for(0, src.size(), [&](std::size_t i) {
    WarpDiagnostics local;
    dst[i].position = warp_point(graph, bindings[i], src[i].position);
    dst[i].normal = warp_normal(graph, bindings[i], src[i].normal, &local);
    singular[i] = local.singular_normal_terms;
  });
  if (diag)
    for (auto s : singular) diag->singular_normal_terms += s;
  return out;
}

}  // namespace edfusion
