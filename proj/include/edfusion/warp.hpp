#pragma once

#include <array>
#include <span>
#include <vector>

#include "edfusion/surfel_cloud.hpp"
#include "edfusion/types.hpp"

namespace edfusion {

/// Embedded-deformation node: position g, affine A and translation t.
struct EDNode {
  Vec3 g = Vec3::Zero();
  Mat3 A = Mat3::Identity();
  Vec3 t = Vec3::Zero();
};

inline constexpr int kParamsPerNode = 12;

/// Sparse deformation graph. Node parameters flatten to a 12m vector with
/// A stored row-major followed by t: [A_1(0,0) A_1(0,1) ... A_1(2,2) t_1 ...].
struct EDGraph {
  std::vector<EDNode> nodes;
  std::vector<std::vector<int>> neighbors;        // symmetric, ascending
  std::vector<std::vector<double>> edge_weights;  // alpha_jk, parallel to neighbors
  double node_spacing = 4.0;

  std::size_t size() const { return nodes.size(); }
  std::size_t num_parameters() const { return nodes.size() * kParamsPerNode; }

  void reset_parameters();
  VecX parameters() const;
  void set_parameters(const VecX& x);
  std::vector<Vec3> positions() const;

  /// Sets every node so the field is the rigid motion p -> R p + T.
  void set_global_rigid(const RigidTransform& motion);
  void apply_rigid_to_nodes(const RigidTransform& motion);
};

inline constexpr int kMaxBindingNodes = 8;

/// The k nearest nodes of a point with their normalized weights.
struct PointBinding {
  std::array<int, kMaxBindingNodes> node_ids{};
  std::array<double, kMaxBindingNodes> weights{};
  int count = 0;
};

/// A_j (p - g_j) + g_j + t_j for one node.
template <typename Derived>
Vec3 node_transform(const EDNode& n, const Eigen::MatrixBase<Derived>& p) {
  return n.A * (p - n.g) + n.g + n.t;
}

/// Nodes are the voxel centroids of the cloud at `spacing`, linked to their
/// `graph_neighbors` nearest nodes (symmetrized, alpha = 1), parameters at
/// identity. Throws Error(EmptyModel) on an empty cloud.
EDGraph sample_nodes(const SurfelCloud& cloud, double spacing, int graph_neighbors = 6);
EDGraph sample_nodes(std::span<const Vec3> points, double spacing, int graph_neighbors = 6);

/// Binds each point to its k nearest nodes with weights 1 - |v - g_j| / d_max,
/// d_max the distance to the (k+1)-th nearest node, normalized to sum 1. When
/// all k raw weights vanish (k-th and (k+1)-th nodes equidistant) the weights
/// fall back to uniform. Throws Error(InsufficientNodes) when the graph has
/// fewer than k + 1 nodes.
std::vector<PointBinding> bind_points(const EDGraph& graph, std::span<const Vec3> points, int k = 4);

/// Like bind_points, but shrinks k to fit small graphs (a single node binds
/// with weight 1).
std::vector<PointBinding> bind_points_clamped(const EDGraph& graph, std::span<const Vec3> points, int k = 4);

Vec3 warp_point(const EDGraph& graph, const PointBinding& binding, const Vec3& v);

struct WarpDiagnostics {
  std::size_t singular_normal_terms = 0;
};

/// normalize(sum_j w_j A_j^{-T} n). A node with |det A_j| < 1e-12 contributes
/// A_j n instead and is counted in `diag`.
Vec3 warp_normal(const EDGraph& graph, const PointBinding& binding, const Vec3& n, WarpDiagnostics* diag = nullptr);

/// Warps every surfel position and normal; colors and weights carry over.
SurfelCloud apply_warp(const EDGraph& graph, const SurfelCloud& cloud, std::span<const PointBinding> bindings,
                       WarpDiagnostics* diag = nullptr);

}  // namespace edfusion
