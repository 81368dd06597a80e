#pragma once

#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "edfusion/image.hpp"
#include "edfusion/solver.hpp"
#include "edfusion/surfel_cloud.hpp"
#include "edfusion/warp.hpp"

namespace edfusion {

struct EnergyWeights {
  double rot = 1000.0;
  double reg = 10000.0;
  double data = 1.0;
  double corr = 1.0;

  void validate() const;
};

struct VisibilityParams {
  double eps_d = 10.0;     // mm
  double eps_n_deg = 60.0;  // max angle between model and observed normal
  bool use_distance_field = true;
  double df_cell = 2.0;  // mm

  void validate() const;
};

/// Orthonormality residuals of A's columns c1, c2, c3:
/// (c1.c2, c1.c3, c2.c3, c1.c1 - 1, c2.c2 - 1, c3.c3 - 1). Their squared sum is Rot(A).
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, 6, 1> rot_residuals(const Eigen::MatrixBase<Derived>& A) {
  using S = typename Derived::Scalar;
  const auto c1 = A.col(0), c2 = A.col(1), c3 = A.col(2);
  Eigen::Matrix<S, 6, 1> r;
  r << c1.dot(c2), c1.dot(c3), c2.dot(c3), c1.dot(c1) - S(1), c2.dot(c2) - S(1), c3.dot(c3) - S(1);
  return r;
}

inline double rot_energy(const Mat3& A) { return rot_residuals(A).squaredNorm(); }

/// sqrt(alpha_jk) [A_j (g_k - g_j) + g_j + t_j - (g_k + t_k)] for the edge j -> k.
Vec3 reg_residual(const EDGraph& graph, int j, int k, double alpha = 1.0);

/// Lower bound on the distance from a voxel to the nearest observed point,
/// used to reject far surfels before projecting them.
class DistanceField {
 public:
  DistanceField(const DepthFrame& frame, double cell, double max_distance);
  /// False only when every observed point is farther than max_distance from p.
  bool may_be_near(const Vec3& p) const;

 private:
  double cell_;
  double max_distance_;
  VoxelHash points_;
  mutable std::unordered_map<VoxelKey, bool, VoxelKeyHash> cache_;
};

/// Surfels compatible with the observation (sorted): the surfel projects into
/// the image onto valid depth, lies within eps_d of the back-projected pixel,
/// and its normal is within eps_n of the observed normal there.
std::vector<int> predict_visible(const SurfelCloud& cloud, const Observation& obs, const VisibilityParams& params);

/// Projective association of a warped point: the observed normal at the
/// nearest pixel and the observed point on the warped point's ray, with depth
/// interpolated bilinearly where the four surrounding depths are valid and
/// within kInterpolationSpread of each other (else the nearest pixel's point).
inline constexpr double kInterpolationSpread = 2.0;  // mm
struct Association {
  Vec3 target;
  Vec3 normal;
  PixelIndex pixel;
};
std::optional<Association> associate(const Observation& obs, const Vec3& warped);
/// The observed point and normal at one pixel, if both exist.
std::optional<Association> associate_at(const Observation& obs, PixelIndex pixel);

/// n^T (v~ - Gamma(P(v~))) with v~ the warped surfel: signed point-to-plane
/// distance, negative when the point lies behind the observed surface. Zero
/// when the association fails.
double data_residual(const EDGraph& graph, const PointBinding& binding, const Surfel& surfel, const Observation& obs);

/// warp(src) - dst.
Vec3 corr_residual(const EDGraph& graph, const PointBinding& binding, const Vec3& src, const Vec3& dst);

/// A correspondence already bound into the graph.
struct BoundCorrespondence {
  Vec3 src;
  Vec3 dst;
  PointBinding binding;
};

/// Stacked residuals and Jacobian of the weighted four-term energy at one
/// parameter vector. Residual rows are ordered rot (6 per node), reg (3 per
/// directed edge), data (1 per visible surfel), corr (3 per pair); every
/// block is scaled by sqrt(term weight) so energy = |residuals|^2.
struct EnergyState {
  VecX parameters;
  VecX residuals;
  SparseMatrix jacobian;
  TermEnergies terms;  // unweighted
  double energy = 0.0;
  std::size_t n_data = 0;
  std::size_t n_data_associated = 0;
  std::size_t n_corr = 0;
};

/// The warp-field least-squares problem. Data-term association is recomputed
/// at every evaluation; within one Jacobian the associated point and normal
/// are constants (Gauss-Newton linearization). A failed association yields a
/// zero residual row with zero Jacobian entries.
class WarpEnergy : public LeastSquaresProblem {
 public:
  WarpEnergy(EDGraph graph, const SurfelCloud& cloud, std::span<const PointBinding> bindings,
             std::vector<int> visible, const Observation& obs, std::vector<BoundCorrespondence> corrs,
             EnergyWeights weights);

  Eigen::Index num_parameters() const override { return static_cast<Eigen::Index>(graph_.num_parameters()); }
  void evaluate(const VecX& x, VecX& residuals, SparseMatrix* jacobian) const override;

  EnergyState assemble(const VecX& x) const;
  TermEnergies terms(const VecX& x) const;

  /// Holds the data association found at x for all later evaluations.
  void freeze_association(const VecX& x);
  void unfreeze_association() { frozen_.clear(); }

  const EDGraph& graph() const { return graph_; }
  std::size_t num_residuals() const;

  /// Mean and max |point-to-plane residual| over associated visible surfels.
  struct ResidualStats {
    double mean = 0.0;
    double max = 0.0;
    std::size_t count = 0;
  };
  ResidualStats data_residual_stats(const VecX& x) const;

 private:
  void run(const VecX& x, VecX& residuals, SparseMatrix* jacobian, TermEnergies* terms,
           std::size_t* n_associated) const;

  EDGraph graph_;
  std::vector<Vec3> points_;                // visible surfel positions
  std::vector<PointBinding> point_bindings_;  // parallel to points_
  const Observation* obs_;
  std::vector<BoundCorrespondence> corrs_;
  EnergyWeights weights_;
  std::vector<std::pair<int, int>> edges_;  // directed (j, k)
  std::vector<double> edge_alpha_;
  std::vector<std::optional<Association>> frozen_;
};

/// Builds the energy for the graph's current parameters. Throws
/// Error(NoConstraints) when there are no visible surfels and no correspondences.
EnergyState assemble(const EDGraph& graph, const SurfelCloud& cloud, std::span<const PointBinding> bindings,
                     const std::vector<int>& visible, const Observation& obs,
                     const std::vector<BoundCorrespondence>& corrs, const EnergyWeights& weights);

}  // namespace edfusion
