#pragma once

#include <Eigen/Core>
#include <functional>
#include <memory>
#include <vector>

#include "cemflow/coarse_system.hpp"
#include "cemflow/pou.hpp"

namespace cemflow {

/// Localized residual functionals of one partition-of-unity function.
struct NodeResidual {
  std::shared_ptr<const Region> region;  // omega_i
  Eigen::VectorXd velocity;              // on region->interior_edges()
  Eigen::VectorXd pressure;              // on region->cells()
};

struct ResidualData {
  std::vector<NodeResidual> nodes;  // indexed like the pou functions
};

/// Velocity functional Bt p - A u and mass functional F - B u, scaled by
/// chi_i at edge midpoints and cell centres and restricted to omega_i.
ResidualData compute_residuals(const FineSystem& sys, const PartitionOfUnity& pou, const Eigen::VectorXd& u_ms,
                               const Eigen::VectorXd& p_ms, const Eigen::VectorXd& source);

struct DualNorms {
  Eigen::VectorXd velocity;  // |R_i|_{a*}
  Eigen::VectorXd pressure;  // |r_i|_{s*}
  Eigen::VectorXd eta_sq() const { return velocity.cwiseAbs2() + pressure.cwiseAbs2(); }
};

/// Riesz solves for the velocity dual norms. The velocity mass block of
/// each omega_i is factored once and reused across iterations.
class DualNormSolver {
 public:
  DualNormSolver(const FineSystem& sys, const PartitionOfUnity& pou, int workers = 0);
  DualNorms operator()(const ResidualData& residuals) const;
  /// A_{omega_i}^-1 rho_i, the maximiser of |R_i(v)| / |v|_{a(omega_i)}.
  Eigen::VectorXd riesz(int node, const Eigen::VectorXd& rho) const;

  /// Local pressure recovery. Replaces each rho_i by rho_i + D_chi B^T d_i,
  /// where d_i lives on the cells of omega_i, is s-orthogonal to the coarse
  /// pressure space restricted there, and minimises the dual norm. This
  /// removes the part of Bt p_ms - A u_ms caused by fine pressure detail the
  /// coarse space cannot carry. Local factors are rebuilt when the coarse
  /// pressure space grows.
  void recover_pressure(ResidualData& residuals, const CoarseSystem& coarse);

 private:
  struct Recovery;
  const FineSystem& sys_;
  const PartitionOfUnity& pou_;
  int workers_;
  std::vector<std::shared_ptr<const Region>> regions_;
  std::vector<SpdFactorization> mass_;
  std::vector<std::shared_ptr<Recovery>> recovery_;
  int recovery_pressure_dim_ = -1;
};

DualNorms dual_norms(const FineSystem& sys, const PartitionOfUnity& pou, const ResidualData& residuals,
                     int workers = 0);

/// Bulk marking: the smallest k such that the k largest eta^2 carry at least
/// a fraction theta of the total. Indices come back in descending eta order,
/// ties by ascending index. All-zero input gives an empty set.
std::vector<int> mark(const std::vector<double>& eta_sq, double theta);

/// beta_on for pou function `node` on omega_{node, layers}. The region is
/// solved through `cond` when given, otherwise factored directly.
BasisField online_basis(const FineSystem& sys, const AuxBasis& aux, const PartitionOfUnity& pou,
                        const NodeResidual& residual, int node, int layers,
                        const ElementCondensation* cond = nullptr);

struct OnlineOptions {
  double theta = 1.0;
  int layers = 2;
  double tol = 1e-12;  // stop once sum eta^2 <= tol * sum_c F_c^2 / S_c
  int max_iterations = 4;
  int max_dof = 0;  // 0: unlimited
  int workers = 0;
  // Offer kappa_tilde^-1 div(beta) of each new basis field to the pressure space.
  bool enrich_pressure = true;
  // Apply DualNormSolver::recover_pressure before estimating and enriching.
  bool recover_pressure = true;
  double pressure_accept = 1e-3;
  // Shared element condensation for the online regions; built by iterate() when null.
  const ElementCondensation* condensation = nullptr;
};

struct HistoryRow {
  int m = 0;
  int dof = 0;           // velocity basis size
  int pressure_dof = 0;  // coarse pressure space size
  double e_u = 0.0;  // fraction; NaN without a reference solution
  double eta_sq_sum = 0.0;
  int marked_count = 0;  // nodes marked in the step that produced this row
  double wall_seconds = 0.0;  // enrichment leading here plus this solve and its indicators
};

struct OnlineResult {
  std::vector<HistoryRow> history;
  std::vector<std::vector<int>> marked;  // marked[m]: nodes marked at iteration m
  std::vector<Eigen::VectorXd> indicators;  // indicators[m]: eta^2 per node at iteration m
  MsSolution solution;                   // final iterate
  DualNorms norms;                       // indicators of the final iterate
};

/// Solve, estimate, mark, enrich, repeat. `coarse` must already
/// hold the offline basis and is enriched in place. `u_ref` may be null.
OnlineResult iterate(CoarseSystem& coarse, const FineSystem& sys, const AuxBasis& aux,
                     const PartitionOfUnity& pou, const OnlineOptions& options, const Eigen::VectorXd* u_ref,
                     const std::function<void(const HistoryRow&)>& on_row = {});

}  // namespace cemflow
