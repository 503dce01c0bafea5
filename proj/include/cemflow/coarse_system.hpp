#pragma once

#include <Eigen/Core>
#include <vector>

#include "cemflow/aux_space.hpp"
#include "cemflow/offline_basis.hpp"

namespace cemflow {

struct MsSolution {
  Eigen::VectorXd velocity_coefficients;  // over the current velocity basis
  Eigen::VectorXd pressure_coefficients;  // aux modes, then extra pressure fields
  Eigen::VectorXd velocity;               // E, fine edge fluxes
  Eigen::VectorXd pressure;               // C, cellwise, zero mean
  int iteration = 0;
};

/// Galerkin blocks of the multiscale system over V_ms x Q_ms, grown in
/// place as basis fields are appended.
///
/// Q_ms starts as the aux space and may be extended by s-orthonormal cell
/// fields. A_c[k, l] = a(psi_k, psi_l), B_c[r, k] = b(psi_k, p_r),
/// f_c[r] = (f, p_r).
class CoarseSystem {
 public:
  /// `source` holds the cell integrals of f.
  CoarseSystem(const FineSystem& sys, const AuxBasis& aux, Eigen::VectorXd source);

  /// Appends fields to the velocity basis and fills the new rows and
  /// columns of A_c and B_c. Pairs with disjoint supports are skipped.
  void append(std::vector<BasisField> fields, int workers = 0);

  /// Offers candidate pressure fields. Each is made s-orthogonal to the
  /// current pressure space (two passes) and kept when the remainder has at
  /// least `accept` times its original s-norm. Returns the number kept.
  int extend_pressure(const std::vector<Eigen::VectorXd>& candidates, double accept = 1e-3);

  const std::vector<BasisField>& basis() const { return basis_; }
  /// Extra pressure fields beyond the aux modes, s-orthonormal, global cells.
  const std::vector<Eigen::VectorXd>& extra_pressure() const { return extra_; }
  const AuxBasis& aux() const { return aux_; }
  int velocity_dimension() const { return static_cast<int>(basis_.size()); }
  int pressure_dimension() const { return aux_.dimension() + static_cast<int>(extra_.size()); }
  const Eigen::MatrixXd& a() const { return a_; }
  const Eigen::MatrixXd& b() const { return b_; }
  const Eigen::VectorXd& f() const { return f_; }
  const Eigen::VectorXd& source() const { return source_; }

  /// Solves the bordered system with the mean-zero pressure constraint.
  /// A numerically singular system is solved in the minimum-norm sense when
  /// the result is consistent and its null directions leave the fine
  /// fields unchanged; otherwise NumericalError is thrown.
  MsSolution solve(int iteration = 0) const;

  /// Fine velocity sum_k c_k psi_k.
  Eigen::VectorXd expand_velocity(const Eigen::VectorXd& coefficients) const;
  /// Fine pressure over the aux modes followed by the extra fields.
  Eigen::VectorXd expand_pressure(const Eigen::VectorXd& coefficients) const;

 private:
  const FineSystem& sys_;
  const AuxBasis& aux_;
  Eigen::VectorXd source_;
  std::vector<BasisField> basis_;
  std::vector<Eigen::VectorXd> extra_;
  Eigen::MatrixXd a_;
  Eigen::MatrixXd b_;
  Eigen::VectorXd f_;
  Eigen::VectorXd mean_;  // g_r = int p_r
};

/// e_u = |u_ref - u_ms|_a / |u_ref|_a. Throws InvalidArgument when |u_ref|_a = 0.
double energy_error(const FineSystem& sys, const Eigen::VectorXd& u_ms, const Eigen::VectorXd& u_ref);

}  // namespace cemflow
