#pragma once

#include <Eigen/Core>
#include <Eigen/SparseCore>
#include <memory>
#include <optional>
#include <span>

#include "cemflow/error.hpp"

namespace cemflow {

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::ColMajor, int>;

/// Block operator [A, -B^T; B, P] with P = P_sparse + W W^T.
///
/// The low-rank part is how the aux-projection constraint enters: storing
/// W = S Phi instead of the dense product keeps the operator sparse.
struct SaddleOperator {
  SparseMatrix a;         // nv x nv, symmetric positive definite
  SparseMatrix b;         // np x nv
  SparseMatrix p_sparse;  // np x np, may be empty (treated as zero)
  SparseMatrix p_factor;  // np x k, may be empty
  // When set, p_factor imposes W^T q = 0 through multipliers instead of
  // adding W W^T; solutions then satisfy the velocity rows and the pressure
  // rows up to a component in range(W).
  bool constrained = false;

  Eigen::Index velocity_size() const { return a.rows(); }
  Eigen::Index pressure_size() const { return b.rows(); }
  /// y = op * x for x = (u, q). The W term is omitted when constrained.
  Eigen::VectorXd apply(const Eigen::VectorXd& x) const;
};

/// Thrown when a factorization meets a singular operator.
class SingularSystemError : public NumericalError {
 public:
  SingularSystemError(const std::string& what, Eigen::VectorXd witness, int nullity)
      : NumericalError(what), witness_(std::move(witness)), nullity_(nullity) {}
  /// Unit vector x with |op x| small relative to |op|.
  const Eigen::VectorXd& witness() const { return witness_; }
  /// Detected nullity; -1 when only a lower bound of 1 is known.
  int nullity() const { return nullity_; }

 private:
  Eigen::VectorXd witness_;
  int nullity_;
};

/// Sparse LU of a saddle operator, factored once and applied to many
/// right-hand sides. solve() is const; concurrent solves on one handle are
/// not supported.
class SaddleFactorization {
 public:
  explicit SaddleFactorization(const SaddleOperator& op);
  ~SaddleFactorization();
  SaddleFactorization(SaddleFactorization&&) noexcept;
  SaddleFactorization& operator=(SaddleFactorization&&) noexcept;

  struct Solution {
    Eigen::VectorXd velocity;
    Eigen::VectorXd pressure;
  };

  /// Solves op (u, q) = (f_u, f_q), refining until the relative residual is
  /// at most 1e-10 or refinement stalls.
  Solution solve(const Eigen::VectorXd& rhs_velocity, const Eigen::VectorXd& rhs_pressure) const;
  /// Relative residual |op x - rhs| / |rhs| of the last solve.
  double last_residual() const { return last_residual_; }

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  mutable double last_residual_ = 0.0;
};

/// Sparse Cholesky of an SPD matrix.
class SpdFactorization {
 public:
  explicit SpdFactorization(const SparseMatrix& a);
  ~SpdFactorization();
  SpdFactorization(SpdFactorization&&) noexcept;
  SpdFactorization& operator=(SpdFactorization&&) noexcept;

  Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const;
  Eigen::Index size() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

struct EigenPairs {
  Eigen::VectorXd values;   // ascending
  Eigen::MatrixXd vectors;  // columns, S-orthonormal
};

/// Smallest `count` eigenpairs of M x = lambda S x with M symmetric positive
/// semidefinite and S = diag(s) positive. Rejects M whose asymmetry exceeds
/// 1e-12 relative to its largest entry.
EigenPairs gen_eig_sym(const Eigen::MatrixXd& m, const Eigen::VectorXd& s, Eigen::Index count);

/// Largest |M_ij - M_ji| relative to max |M_ij|.
double relative_asymmetry(const Eigen::MatrixXd& m);
double relative_asymmetry(const SparseMatrix& m);

/// Submatrix m(rows, cols) for sorted index lists.
SparseMatrix extract(const SparseMatrix& m, std::span<const int> rows, std::span<const int> cols);

}  // namespace cemflow
