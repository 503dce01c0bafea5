#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

#include "cemflow/fine_fem.hpp"

namespace cemflow {

/// Eigenpairs of one coarse element's pressure spectral problem.
struct LocalSpectrum {
  Eigen::VectorXd values;   // ascending
  Eigen::MatrixXd vectors;  // rows follow mesh.element_cells(k); s_i-orthonormal columns
  bool degenerate = false;  // the element has no interior fine edge (n = 1)
};

/// Smallest `count` eigenpairs of B_i A_i^-1 B_i^T p = lambda S_i p on V_0(K_i) x Q(K_i).
/// The velocity half of the spectral pair is eliminated and not returned.
LocalSpectrum local_spectral(const FineSystem& sys, int element, int count);

/// Auxiliary pressure space: J s-orthonormal modes per coarse element.
///
/// Global mode r = k * J + j is mode j of element k.
class AuxBasis {
 public:
  AuxBasis(TwoLevelMesh mesh, int modes_per_element, std::vector<LocalSpectrum> spectra);

  const TwoLevelMesh& mesh() const { return mesh_; }
  int modes_per_element() const { return modes_; }
  int dimension() const { return mesh_.num_elements() * modes_; }
  /// Lambda = min over elements of the first excluded eigenvalue;
  /// +inf when every element keeps its full local space.
  double spectral_gap() const { return gap_; }

  const Eigen::VectorXd& eigenvalues(int element) const { return values_[static_cast<std::size_t>(element)]; }
  /// First excluded eigenvalue of an element, +inf if none.
  double next_eigenvalue(int element) const { return next_[static_cast<std::size_t>(element)]; }
  bool degenerate(int element) const { return degenerate_[static_cast<std::size_t>(element)]; }
  /// Cell values of the element's modes (n^2 x J), rows as mesh.element_cells.
  const Eigen::MatrixXd& element_modes(int element) const { return modes_of_[static_cast<std::size_t>(element)]; }
  /// Global cell field of mode r.
  Eigen::VectorXd mode(int r) const;

  /// Coordinates s(q, p_r) of a global cell field.
  Eigen::VectorXd coefficients(const Eigen::VectorXd& q, const Eigen::VectorXd& s) const;
  /// Global cell field sum_r c_r p_r.
  Eigen::VectorXd expand(const Eigen::VectorXd& coefficients) const;
  /// s-orthogonal projection pi onto the auxiliary space.
  Eigen::VectorXd project(const Eigen::VectorXd& q, const Eigen::VectorXd& s) const;

 private:
  TwoLevelMesh mesh_;
  int modes_;
  std::vector<Eigen::VectorXd> values_;
  std::vector<double> next_;
  std::vector<char> degenerate_;
  std::vector<Eigen::MatrixXd> modes_of_;
  std::vector<std::vector<int>> cells_of_;
  double gap_;
};

/// Builds J modes on every element (J <= n^2; J = n^2 makes pi the identity).
AuxBasis build_aux(const FineSystem& sys, int modes_per_element, int workers = 0);

/// project_pi with the system's s-weights.
inline Eigen::VectorXd project_pi(const AuxBasis& aux, const FineSystem& sys, const Eigen::VectorXd& q) {
  return aux.project(q, sys.s);
}

/// CSV rows "element,lambda_1,...,lambda_J,lambda_next".
void write_spectrum_csv(const std::string& path, const AuxBasis& aux);

}  // namespace cemflow
