#pragma once

#include <Eigen/Core>
#include <array>
#include <functional>

#include "cemflow/field.hpp"
#include "cemflow/kernels.hpp"
#include "cemflow/mesh.hpp"

namespace cemflow {

/// Velocity mass matrix flavour. `exact` integrates the lowest-order edge
/// basis exactly (opposite-edge coupling); `lumped` is the two-point-flux
/// diagonal approximation.
enum class MassMode { exact, lumped };

MassMode parse_mass_mode(const std::string& name);
const char* to_string(MassMode mode);

/// Discrete operators of the lowest-order mixed method on the fine grid.
///
/// Velocity dofs are normal components on fine edges (global orientation),
/// pressure dofs are cell values. A and B are sized over all edges; boundary
/// edges carry no dof of V_0 and are simply never selected.
struct FineSystem {
  TwoLevelMesh mesh;
  MassMode mass = MassMode::exact;
  SparseMatrix a;                 // E x E, a(v, w) = int kappa^-1 v.w
  SparseMatrix b;                 // C x E, b(w, q) = int q div w
  Eigen::VectorXd s;              // C, s(p, q) = int kappa-tilde p q (diagonal)
  Eigen::VectorXd kappa_inverse;  // C
  Eigen::VectorXd kappa_tilde;    // C
  double cell_area = 0.0;
  double edge_length = 0.0;

  /// a-energy of v over a single cell.
  double cell_energy(int c, const Eigen::VectorXd& v) const;
};

FineSystem assemble(const TwoLevelMesh& mesh, const PermeabilityField& kappa,
                    const WeightField& kappa_tilde, MassMode mass = MassMode::exact);

struct FineSolution {
  Eigen::VectorXd velocity;  // E, zero on boundary edges
  Eigen::VectorXd pressure;  // C, zero mean
};

/// Solves the fine saddle problem with zero boundary flux. `source` holds
/// cell integrals of f. One pressure dof is pinned and the mean removed.
FineSolution solve_fine(const FineSystem& sys, const Eigen::VectorXd& source, int pinned_cell = 0);

double a_norm(const FineSystem& sys, const Eigen::VectorXd& v);
double s_norm(const FineSystem& sys, const Eigen::VectorXd& q);
double v_norm(const FineSystem& sys, const Eigen::VectorXd& v);
/// Norms restricted to the cells of a region.
double a_norm(const FineSystem& sys, const Eigen::VectorXd& v, const Region& region);
double s_norm(const FineSystem& sys, const Eigen::VectorXd& q, const Region& region);
double v_norm(const FineSystem& sys, const Eigen::VectorXd& v, const Region& region);

/// Cell-averaged velocity components (x, y).
std::array<Eigen::VectorXd, 2> cell_velocity(const TwoLevelMesh& mesh, const Eigen::VectorXd& v);

using ScalarFunction = std::function<double(double, double)>;
using VectorFunction = std::function<std::array<double, 2>(double, double)>;

/// Cell integrals of f by 3x3 Gauss quadrature.
Eigen::VectorXd cell_integrals(const TwoLevelMesh& mesh, const ScalarFunction& f);
/// (int kappa^-1 |u - u_h|^2)^(1/2) by 3x3 Gauss quadrature per cell, u_h the
/// lowest-order edge field with dofs v.
double velocity_error(const FineSystem& sys, const Eigen::VectorXd& v, const VectorFunction& u);

}  // namespace cemflow
