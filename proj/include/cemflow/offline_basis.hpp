#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "cemflow/aux_space.hpp"
#include "cemflow/fine_fem.hpp"
#include "cemflow/kernels.hpp"

namespace cemflow {

/// A velocity basis field supported on a region, with its companion
/// pressure. Values are aligned with region->interior_edges() and
/// region->cells(); the field is zero elsewhere.
struct BasisField {
  enum class Origin : std::uint8_t { offline, online };

  std::shared_ptr<const Region> region;
  Eigen::VectorXd velocity;
  Eigen::VectorXd pressure;
  Origin origin = Origin::offline;
  int anchor = 0;  // coarse element (offline) or node function (online)
  int mode = 0;    // aux mode index within its element (offline only)
  int layers = 0;

  Eigen::VectorXd global_velocity(const TwoLevelMesh& mesh) const;
  Eigen::VectorXd global_pressure(const TwoLevelMesh& mesh) const;
};

/// [A_r, -B_r^T; B_r, P_r] on a region's (interior edges, cells), with
/// P_r = Pi_r^T S_r Pi_r over the aux modes of the elements in the region.
SaddleOperator assemble_constrained_saddle(const FineSystem& sys, const AuxBasis& aux, const Region& region);

/// Eliminations of the element interiors shared by every region solve.
///
/// For each coarse element the unknowns strictly inside it (inner fine
/// edges, cells and the element's aux multipliers) are factored once, and
/// their coupling to the element's boundary edges is stored densely. A
/// region solve then reduces to a dense system on the fine edges along the
/// element boundaries inside the region. With a single fine cell per block
/// there are no interiors and regions use the direct factorization. Safe to
/// share between threads.
class ElementCondensation {
 public:
  ElementCondensation(const FineSystem& sys, const AuxBasis& aux, int workers = 0);
  ~ElementCondensation();
  ElementCondensation(const ElementCondensation&) = delete;
  ElementCondensation& operator=(const ElementCondensation&) = delete;

  const FineSystem& system() const { return sys_; }
  const AuxBasis& aux() const { return aux_; }

  struct Element;

 private:
  friend class RegionSolver;
  const FineSystem& sys_;
  const AuxBasis& aux_;
  std::vector<std::unique_ptr<Element>> elements_;
};

/// Factored constrained operator of one region. Built either directly on
/// the region operator or on the element condensation; both solve the same
/// system and refine against the assembled operator.
class RegionSolver {
 public:
  RegionSolver(const FineSystem& sys, const AuxBasis& aux, std::shared_ptr<const Region> region);
  /// Falls back to the direct factorization when the condensed system would
  /// be too large to treat densely.
  RegionSolver(const ElementCondensation& cond, std::shared_ptr<const Region> region);
  ~RegionSolver();

  const std::shared_ptr<const Region>& region() const { return region_; }
  const SaddleOperator& op() const { return op_; }
  bool condensed() const { return interface_ != nullptr; }
  SaddleFactorization::Solution solve(const Eigen::VectorXd& rhs_velocity,
                                      const Eigen::VectorXd& rhs_pressure) const;

 private:
  struct Interface;
  SaddleFactorization::Solution condensed_solve(const Eigen::VectorXd& rhs_velocity,
                                                const Eigen::VectorXd& rhs_pressure) const;

  std::shared_ptr<const Region> region_;
  SaddleOperator op_;
  std::unique_ptr<SaddleFactorization> lu_;
  std::unique_ptr<Interface> interface_;
};

/// Region-local right-hand side s(p_j^(i), q) for every cell q of the region.
Eigen::VectorXd mode_load(const FineSystem& sys, const AuxBasis& aux, const Region& region, int element, int mode);

/// psi_{j,ms}^{(i)} on K_{i,layers}, solved as in build_offline_space.
BasisField solve_cem_basis(const FineSystem& sys, const AuxBasis& aux, int element, int mode, int layers,
                           const ElementCondensation* cond = nullptr);

/// All N * J offline fields, ordered by aux index r = element * J + mode.
/// Each region is factored once and reused for its J loads. Regions are
/// solved through `cond` when given, otherwise through a condensation built
/// for the call.
std::vector<BasisField> build_offline_space(const FineSystem& sys, const AuxBasis& aux, int layers,
                                            int workers = 0, const ElementCondensation* cond = nullptr);

/// Global map G(p_aux) = (psi, r) on the whole domain for aux coordinates c.
SaddleFactorization::Solution global_map(const FineSystem& sys, const AuxBasis& aux, const Eigen::VectorXd& c);

/// Relative residual |op (u, q) - rhs| / |rhs| for a field on its region,
/// with the operator assembled afresh.
double constrained_residual(const FineSystem& sys, const AuxBasis& aux, const BasisField& field,
                            const Eigen::VectorXd& rhs_velocity, const Eigen::VectorXd& rhs_pressure);

/// Identity of the inputs a stored basis was built from.
struct BasisHeader {
  int coarse = 0, fine = 0, modes = 0, layers = 0;
  std::uint64_t field_checksum = 0;
  bool operator==(const BasisHeader&) const = default;
};

std::uint64_t field_checksum(const FineSystem& sys);
void save_basis(const std::string& path, const BasisHeader& header, const std::vector<BasisField>& fields);
/// Throws ParseError when the file is not a basis dump or its header differs
/// from `expected`.
std::vector<BasisField> load_basis(const std::string& path, const TwoLevelMesh& mesh, const BasisHeader& expected);

}  // namespace cemflow
