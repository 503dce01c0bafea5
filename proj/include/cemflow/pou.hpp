#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "cemflow/mesh.hpp"

namespace cemflow {

enum class PouMode {
  all_nodes,     // one hat per coarse node, sums to one everywhere
  interior_only,   // hats of the (T-1)^2 interior nodes only
  interior_folded  // (T-1)^2 functions: boundary hats folded into their interior neighbours
};

PouMode parse_pou_mode(const std::string& name);
const char* to_string(PouMode mode);

/// Diagonal scaling restricted to a support set: entry k multiplies dof index[k].
struct DiagonalScaling {
  std::vector<int> index;
  std::vector<double> weight;
};

/// Bilinear coarse hat functions chi_j.
///
/// Functions are numbered 0..size()-1; in all-nodes mode function j is
/// coarse node j, in the interior modes it is interior node j. The
/// all-nodes and folded families sum to one on the whole domain.
class PartitionOfUnity {
 public:
  PartitionOfUnity(const TwoLevelMesh& mesh, PouMode mode);

  const TwoLevelMesh& mesh() const { return mesh_; }
  PouMode mode() const { return mode_; }
  int size() const { return static_cast<int>(nodes_.size()); }
  /// Coarse node coordinates (a, b) of function j.
  std::array<int, 2> node(int j) const { return nodes_[static_cast<std::size_t>(j)]; }

  double value(int j, double x, double y) const;
  std::array<double, 2> gradient(int j, double x, double y) const;
  double value_at_fine_node(int j, int i, int k) const;
  double value_at_edge_midpoint(int j, int e) const;
  double value_at_cell_center(int j, int c) const;
  std::array<double, 2> gradient_at_cell(int j, int c) const;

  /// Blocks whose closure contains the node of function j (omega_j).
  std::shared_ptr<const Region> support(int j) const;
  /// chi_j at the midpoints of the interior edges of omega_j.
  DiagonalScaling edge_scaling(int j) const;
  /// chi_j at the centres of the cells of omega_j.
  DiagonalScaling cell_scaling(int j) const;

  /// Functions whose support contains cell c.
  std::vector<int> functions_on_cell(int c) const;

 private:
  std::array<int, 2> folded_1d(int a) const;
  double hat_1d(int a, double x) const;
  double hat_exact(int a, long coord2) const;
  double dhat_1d(int a, double x) const;

  TwoLevelMesh mesh_;
  PouMode mode_;
  std::vector<std::array<int, 2>> nodes_;
  std::vector<int> node_to_function_;  // coarse node -> function, -1 if none
};

}  // namespace cemflow
