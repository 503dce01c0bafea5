#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

namespace cemflow {

/// Closed integer rectangle [x0, x1] x [y0, y1] of coarse elements.
struct BlockBox {
  int x0 = 0, y0 = 0, x1 = -1, y1 = -1;

  bool empty() const { return x1 < x0 || y1 < y0; }
  int width() const { return x1 - x0 + 1; }
  int height() const { return y1 - y0 + 1; }
  bool intersects(const BlockBox& o) const {
    return !(o.x0 > x1 || o.x1 < x0 || o.y0 > y1 || o.y1 < y0);
  }
};

/// The four edges of a fine cell, in the mesh's global edge numbering.
struct CellEdges {
  int left, right, bottom, top;
};

class Region;

/// Uniform two-level Cartesian partition of the unit square.
///
/// The coarse grid has T x T square blocks; every block is refined into
/// n x n fine cells, giving a (T n) x (T n) fine grid with h = 1/(T n).
///
/// Numbering:
///  - fine cell (ix, iy) -> iy * Tn + ix (row-major, rows are y ascending);
///  - fine edges are family-major: all horizontal edges first, then all
///    vertical ones. Horizontal edge (ix, j) lies on y = j h above column ix
///    and gets index j * Tn + ix; vertical edge (i, iy) lies on x = i h in
///    row iy and gets index H + iy * (Tn + 1) + i, with H = (Tn + 1) Tn;
///  - coarse element (ex, ey) -> ey * T + ex;
///  - coarse node (a, b) at (a H, b H), 0 <= a, b <= T -> b * (T + 1) + a;
///    interior node (a, b), 1 <= a, b <= T - 1 -> (b - 1) * (T - 1) + (a - 1).
///
/// Edge orientation is fixed globally: +y for horizontal edges and +x for
/// vertical ones.
class TwoLevelMesh {
 public:
  TwoLevelMesh(int coarse_per_side, int fine_per_block);

  int coarse_per_side() const { return coarse_; }
  int fine_per_block() const { return fine_; }
  int fine_per_side() const { return coarse_ * fine_; }
  double coarse_size() const { return 1.0 / coarse_; }
  double fine_size() const { return 1.0 / fine_per_side(); }

  int num_elements() const { return coarse_ * coarse_; }
  int num_interior_nodes() const { return (coarse_ - 1) * (coarse_ - 1); }
  int num_nodes() const { return (coarse_ + 1) * (coarse_ + 1); }
  int num_cells() const { return fine_per_side() * fine_per_side(); }
  int num_horizontal_edges() const { return (fine_per_side() + 1) * fine_per_side(); }
  int num_edges() const { return 2 * num_horizontal_edges(); }
  int num_interior_edges() const { return 2 * fine_per_side() * (fine_per_side() - 1); }

  int cell(int ix, int iy) const { return iy * fine_per_side() + ix; }
  std::array<int, 2> cell_coords(int c) const { return {c % fine_per_side(), c / fine_per_side()}; }
  std::array<double, 2> cell_center(int c) const;
  CellEdges cell_edges(int c) const;

  int horizontal_edge(int ix, int j) const { return j * fine_per_side() + ix; }
  int vertical_edge(int i, int iy) const {
    return num_horizontal_edges() + iy * (fine_per_side() + 1) + i;
  }
  bool is_horizontal(int e) const { return e < num_horizontal_edges(); }
  std::array<double, 2> edge_midpoint(int e) const;
  /// Cells on the two sides of an edge (below/left first); -1 on the boundary.
  std::array<int, 2> edge_cells(int e) const;
  bool is_boundary_edge(int e) const;

  int element(int ex, int ey) const { return ey * coarse_ + ex; }
  std::array<int, 2> element_coords(int k) const { return {k % coarse_, k / coarse_}; }
  int element_of_cell(int c) const;
  /// Fine cells of one coarse element, sorted.
  std::vector<int> element_cells(int k) const;

  int node(int a, int b) const { return b * (coarse_ + 1) + a; }
  std::array<int, 2> node_coords(int j) const { return {j % (coarse_ + 1), j / (coarse_ + 1)}; }
  bool is_interior_node(int a, int b) const {
    return a > 0 && b > 0 && a < coarse_ && b < coarse_;
  }
  int interior_node(int a, int b) const { return (b - 1) * (coarse_ - 1) + (a - 1); }
  std::array<int, 2> interior_node_coords(int i) const {
    return {i % (coarse_ - 1) + 1, i / (coarse_ - 1) + 1};
  }

  /// K_{i,l}: element i grown by `layers` rings of neighbouring blocks.
  std::shared_ptr<const Region> oversample_element(int element, int layers) const;
  /// omega_{i,l}: the blocks sharing interior node i, grown by `layers` rings.
  std::shared_ptr<const Region> node_neighborhood(int interior_node, int layers) const;
  /// Blocks whose closure contains coarse node (a, b), grown by `layers`
  /// rings. Accepts boundary nodes.
  std::shared_ptr<const Region> node_patch(int a, int b, int layers) const;
  std::shared_ptr<const Region> whole_domain() const;
  /// Region from an arbitrary element set; must be nonempty and connected.
  std::shared_ptr<const Region> make_region(std::vector<int> elements) const;

  bool operator==(const TwoLevelMesh&) const = default;

 private:
  std::shared_ptr<const Region> box_region(BlockBox box, int layers) const;

  int coarse_;
  int fine_;
};

/// Connected union of coarse elements together with its derived fine
/// index sets. Immutable.
class Region {
 public:
  const std::vector<int>& elements() const { return elements_; }
  /// Fine cells inside the region, sorted.
  const std::vector<int>& cells() const { return cells_; }
  /// Fine edges with both neighbouring cells inside the region, sorted.
  /// These carry V_0(region): every edge on the region boundary is absent.
  const std::vector<int>& interior_edges() const { return interior_edges_; }
  /// Fine edges with at least one neighbouring cell inside the region, sorted.
  const std::vector<int>& touching_edges() const { return touching_edges_; }
  /// Bounding box in coarse block coordinates.
  const BlockBox& bounds() const { return bounds_; }
  bool contains_element(int k) const;

  bool operator==(const Region& o) const { return elements_ == o.elements_; }

 private:
  friend class TwoLevelMesh;
  Region() = default;

  std::vector<int> elements_;
  std::vector<int> cells_;
  std::vector<int> interior_edges_;
  std::vector<int> touching_edges_;
  BlockBox bounds_;
};

/// Restricted degrees of freedom of a region.
struct RegionDofs {
  std::vector<int> velocity;  // interior fine edges
  std::vector<int> pressure;  // fine cells
};

RegionDofs restrict_dofs(const Region& region);

/// Maps global indices to positions in a sorted subset; -1 if absent.
class LocalIndex {
 public:
  LocalIndex(std::span<const int> subset, int global_size);
  int operator[](int global) const { return map_[static_cast<std::size_t>(global)]; }

 private:
  std::vector<int> map_;
};

}  // namespace cemflow
