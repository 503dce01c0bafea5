#include "cemflow/mesh.hpp"

#include <algorithm>
#include <queue>
#include <string>

#include "cemflow/error.hpp"

namespace cemflow {

TwoLevelMesh::TwoLevelMesh(int coarse_per_side, int fine_per_block)
    : coarse_(coarse_per_side), fine_(fine_per_block) {
  if (coarse_per_side < 1 || fine_per_block < 1) {
    throw InvalidArgument("mesh: need T >= 1 and n >= 1, got T=" + std::to_string(coarse_per_side) +
                          " n=" + std::to_string(fine_per_block));
  }
}

std::array<double, 2> TwoLevelMesh::cell_center(int c) const {
  const auto [ix, iy] = cell_coords(c);
  const double h = fine_size();
  return {(ix + 0.5) * h, (iy + 0.5) * h};
}

CellEdges TwoLevelMesh::cell_edges(int c) const {
  const auto [ix, iy] = cell_coords(c);
  return {vertical_edge(ix, iy), vertical_edge(ix + 1, iy), horizontal_edge(ix, iy),
          horizontal_edge(ix, iy + 1)};
}

std::array<double, 2> TwoLevelMesh::edge_midpoint(int e) const {
  const int nf = fine_per_side();
  const double h = fine_size();
  if (is_horizontal(e)) {
    const int ix = e % nf, j = e / nf;
    return {(ix + 0.5) * h, j * h};
  }
  const int r = e - num_horizontal_edges();
  const int i = r % (nf + 1), iy = r / (nf + 1);
  return {i * h, (iy + 0.5) * h};
}

std::array<int, 2> TwoLevelMesh::edge_cells(int e) const {
  const int nf = fine_per_side();
  if (is_horizontal(e)) {
    const int ix = e % nf, j = e / nf;
    return {j > 0 ? cell(ix, j - 1) : -1, j < nf ? cell(ix, j) : -1};
  }
  const int r = e - num_horizontal_edges();
  const int i = r % (nf + 1), iy = r / (nf + 1);
  return {i > 0 ? cell(i - 1, iy) : -1, i < nf ? cell(i, iy) : -1};
}

bool TwoLevelMesh::is_boundary_edge(int e) const {
  const auto cells = edge_cells(e);
  return cells[0] < 0 || cells[1] < 0;
}

int TwoLevelMesh::element_of_cell(int c) const {
  const auto [ix, iy] = cell_coords(c);
  return element(ix / fine_, iy / fine_);
}

std::vector<int> TwoLevelMesh::element_cells(int k) const {
  const auto [ex, ey] = element_coords(k);
  std::vector<int> cells;
  cells.reserve(static_cast<std::size_t>(fine_ * fine_));
  for (int iy = ey * fine_; iy < (ey + 1) * fine_; ++iy)
    for (int ix = ex * fine_; ix < (ex + 1) * fine_; ++ix) cells.push_back(cell(ix, iy));
  return cells;
}

std::shared_ptr<const Region> TwoLevelMesh::box_region(BlockBox box, int layers) const {
  if (layers < 0) throw InvalidArgument("region: negative layer count");
  box.x0 = std::max(0, box.x0 - layers);
  box.y0 = std::max(0, box.y0 - layers);
  box.x1 = std::min(coarse_ - 1, box.x1 + layers);
  box.y1 = std::min(coarse_ - 1, box.y1 + layers);
  std::vector<int> elements;
  for (int ey = box.y0; ey <= box.y1; ++ey)
    for (int ex = box.x0; ex <= box.x1; ++ex) elements.push_back(element(ex, ey));
  return make_region(std::move(elements));
}

std::shared_ptr<const Region> TwoLevelMesh::oversample_element(int k, int layers) const {
  if (k < 0 || k >= num_elements())
    throw InvalidArgument("oversample_element: element index " + std::to_string(k) + " out of range");
  const auto [ex, ey] = element_coords(k);
  return box_region({ex, ey, ex, ey}, layers);
}

std::shared_ptr<const Region> TwoLevelMesh::node_neighborhood(int i, int layers) const {
  if (i < 0 || i >= num_interior_nodes())
    throw InvalidArgument("node_neighborhood: " + std::to_string(i) +
                          " is not an interior coarse node index");
  const auto [a, b] = interior_node_coords(i);
  return node_patch(a, b, layers);
}

std::shared_ptr<const Region> TwoLevelMesh::node_patch(int a, int b, int layers) const {
  if (a < 0 || b < 0 || a > coarse_ || b > coarse_)
    throw InvalidArgument("node_patch: node outside the mesh");
  BlockBox box{std::max(0, a - 1), std::max(0, b - 1), std::min(coarse_ - 1, a),
               std::min(coarse_ - 1, b)};
  return box_region(box, layers);
}

std::shared_ptr<const Region> TwoLevelMesh::whole_domain() const {
  return box_region({0, 0, coarse_ - 1, coarse_ - 1}, 0);
}

std::shared_ptr<const Region> TwoLevelMesh::make_region(std::vector<int> elements) const {
  std::sort(elements.begin(), elements.end());
  elements.erase(std::unique(elements.begin(), elements.end()), elements.end());
  if (elements.empty()) throw InvalidArgument("region: empty element set");
  if (elements.front() < 0 || elements.back() >= num_elements())
    throw InvalidArgument("region: element index out of range");

  std::vector<char> member(static_cast<std::size_t>(num_elements()), 0);
  for (int k : elements) member[static_cast<std::size_t>(k)] = 1;

  // Connectivity through shared block faces.
  {
    std::vector<char> seen(member.size(), 0);
    std::queue<int> todo;
    todo.push(elements.front());
    seen[static_cast<std::size_t>(elements.front())] = 1;
    std::size_t reached = 0;
    while (!todo.empty()) {
      const int k = todo.front();
      todo.pop();
      ++reached;
      const auto [ex, ey] = element_coords(k);
      const int nbrs[4][2] = {{ex - 1, ey}, {ex + 1, ey}, {ex, ey - 1}, {ex, ey + 1}};
      for (const auto& nb : nbrs) {
        if (nb[0] < 0 || nb[1] < 0 || nb[0] >= coarse_ || nb[1] >= coarse_) continue;
        const auto m = static_cast<std::size_t>(element(nb[0], nb[1]));
        if (member[m] && !seen[m]) {
          seen[m] = 1;
          todo.push(static_cast<int>(m));
        }
      }
    }
    if (reached != elements.size()) throw InvalidArgument("region: element set is not connected");
  }

  auto region = std::shared_ptr<Region>(new Region());
  region->elements_ = elements;
  BlockBox& bb = region->bounds_;
  bb = {coarse_, coarse_, -1, -1};
  for (int k : elements) {
    const auto [ex, ey] = element_coords(k);
    bb.x0 = std::min(bb.x0, ex);
    bb.y0 = std::min(bb.y0, ey);
    bb.x1 = std::max(bb.x1, ex);
    bb.y1 = std::max(bb.y1, ey);
  }

  for (int k : elements) {
    auto cells = element_cells(k);
    region->cells_.insert(region->cells_.end(), cells.begin(), cells.end());
  }
  std::sort(region->cells_.begin(), region->cells_.end());

  auto inside = [&](int c) {
    return c >= 0 && member[static_cast<std::size_t>(element_of_cell(c))];
  };
  for (int c : region->cells_) {
    const CellEdges ce = cell_edges(c);
    for (int e : {ce.left, ce.right, ce.bottom, ce.top}) {
      region->touching_edges_.push_back(e);
      const auto [c0, c1] = edge_cells(e);
      // Count each interior edge once, from its lower/left cell.
      if (inside(c0) && inside(c1) && c0 == c) region->interior_edges_.push_back(e);
    }
  }
  std::sort(region->touching_edges_.begin(), region->touching_edges_.end());
  region->touching_edges_.erase(
      std::unique(region->touching_edges_.begin(), region->touching_edges_.end()),
      region->touching_edges_.end());
  std::sort(region->interior_edges_.begin(), region->interior_edges_.end());
  return region;
}

bool Region::contains_element(int k) const {
  return std::binary_search(elements_.begin(), elements_.end(), k);
}

RegionDofs restrict_dofs(const Region& region) {
  return {region.interior_edges(), region.cells()};
}

LocalIndex::LocalIndex(std::span<const int> subset, int global_size)
    : map_(static_cast<std::size_t>(global_size), -1) {
  for (std::size_t i = 0; i < subset.size(); ++i) map_[static_cast<std::size_t>(subset[i])] = static_cast<int>(i);
}

}  // namespace cemflow
