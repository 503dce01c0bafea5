#include "cemflow/pou.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>

#include "cemflow/error.hpp"

namespace cemflow {

PouMode parse_pou_mode(const std::string& name) {
  if (name == "all-nodes" || name == "all") return PouMode::all_nodes;
  if (name == "interior" || name == "interior-only") return PouMode::interior_only;
  if (name == "interior-folded" || name == "folded") return PouMode::interior_folded;
  throw InvalidArgument("unknown partition-of-unity mode '" + name + "'");
}

const char* to_string(PouMode mode) {
  switch (mode) {
    case PouMode::all_nodes: return "all-nodes";
    case PouMode::interior_only: return "interior";
    case PouMode::interior_folded: return "interior-folded";
  }
  return "?";
}

namespace {

// Hat of coarse node a evaluated at a fine coordinate given in units of
// h / 2 (so edge midpoints and cell centres are integers). Exact zero on
// the support boundary.
double hat_half_units(int a, int fine_per_block, long coord2) {
  const long d = std::labs(coord2 - 2L * a * fine_per_block);
  const long width = 2L * fine_per_block;
  if (d >= width) return 0.0;
  return static_cast<double>(width - d) / static_cast<double>(width);
}

}  // namespace

PartitionOfUnity::PartitionOfUnity(const TwoLevelMesh& mesh, PouMode mode)
    : mesh_(mesh), mode_(mode) {
  const int t = mesh.coarse_per_side();
  if (mode != PouMode::all_nodes && t < 2)
    throw InvalidArgument(std::string("partition of unity: ") + to_string(mode) +
                          " mode needs T >= 2 (T=1 has no interior nodes)");
  node_to_function_.assign(static_cast<std::size_t>(mesh.num_nodes()), -1);
  for (int b = 0; b <= t; ++b) {
    for (int a = 0; a <= t; ++a) {
      if (mode != PouMode::all_nodes && !mesh.is_interior_node(a, b)) continue;
      node_to_function_[static_cast<std::size_t>(mesh.node(a, b))] = static_cast<int>(nodes_.size());
      nodes_.push_back({a, b});
    }
  }
}

namespace {

double plain_hat(int a, int t, double x) {
  const double d = std::abs(x * t - a);
  return d >= 1.0 ? 0.0 : 1.0 - d;
}

double plain_dhat(int a, int t, double x) {
  const double s = x * t - a;
  if (std::abs(s) >= 1.0) return 0.0;
  return s > 0 ? -t : t;
}

}  // namespace

// In folded mode the boundary hats 0 and T are added to nodes 1 and T-1.
std::array<int, 2> PartitionOfUnity::folded_1d(int a) const {
  const int t = mesh_.coarse_per_side();
  if (mode_ != PouMode::interior_folded) return {-1, -1};
  return {a == 1 ? 0 : -1, a == t - 1 ? t : -1};
}

double PartitionOfUnity::hat_1d(int a, double x) const {
  const int t = mesh_.coarse_per_side();
  double v = plain_hat(a, t, x);
  for (int extra : folded_1d(a))
    if (extra >= 0) v += plain_hat(extra, t, x);
  return v;
}

double PartitionOfUnity::dhat_1d(int a, double x) const {
  const int t = mesh_.coarse_per_side();
  double v = plain_dhat(a, t, x);
  for (int extra : folded_1d(a))
    if (extra >= 0) v += plain_dhat(extra, t, x);
  return v;
}

double PartitionOfUnity::hat_exact(int a, long coord2) const {
  const int n = mesh_.fine_per_block();
  double v = hat_half_units(a, n, coord2);
  for (int extra : folded_1d(a))
    if (extra >= 0) v += hat_half_units(extra, n, coord2);
  return v;
}

double PartitionOfUnity::value(int j, double x, double y) const {
  const auto [a, b] = node(j);
  return hat_1d(a, x) * hat_1d(b, y);
}

std::array<double, 2> PartitionOfUnity::gradient(int j, double x, double y) const {
  const auto [a, b] = node(j);
  return {dhat_1d(a, x) * hat_1d(b, y), hat_1d(a, x) * dhat_1d(b, y)};
}

double PartitionOfUnity::value_at_fine_node(int j, int i, int k) const {
  const auto [a, b] = node(j);
  return hat_exact(a, 2L * i) * hat_exact(b, 2L * k);
}

double PartitionOfUnity::value_at_edge_midpoint(int j, int e) const {
  const auto [a, b] = node(j);
  const int nf = mesh_.fine_per_side();
  if (mesh_.is_horizontal(e)) {
    const int ix = e % nf, row = e / nf;
    return hat_exact(a, 2L * ix + 1) * hat_exact(b, 2L * row);
  }
  const int r = e - mesh_.num_horizontal_edges();
  const int col = r % (nf + 1), iy = r / (nf + 1);
  return hat_exact(a, 2L * col) * hat_exact(b, 2L * iy + 1);
}

double PartitionOfUnity::value_at_cell_center(int j, int c) const {
  const auto [a, b] = node(j);
  const auto [ix, iy] = mesh_.cell_coords(c);
  return hat_exact(a, 2L * ix + 1) * hat_exact(b, 2L * iy + 1);
}

std::array<double, 2> PartitionOfUnity::gradient_at_cell(int j, int c) const {
  const auto [x, y] = mesh_.cell_center(c);
  return gradient(j, x, y);
}

std::shared_ptr<const Region> PartitionOfUnity::support(int j) const {
  const auto [a, b] = node(j);
  return mesh_.node_patch(a, b, 0);
}

DiagonalScaling PartitionOfUnity::edge_scaling(int j) const {
  const auto region = support(j);
  DiagonalScaling out;
  out.index = region->interior_edges();
  out.weight.reserve(out.index.size());
  for (int e : out.index) out.weight.push_back(value_at_edge_midpoint(j, e));
  return out;
}

DiagonalScaling PartitionOfUnity::cell_scaling(int j) const {
  const auto region = support(j);
  DiagonalScaling out;
  out.index = region->cells();
  out.weight.reserve(out.index.size());
  for (int c : out.index) out.weight.push_back(value_at_cell_center(j, c));
  return out;
}

std::vector<int> PartitionOfUnity::functions_on_cell(int c) const {
  const auto [ex, ey] = mesh_.element_coords(mesh_.element_of_cell(c));
  std::vector<int> out;
  for (int b = ey; b <= ey + 1; ++b)
    for (int a = ex; a <= ex + 1; ++a) {
      const int f = node_to_function_[static_cast<std::size_t>(mesh_.node(a, b))];
      if (f >= 0) out.push_back(f);
    }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace cemflow
