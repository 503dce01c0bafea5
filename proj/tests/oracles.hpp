#pragma once

// Independent reference computations for the unit and acceptance tests.
// Nothing here calls into the library beyond plain data accessors.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <vector>

namespace oracle {

/// Element set of a T x T grid grown by `layers` rings: an element joins
/// when its closure meets the current union, i.e. it touches a member
/// block at a side or a corner.
inline std::set<int> grow(int T, std::set<int> elems, int layers) {
  for (int l = 0; l < layers; ++l) {
    std::set<int> next = elems;
    for (int k = 0; k < T * T; ++k) {
      const int kx = k % T, ky = k / T;
      for (int e : elems)
        if (std::abs(e % T - kx) <= 1 && std::abs(e / T - ky) <= 1) {
          next.insert(k);
          break;
        }
    }
    elems = std::move(next);
  }
  return elems;
}

/// Elements whose closure contains coarse node (a, b).
inline std::set<int> node_elements(int T, int a, int b) {
  std::set<int> out;
  for (int ey = b - 1; ey <= b; ++ey)
    for (int ex = a - 1; ex <= a; ++ex)
      if (ex >= 0 && ey >= 0 && ex < T && ey < T) out.insert(ey * T + ex);
  return out;
}

struct EdgeSets {
  std::vector<int> interior, cells;
};

/// Fine cells and interior fine edges of an element set, enumerated from
/// the documented numbering: cell (ix, iy) -> iy N + ix, horizontal edge
/// (ix, j) -> j N + ix, vertical edge (i, iy) -> (N + 1) N + iy (N + 1) + i.
inline EdgeSets region_dofs(int T, int n, const std::set<int>& elems) {
  const int N = T * n;
  auto inside = [&](int ix, int iy) {
    if (ix < 0 || iy < 0 || ix >= N || iy >= N) return false;
    return elems.count((iy / n) * T + ix / n) > 0;
  };
  EdgeSets out;
  for (int iy = 0; iy < N; ++iy)
    for (int ix = 0; ix < N; ++ix)
      if (inside(ix, iy)) out.cells.push_back(iy * N + ix);
  for (int j = 0; j <= N; ++j)
    for (int ix = 0; ix < N; ++ix)
      if (inside(ix, j - 1) && inside(ix, j)) out.interior.push_back(j * N + ix);
  for (int iy = 0; iy < N; ++iy)
    for (int i = 0; i <= N; ++i)
      if (inside(i - 1, iy) && inside(i, iy)) out.interior.push_back((N + 1) * N + iy * (N + 1) + i);
  std::sort(out.interior.begin(), out.interior.end());
  return out;
}

/// 1D hat of node a on [0, 1] with spacing H = 1/T.
inline double hat(int a, int T, double x) {
  const double t = 1.0 - std::abs(x * T - a);
  return t > 0.0 ? t : 0.0;
}

/// d/dx of the hat away from its kinks.
inline double dhat(int a, int T, double x) {
  const double d = x * T - a;
  if (std::abs(d) >= 1.0) return 0.0;
  return d > 0.0 ? -T : T;
}

/// Dense solve of [A, -B^T; B, P] (u, q) = (f, g).
inline Eigen::VectorXd saddle_solve(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B, const Eigen::MatrixXd& P,
                                    const Eigen::VectorXd& f, const Eigen::VectorXd& g) {
  const Eigen::Index nv = A.rows(), np = B.rows();
  Eigen::MatrixXd K = Eigen::MatrixXd::Zero(nv + np, nv + np);
  K.topLeftCorner(nv, nv) = A;
  K.topRightCorner(nv, np) = -B.transpose();
  K.bottomLeftCorner(np, nv) = B;
  K.bottomRightCorner(np, np) = P;
  Eigen::VectorXd rhs(nv + np);
  rhs << f, g;
  return K.fullPivLu().solve(rhs);
}

/// Roots of det(M - lambda S) for 3 x 3 symmetric M and SPD S by bisection
/// of the cubic determinant between its Gershgorin-style bounds.
inline std::vector<double> det_roots3(const Eigen::Matrix3d& M, const Eigen::Matrix3d& S) {
  auto det = [&](double l) { return (M - l * S).determinant(); };
  // Scan a generous interval finely, then bisect each sign change.
  const double hi = 10.0 * (M.cwiseAbs().sum() / S.diagonal().minCoeff() + 1.0);
  const int steps = 200000;
  std::vector<double> roots;
  double a = -hi, fa = det(a);
  for (int k = 1; k <= steps; ++k) {
    const double b = -hi + 2.0 * hi * k / steps, fb = det(b);
    if (fa == 0.0) roots.push_back(a);
    else if (fa * fb < 0.0) {
      double lo = a, up = b, flo = fa;
      for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + up), fm = det(mid);
        if ((fm < 0) == (flo < 0)) {
          lo = mid;
          flo = fm;
        } else {
          up = mid;
        }
      }
      roots.push_back(0.5 * (lo + up));
    }
    a = b;
    fa = fb;
  }
  return roots;
}

/// Smallest k with the k largest values summing to at least theta times
/// the total; forward summation over a descending copy. Equality is met up
/// to a relative 1e-12, covering the rounding of a decimal theta. theta = 1
/// needs every nonzero value by definition.
inline std::size_t bulk_count(std::vector<double> v, double theta) {
  std::sort(v.begin(), v.end(), std::greater<>());
  if (theta == 1.0) return static_cast<std::size_t>(std::count_if(v.begin(), v.end(), [](double x) { return x > 0; }));
  long double total = 0.0L;
  for (double x : v) total += x;
  if (total == 0.0L) return 0;
  long double acc = 0.0L;
  for (std::size_t k = 0; k < v.size(); ++k) {
    acc += v[k];
    if (acc >= static_cast<long double>(theta) * total * (1.0L - 1e-12L)) return k + 1;
  }
  return v.size();
}

/// (int |u - u_h|^2)^(1/2) for kappa = 1 on an N x N grid, u_h the
/// lowest-order edge field with dofs v in the documented edge numbering.
/// 4 x 4 Gauss points per cell.
template <class F>
double rt0_error(int N, const Eigen::VectorXd& v, F exact) {
  const double h = 1.0 / N;
  const double a = std::sqrt(3.0 / 7.0 - 2.0 / 7.0 * std::sqrt(6.0 / 5.0));
  const double b = std::sqrt(3.0 / 7.0 + 2.0 / 7.0 * std::sqrt(6.0 / 5.0));
  const double wa = (18.0 + std::sqrt(30.0)) / 36.0, wb = (18.0 - std::sqrt(30.0)) / 36.0;
  const double pt[4] = {0.5 - 0.5 * b, 0.5 - 0.5 * a, 0.5 + 0.5 * a, 0.5 + 0.5 * b};
  const double wt[4] = {0.5 * wb, 0.5 * wa, 0.5 * wa, 0.5 * wb};
  const int H = (N + 1) * N;
  long double sum = 0.0L;
  for (int iy = 0; iy < N; ++iy)
    for (int ix = 0; ix < N; ++ix) {
      const double left = v[H + iy * (N + 1) + ix], right = v[H + iy * (N + 1) + ix + 1];
      const double bottom = v[iy * N + ix], top = v[(iy + 1) * N + ix];
      for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) {
          const double s = pt[i], t = pt[j];
          const double ux = (1.0 - s) * left + s * right, uy = (1.0 - t) * bottom + t * top;
          const auto e = exact((ix + s) * h, (iy + t) * h);
          sum += wt[i] * wt[j] * h * h * ((e[0] - ux) * (e[0] - ux) + (e[1] - uy) * (e[1] - uy));
        }
    }
  return std::sqrt(static_cast<double>(sum));
}

}  // namespace oracle
