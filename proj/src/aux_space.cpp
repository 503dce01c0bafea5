#include "cemflow/aux_space.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>

#include "cemflow/error.hpp"
#include "cemflow/parallel.hpp"

namespace cemflow {

LocalSpectrum local_spectral(const FineSystem& sys, int element, int count) {
  const TwoLevelMesh& mesh = sys.mesh;
  const auto region = mesh.oversample_element(element, 0);
  const std::vector<int>& cells = region->cells();
  const std::vector<int>& edges = region->interior_edges();
  const auto np = static_cast<Eigen::Index>(cells.size());
  if (count < 1 || count > np)
    throw InvalidArgument("local_spectral: requested " + std::to_string(count) + " modes on an element with " +
                          std::to_string(np) + " cells");

  Eigen::VectorXd s(np);
  for (Eigen::Index i = 0; i < np; ++i) s[i] = sys.s[cells[static_cast<std::size_t>(i)]];

  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(np, np);
  LocalSpectrum out;
  out.degenerate = edges.empty();
  if (!edges.empty()) {
    const Eigen::MatrixXd a(extract(sys.a, edges, edges));
    const Eigen::MatrixXd bt = Eigen::MatrixXd(extract(sys.b, cells, edges)).transpose();
    Eigen::LLT<Eigen::MatrixXd> llt(a);
    if (llt.info() != Eigen::Success)
      throw NumericalError("local_spectral: velocity mass block of element " + std::to_string(element) +
                           " is not positive definite");
    // Schur complement as a Gram matrix keeps it exactly symmetric.
    const Eigen::MatrixXd y = llt.matrixL().solve(bt);
    m.selfadjointView<Eigen::Lower>().rankUpdate(y.transpose());
    m.triangularView<Eigen::StrictlyUpper>() = m.transpose();
  }
  EigenPairs pairs = gen_eig_sym(m, s, count);
  for (Eigen::Index j = 0; j < pairs.vectors.cols(); ++j) {
    Eigen::Index at = 0;
    pairs.vectors.col(j).cwiseAbs().maxCoeff(&at);
    if (pairs.vectors(at, j) < 0) pairs.vectors.col(j) *= -1.0;
  }
  out.values = std::move(pairs.values);
  out.vectors = std::move(pairs.vectors);
  return out;
}

AuxBasis::AuxBasis(TwoLevelMesh mesh, int modes_per_element, std::vector<LocalSpectrum> spectra)
    : mesh_(mesh), modes_(modes_per_element), gap_(std::numeric_limits<double>::infinity()) {
  if (static_cast<int>(spectra.size()) != mesh.num_elements())
    throw InvalidArgument("AuxBasis: one spectrum per element required");
  for (int k = 0; k < mesh.num_elements(); ++k) {
    LocalSpectrum& sp = spectra[static_cast<std::size_t>(k)];
    if (sp.values.size() < modes_) throw InvalidArgument("AuxBasis: spectrum has fewer modes than J");
    values_.push_back(sp.values.head(modes_));
    next_.push_back(sp.values.size() > modes_ ? sp.values[modes_] : std::numeric_limits<double>::infinity());
    degenerate_.push_back(sp.degenerate ? 1 : 0);
    modes_of_.push_back(sp.vectors.leftCols(modes_));
    cells_of_.push_back(mesh.element_cells(k));
    gap_ = std::min(gap_, next_.back());
  }
}

Eigen::VectorXd AuxBasis::mode(int r) const {
  const int k = r / modes_, j = r % modes_;
  Eigen::VectorXd q = Eigen::VectorXd::Zero(mesh_.num_cells());
  const auto& cells = cells_of_[static_cast<std::size_t>(k)];
  const Eigen::MatrixXd& p = modes_of_[static_cast<std::size_t>(k)];
  for (std::size_t i = 0; i < cells.size(); ++i) q[cells[i]] = p(static_cast<Eigen::Index>(i), j);
  return q;
}

Eigen::VectorXd AuxBasis::coefficients(const Eigen::VectorXd& q, const Eigen::VectorXd& s) const {
  Eigen::VectorXd c(dimension());
  for (int k = 0; k < mesh_.num_elements(); ++k) {
    const auto& cells = cells_of_[static_cast<std::size_t>(k)];
    Eigen::VectorXd sq(static_cast<Eigen::Index>(cells.size()));
    for (std::size_t i = 0; i < cells.size(); ++i) sq[static_cast<Eigen::Index>(i)] = s[cells[i]] * q[cells[i]];
    c.segment(static_cast<Eigen::Index>(k) * modes_, modes_) =
        modes_of_[static_cast<std::size_t>(k)].transpose() * sq;
  }
  return c;
}

Eigen::VectorXd AuxBasis::expand(const Eigen::VectorXd& coefficients) const {
  Eigen::VectorXd q = Eigen::VectorXd::Zero(mesh_.num_cells());
  for (int k = 0; k < mesh_.num_elements(); ++k) {
    const auto& cells = cells_of_[static_cast<std::size_t>(k)];
    const Eigen::VectorXd local =
        modes_of_[static_cast<std::size_t>(k)] * coefficients.segment(static_cast<Eigen::Index>(k) * modes_, modes_);
    for (std::size_t i = 0; i < cells.size(); ++i) q[cells[i]] = local[static_cast<Eigen::Index>(i)];
  }
  return q;
}

Eigen::VectorXd AuxBasis::project(const Eigen::VectorXd& q, const Eigen::VectorXd& s) const {
  return expand(coefficients(q, s));
}

AuxBasis build_aux(const FineSystem& sys, int modes_per_element, int workers) {
  const TwoLevelMesh& mesh = sys.mesh;
  const int local = mesh.fine_per_block() * mesh.fine_per_block();
  if (modes_per_element < 1 || modes_per_element > local)
    throw InvalidArgument("build_aux: J must lie in [1, n^2] = [1, " + std::to_string(local) + "]");
  const int count = std::min(modes_per_element + 1, local);
  std::vector<LocalSpectrum> spectra(static_cast<std::size_t>(mesh.num_elements()));
  parallel_for(mesh.num_elements(), workers,
               [&](int k) { spectra[static_cast<std::size_t>(k)] = local_spectral(sys, k, count); });
  return AuxBasis(mesh, modes_per_element, std::move(spectra));
}

void write_spectrum_csv(const std::string& path, const AuxBasis& aux) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write spectrum file '" + path + "'");
  out << "element";
  for (int j = 1; j <= aux.modes_per_element(); ++j) out << ",lambda_" << j;
  out << ",lambda_next\n" << std::setprecision(12);
  for (int k = 0; k < aux.mesh().num_elements(); ++k) {
    out << k;
    for (int j = 0; j < aux.modes_per_element(); ++j) out << ',' << aux.eigenvalues(k)[j];
    out << ',' << aux.next_eigenvalue(k) << '\n';
  }
}

}  // namespace cemflow
