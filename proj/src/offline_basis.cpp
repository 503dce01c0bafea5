#include "cemflow/offline_basis.hpp"

#include <Eigen/LU>
#include <algorithm>
#include <cstring>
#include <fstream>
#include <mutex>

#include "cemflow/error.hpp"
#include "cemflow/parallel.hpp"

namespace cemflow {

Eigen::VectorXd BasisField::global_velocity(const TwoLevelMesh& mesh) const {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(mesh.num_edges());
  const auto& edges = region->interior_edges();
  for (std::size_t i = 0; i < edges.size(); ++i) v[edges[i]] = velocity[static_cast<Eigen::Index>(i)];
  return v;
}

Eigen::VectorXd BasisField::global_pressure(const TwoLevelMesh& mesh) const {
  Eigen::VectorXd q = Eigen::VectorXd::Zero(mesh.num_cells());
  const auto& cells = region->cells();
  for (std::size_t i = 0; i < cells.size(); ++i) q[cells[i]] = pressure[static_cast<Eigen::Index>(i)];
  return q;
}

SaddleOperator assemble_constrained_saddle(const FineSystem& sys, const AuxBasis& aux, const Region& region) {
  const TwoLevelMesh& mesh = sys.mesh;
  const auto& edges = region.interior_edges();
  const auto& cells = region.cells();
  SaddleOperator op;
  op.a = extract(sys.a, edges, edges);
  op.b = extract(sys.b, cells, edges);

  // W = S_r Phi_r: column (k, j) is S p_j^(k) restricted to the region.
  const int modes = aux.modes_per_element();
  const LocalIndex local(cells, mesh.num_cells());
  std::vector<Eigen::Triplet<double>> t;
  t.reserve(cells.size() * static_cast<std::size_t>(modes));
  int col = 0;
  for (int k : region.elements()) {
    const auto ecells = mesh.element_cells(k);
    const Eigen::MatrixXd& p = aux.element_modes(k);
    for (int j = 0; j < modes; ++j, ++col)
      for (std::size_t i = 0; i < ecells.size(); ++i) {
        const double w = sys.s[ecells[i]] * p(static_cast<Eigen::Index>(i), j);
        if (w != 0.0) t.emplace_back(local[ecells[i]], col, w);
      }
  }
  op.p_factor.resize(static_cast<Eigen::Index>(cells.size()), col);
  op.p_factor.setFromTriplets(t.begin(), t.end());
  op.p_factor.makeCompressed();
  return op;
}

struct ElementCondensation::Element {
  std::vector<int> inner;     // fine edges with both cells in the element
  std::vector<int> cells;
  std::vector<int> boundary;  // edges on the element boundary, off the domain boundary
  std::unique_ptr<SaddleFactorization> lu;
  SparseMatrix coupling;  // interface rows: [A(boundary, inner), -B(cells, boundary)^T]
  Eigen::MatrixXd lift;   // interior response to unit boundary fluxes, (inner, cells) x boundary
  Eigen::MatrixXd schur;  // coupling * lift
  mutable std::mutex mutex;

  // (velocity, pressure) of the interior with zero boundary fluxes.
  Eigen::VectorXd solve(const Eigen::VectorXd& rhs_velocity, const Eigen::VectorXd& rhs_pressure) const {
    std::lock_guard lock(mutex);
    auto x = lu->solve(rhs_velocity, rhs_pressure);
    Eigen::VectorXd out(x.velocity.size() + x.pressure.size());
    out << x.velocity, x.pressure;
    return out;
  }
};

ElementCondensation::ElementCondensation(const FineSystem& sys, const AuxBasis& aux, int workers)
    : sys_(sys), aux_(aux) {
  const TwoLevelMesh& mesh = sys.mesh;
  if (mesh.fine_per_block() < 2) return;
  elements_.resize(static_cast<std::size_t>(mesh.num_elements()));
  parallel_for(mesh.num_elements(), workers, [&](int k) {
    auto el = std::make_unique<Element>();
    const auto region = mesh.make_region({k});
    el->inner = region->interior_edges();
    el->cells = region->cells();
    for (int e : region->touching_edges())
      if (!mesh.is_boundary_edge(e) && !std::binary_search(el->inner.begin(), el->inner.end(), e))
        el->boundary.push_back(e);
    const SaddleOperator op = assemble_constrained_saddle(sys, aux, *region);
    try {
      el->lu = std::make_unique<SaddleFactorization>(op);
    } catch (const SingularSystemError& e) {
      throw SingularSystemError("interior of element " + std::to_string(k) + ": " + e.what(), e.witness(),
                                e.nullity());
    }
    const SparseMatrix a_ib = extract(sys.a, el->inner, el->boundary);
    const SparseMatrix b_cb = extract(sys.b, el->cells, el->boundary);
    const auto ni = static_cast<Eigen::Index>(el->inner.size());
    const auto nc = static_cast<Eigen::Index>(el->cells.size());
    const auto nb = static_cast<Eigen::Index>(el->boundary.size());
    el->lift.resize(ni + nc, nb);
    for (Eigen::Index j = 0; j < nb; ++j)
      el->lift.col(j) = el->solve(Eigen::VectorXd(a_ib.col(j)), Eigen::VectorXd(b_cb.col(j)));
    SparseMatrix coupling(nb, ni + nc);
    {
      const SparseMatrix a_bi = a_ib.transpose();
      const SparseMatrix b_bc = b_cb.transpose();
      std::vector<Eigen::Triplet<double>> t;
      for (int j = 0; j < a_bi.outerSize(); ++j)
        for (SparseMatrix::InnerIterator it(a_bi, j); it; ++it) t.emplace_back(it.row(), j, it.value());
      for (int j = 0; j < b_bc.outerSize(); ++j)
        for (SparseMatrix::InnerIterator it(b_bc, j); it; ++it) t.emplace_back(it.row(), ni + j, -it.value());
      coupling.setFromTriplets(t.begin(), t.end());
    }
    el->coupling = std::move(coupling);
    el->schur = el->coupling * el->lift;
    elements_[static_cast<std::size_t>(k)] = std::move(el);
  });
}

ElementCondensation::~ElementCondensation() = default;

struct RegionSolver::Interface {
  const ElementCondensation* cond = nullptr;
  std::vector<int> edges;  // region edges on element boundaries, sorted
  Eigen::PartialPivLU<Eigen::MatrixXd> lu;
};

namespace {

// Largest condensed system treated densely.
constexpr std::size_t kMaxInterface = 4000;

}  // namespace

RegionSolver::RegionSolver(const FineSystem& sys, const AuxBasis& aux, std::shared_ptr<const Region> region)
    : region_(std::move(region)), op_(assemble_constrained_saddle(sys, aux, *region_)),
      lu_(std::make_unique<SaddleFactorization>(op_)) {}

RegionSolver::RegionSolver(const ElementCondensation& cond, std::shared_ptr<const Region> region)
    : region_(std::move(region)), op_(assemble_constrained_saddle(cond.system(), cond.aux(), *region_)) {
  const FineSystem& sys = cond.system();
  const TwoLevelMesh& mesh = sys.mesh;
  const auto& edges = region_->interior_edges();
  auto iface = std::make_unique<Interface>();
  iface->cond = &cond;
  if (!cond.elements_.empty()) {
    for (int k : region_->elements())
      for (int e : cond.elements_[static_cast<std::size_t>(k)]->boundary)
        if (std::binary_search(edges.begin(), edges.end(), e)) iface->edges.push_back(e);
    std::sort(iface->edges.begin(), iface->edges.end());
    iface->edges.erase(std::unique(iface->edges.begin(), iface->edges.end()), iface->edges.end());
  }
  if (cond.elements_.empty() || iface->edges.size() > kMaxInterface) {
    lu_ = std::make_unique<SaddleFactorization>(op_);
    return;
  }
  const LocalIndex at(iface->edges, mesh.num_edges());
  Eigen::MatrixXd s = Eigen::MatrixXd(extract(sys.a, iface->edges, iface->edges));
  for (int k : region_->elements()) {
    const ElementCondensation::Element& el = *cond.elements_[static_cast<std::size_t>(k)];
    const auto nb = static_cast<Eigen::Index>(el.boundary.size());
    for (Eigen::Index j = 0; j < nb; ++j) {
      const int cj = at[el.boundary[static_cast<std::size_t>(j)]];
      if (cj < 0) continue;
      for (Eigen::Index i = 0; i < nb; ++i) {
        const int ri = at[el.boundary[static_cast<std::size_t>(i)]];
        if (ri >= 0) s(ri, cj) -= el.schur(i, j);
      }
    }
  }
  if (!s.allFinite()) throw NumericalError("condensed region system has non-finite entries");
  if (!iface->edges.empty()) iface->lu.compute(s);
  interface_ = std::move(iface);
}

RegionSolver::~RegionSolver() = default;

SaddleFactorization::Solution RegionSolver::condensed_solve(const Eigen::VectorXd& rhs_velocity,
                                                            const Eigen::VectorXd& rhs_pressure) const {
  const ElementCondensation& cond = *interface_->cond;
  const TwoLevelMesh& mesh = cond.system().mesh;
  const LocalIndex edge_at(region_->interior_edges(), mesh.num_edges());
  const LocalIndex cell_at(region_->cells(), mesh.num_cells());
  const LocalIndex iface_at(interface_->edges, mesh.num_edges());
  const auto nf = static_cast<Eigen::Index>(interface_->edges.size());

  const auto& elements = region_->elements();
  std::vector<Eigen::VectorXd> interior(elements.size());
  Eigen::VectorXd r(nf);
  for (Eigen::Index i = 0; i < nf; ++i) r[i] = rhs_velocity[edge_at[interface_->edges[static_cast<std::size_t>(i)]]];
  for (std::size_t t = 0; t < elements.size(); ++t) {
    const ElementCondensation::Element& el = *cond.elements_[static_cast<std::size_t>(elements[t])];
    Eigen::VectorXd fu(static_cast<Eigen::Index>(el.inner.size())), fq(static_cast<Eigen::Index>(el.cells.size()));
    for (std::size_t i = 0; i < el.inner.size(); ++i) fu[static_cast<Eigen::Index>(i)] = rhs_velocity[edge_at[el.inner[i]]];
    for (std::size_t i = 0; i < el.cells.size(); ++i) fq[static_cast<Eigen::Index>(i)] = rhs_pressure[cell_at[el.cells[i]]];
    interior[t] = el.solve(fu, fq);
    const Eigen::VectorXd flux = el.coupling * interior[t];
    for (std::size_t i = 0; i < el.boundary.size(); ++i) {
      const int at = iface_at[el.boundary[i]];
      if (at >= 0) r[at] -= flux[static_cast<Eigen::Index>(i)];
    }
  }
  const Eigen::VectorXd ub = nf > 0 ? Eigen::VectorXd(interface_->lu.solve(r)) : Eigen::VectorXd();

  SaddleFactorization::Solution x;
  x.velocity.resize(rhs_velocity.size());
  x.pressure.resize(rhs_pressure.size());
  for (Eigen::Index i = 0; i < nf; ++i) x.velocity[edge_at[interface_->edges[static_cast<std::size_t>(i)]]] = ub[i];
  for (std::size_t t = 0; t < elements.size(); ++t) {
    const ElementCondensation::Element& el = *cond.elements_[static_cast<std::size_t>(elements[t])];
    Eigen::VectorXd local_ub(static_cast<Eigen::Index>(el.boundary.size()));
    for (std::size_t i = 0; i < el.boundary.size(); ++i) {
      const int at = iface_at[el.boundary[i]];
      local_ub[static_cast<Eigen::Index>(i)] = at >= 0 ? ub[at] : 0.0;
    }
    const Eigen::VectorXd xi = interior[t] - el.lift * local_ub;
    const auto ni = static_cast<Eigen::Index>(el.inner.size());
    for (std::size_t i = 0; i < el.inner.size(); ++i) x.velocity[edge_at[el.inner[i]]] = xi[static_cast<Eigen::Index>(i)];
    for (std::size_t i = 0; i < el.cells.size(); ++i) x.pressure[cell_at[el.cells[i]]] = xi[ni + static_cast<Eigen::Index>(i)];
  }
  return x;
}

SaddleFactorization::Solution RegionSolver::solve(const Eigen::VectorXd& rhs_velocity,
                                                  const Eigen::VectorXd& rhs_pressure) const {
  if (!interface_) return lu_->solve(rhs_velocity, rhs_pressure);
  const Eigen::Index nv = op_.velocity_size(), np = op_.pressure_size();
  if (rhs_velocity.size() != nv || rhs_pressure.size() != np)
    throw InvalidArgument("region solve: right-hand side has the wrong size");
  Eigen::VectorXd rhs(nv + np);
  rhs << rhs_velocity, rhs_pressure;
  const double rhs_norm = rhs.norm();
  if (rhs_norm == 0.0) return {Eigen::VectorXd::Zero(nv), Eigen::VectorXd::Zero(np)};
  auto stack = [&](const SaddleFactorization::Solution& s) {
    Eigen::VectorXd v(nv + np);
    v << s.velocity, s.pressure;
    return v;
  };
  // Same refinement as the direct factorization, against the assembled operator.
  Eigen::VectorXd x = stack(condensed_solve(rhs_velocity, rhs_pressure));
  double res = (rhs - op_.apply(x)).norm() / rhs_norm;
  for (int step = 0; step < 5 && res > 1e-13; ++step) {
    const Eigen::VectorXd rr = rhs - op_.apply(x);
    const Eigen::VectorXd x_new = x + stack(condensed_solve(rr.head(nv), rr.tail(np)));
    const double res_new = (rhs - op_.apply(x_new)).norm() / rhs_norm;
    if (!(res_new < res)) break;
    x = x_new;
    res = res_new;
  }
  if (!x.allFinite()) throw NumericalError("region solve produced non-finite values");
  return {x.head(nv), x.tail(np)};
}

Eigen::VectorXd mode_load(const FineSystem& sys, const AuxBasis& aux, const Region& region, int element, int mode) {
  const TwoLevelMesh& mesh = sys.mesh;
  const LocalIndex local(region.cells(), mesh.num_cells());
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(region.cells().size()));
  const auto ecells = mesh.element_cells(element);
  const Eigen::MatrixXd& p = aux.element_modes(element);
  for (std::size_t i = 0; i < ecells.size(); ++i) {
    const int at = local[ecells[i]];
    if (at < 0) throw InvalidArgument("mode_load: element lies outside the region");
    rhs[at] = sys.s[ecells[i]] * p(static_cast<Eigen::Index>(i), mode);
  }
  return rhs;
}

namespace {

BasisField solve_on(const FineSystem& sys, const AuxBasis& aux, const RegionSolver& solver, int element, int mode,
                    int layers) {
  const Region& region = *solver.region();
  const Eigen::VectorXd rhs_q = mode_load(sys, aux, region, element, mode);
  auto x = solver.solve(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(region.interior_edges().size())), rhs_q);
  BasisField f;
  f.region = solver.region();
  f.velocity = std::move(x.velocity);
  f.pressure = std::move(x.pressure);
  f.origin = BasisField::Origin::offline;
  f.anchor = element;
  f.mode = mode;
  f.layers = layers;
  return f;
}

std::unique_ptr<RegionSolver> factor_region(const ElementCondensation& cond, std::shared_ptr<const Region> region,
                                            const std::string& what) {
  try {
    return std::make_unique<RegionSolver>(cond, std::move(region));
  } catch (const SingularSystemError& e) {
    throw SingularSystemError(what + ": " + e.what(), e.witness(), e.nullity());
  }
}

}  // namespace

BasisField solve_cem_basis(const FineSystem& sys, const AuxBasis& aux, int element, int mode, int layers,
                           const ElementCondensation* cond) {
  if (layers < 0) throw InvalidArgument("solve_cem_basis: negative layer count");
  if (mode < 0 || mode >= aux.modes_per_element()) throw InvalidArgument("solve_cem_basis: mode out of range");
  std::unique_ptr<ElementCondensation> own;
  if (!cond) {
    own = std::make_unique<ElementCondensation>(sys, aux);
    cond = own.get();
  }
  auto solver = factor_region(*cond, sys.mesh.oversample_element(element, layers),
                              "offline region of element " + std::to_string(element));
  return solve_on(sys, aux, *solver, element, mode, layers);
}

std::vector<BasisField> build_offline_space(const FineSystem& sys, const AuxBasis& aux, int layers, int workers,
                                            const ElementCondensation* cond) {
  if (layers < 0) throw InvalidArgument("build_offline_space: negative layer count");
  if (cond && (&cond->system() != &sys || &cond->aux() != &aux))
    throw InvalidArgument("build_offline_space: condensation built for another system");
  std::unique_ptr<ElementCondensation> own;
  if (!cond) {
    own = std::make_unique<ElementCondensation>(sys, aux, workers);
    cond = own.get();
  }
  const int modes = aux.modes_per_element();
  const int elements = sys.mesh.num_elements();
  std::vector<BasisField> fields(static_cast<std::size_t>(elements * modes));
  parallel_for(elements, workers, [&](int k) {
    auto solver = factor_region(*cond, sys.mesh.oversample_element(k, layers),
                                "offline region of element " + std::to_string(k));
    for (int j = 0; j < modes; ++j)
      fields[static_cast<std::size_t>(k * modes + j)] = solve_on(sys, aux, *solver, k, j, layers);
  });
  return fields;
}

SaddleFactorization::Solution global_map(const FineSystem& sys, const AuxBasis& aux, const Eigen::VectorXd& c) {
  const auto domain = sys.mesh.whole_domain();
  RegionSolver solver(sys, aux, domain);
  const Eigen::VectorXd p_aux = aux.expand(c);
  const Eigen::VectorXd rhs_q = sys.s.cwiseProduct(p_aux);  // region = all cells, same order
  return solver.solve(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(domain->interior_edges().size())), rhs_q);
}

double constrained_residual(const FineSystem& sys, const AuxBasis& aux, const BasisField& field,
                            const Eigen::VectorXd& rhs_velocity, const Eigen::VectorXd& rhs_pressure) {
  const SaddleOperator op = assemble_constrained_saddle(sys, aux, *field.region);
  Eigen::VectorXd x(field.velocity.size() + field.pressure.size());
  x << field.velocity, field.pressure;
  Eigen::VectorXd rhs(x.size());
  rhs << rhs_velocity, rhs_pressure;
  const double scale = rhs.norm();
  const double res = (op.apply(x) - rhs).norm();
  return scale > 0 ? res / scale : res;
}

std::uint64_t field_checksum(const FineSystem& sys) {
  // FNV-1a over the raw bytes of kappa^-1 and kappa-tilde.
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&](const Eigen::VectorXd& v) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(v.data());
    for (std::size_t i = 0; i < static_cast<std::size_t>(v.size()) * sizeof(double); ++i) {
      h ^= bytes[i];
      h *= 1099511628211ull;
    }
  };
  mix(sys.kappa_inverse);
  mix(sys.kappa_tilde);
  return h;
}

namespace {

constexpr char kMagic[8] = {'C', 'E', 'M', 'B', 'A', 'S', 'I', 'S'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& in, const std::string& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw ParseError(path, 0, "truncated basis file");
  return v;
}

void put_vector(std::ostream& out, const Eigen::VectorXd& v) {
  put<std::int64_t>(out, v.size());
  out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
}

Eigen::VectorXd get_vector(std::istream& in, const std::string& path, Eigen::Index expected) {
  const auto n = get<std::int64_t>(in, path);
  if (n != expected) throw ParseError(path, 0, "basis vector length does not match its region");
  Eigen::VectorXd v(n);
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
  if (!in) throw ParseError(path, 0, "truncated basis file");
  return v;
}

}  // namespace

void save_basis(const std::string& path, const BasisHeader& header, const std::vector<BasisField>& fields) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write basis file '" + path + "'");
  out.write(kMagic, sizeof kMagic);
  put(out, kVersion);
  put<std::int32_t>(out, header.coarse);
  put<std::int32_t>(out, header.fine);
  put<std::int32_t>(out, header.modes);
  put<std::int32_t>(out, header.layers);
  put(out, header.field_checksum);
  put<std::int64_t>(out, static_cast<std::int64_t>(fields.size()));
  for (const BasisField& f : fields) {
    put<std::uint8_t>(out, static_cast<std::uint8_t>(f.origin));
    put<std::int32_t>(out, f.anchor);
    put<std::int32_t>(out, f.mode);
    put<std::int32_t>(out, f.layers);
    put<std::int64_t>(out, static_cast<std::int64_t>(f.region->elements().size()));
    for (int k : f.region->elements()) put<std::int32_t>(out, k);
    put_vector(out, f.velocity);
    put_vector(out, f.pressure);
  }
  if (!out) throw Error("write failed for basis file '" + path + "'");
}

std::vector<BasisField> load_basis(const std::string& path, const TwoLevelMesh& mesh, const BasisHeader& expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path, 0, "cannot open basis file");
  char magic[sizeof kMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw ParseError(path, 0, "not a basis file");
  if (get<std::uint32_t>(in, path) != kVersion) throw ParseError(path, 0, "unsupported basis file version");
  BasisHeader h;
  h.coarse = get<std::int32_t>(in, path);
  h.fine = get<std::int32_t>(in, path);
  h.modes = get<std::int32_t>(in, path);
  h.layers = get<std::int32_t>(in, path);
  h.field_checksum = get<std::uint64_t>(in, path);
  if (!(h == expected)) throw ParseError(path, 0, "basis file was built for different inputs");
  const auto count = get<std::int64_t>(in, path);
  std::vector<BasisField> fields;
  fields.reserve(static_cast<std::size_t>(count));
  for (std::int64_t i = 0; i < count; ++i) {
    BasisField f;
    f.origin = static_cast<BasisField::Origin>(get<std::uint8_t>(in, path));
    f.anchor = get<std::int32_t>(in, path);
    f.mode = get<std::int32_t>(in, path);
    f.layers = get<std::int32_t>(in, path);
    const auto ne = get<std::int64_t>(in, path);
    if (ne < 1 || ne > mesh.num_elements()) throw ParseError(path, 0, "bad region size in basis file");
    std::vector<int> elements(static_cast<std::size_t>(ne));
    for (auto& k : elements) k = get<std::int32_t>(in, path);
    f.region = mesh.make_region(std::move(elements));
    f.velocity = get_vector(in, path, static_cast<Eigen::Index>(f.region->interior_edges().size()));
    f.pressure = get_vector(in, path, static_cast<Eigen::Index>(f.region->cells().size()));
    fields.push_back(std::move(f));
  }
  return fields;
}

}  // namespace cemflow
