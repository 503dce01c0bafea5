#include "cemflow/field.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include "cemflow/error.hpp"
#include "cemflow/pou.hpp"

namespace cemflow {

namespace {

// Portable draws from a standardized engine; std distributions are
// implementation-defined and would break cross-platform determinism.
class Draw {
 public:
  explicit Draw(std::uint64_t seed) : engine_(seed) {}
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  int integer(int lo, int hi) {  // inclusive
    const auto span = static_cast<std::uint64_t>(hi - lo + 1);
    return lo + static_cast<int>(engine_() % span);
  }

 private:
  std::mt19937_64 engine_;
};

std::string cell_name(int row, int col) {
  return "(row " + std::to_string(row) + ", col " + std::to_string(col) + ")";
}

}  // namespace

Raster read_raster(const std::string& path, int rows, int cols) {
  if (rows < 1 || cols < 1) throw InvalidArgument("read_raster: dimensions must be positive");
  std::ifstream in(path);
  if (!in) throw ParseError(path, 0, "cannot open raster file");
  Raster r{rows, cols, {}};
  const auto expected = static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
  r.data.reserve(expected);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream tokens(line);
    std::string tok;
    while (tokens >> tok) {
      if (tok[0] == '#') break;
      double v = 0.0;
      const char* first = tok.data();
      const char* last = tok.data() + tok.size();
      if (*first == '+') ++first;
      auto [ptr, ec] = std::from_chars(first, last, v);
      if (ec != std::errc() || ptr != last)
        throw ParseError(path, lineno, "not a number: '" + tok + "'");
      if (r.data.size() == expected)
        throw ParseError(path, lineno, "more than " + std::to_string(expected) + " values");
      r.data.push_back(v);
    }
  }
  if (r.data.size() != expected)
    throw ParseError(path, lineno, "expected " + std::to_string(expected) + " values, found " +
                                       std::to_string(r.data.size()));
  return r;
}

void write_raster(const std::string& path, const Raster& raster) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write raster '" + path + "'");
  out << std::setprecision(17);
  for (int row = 0; row < raster.rows; ++row) {
    for (int col = 0; col < raster.cols; ++col) {
      if (col) out << ' ';
      out << raster.at(row, col);
    }
    out << '\n';
  }
  if (!out) throw Error("write failed for raster '" + path + "'");
}

Raster cell_raster(const TwoLevelMesh& mesh, const Eigen::VectorXd& values) {
  const int nf = mesh.fine_per_side();
  if (values.size() != mesh.num_cells()) throw InvalidArgument("cell_raster: size mismatch");
  return {nf, nf, std::vector<double>(values.data(), values.data() + values.size())};
}

Raster resample_nearest(const Raster& src, int rows, int cols) {
  if (src.rows == rows && src.cols == cols) return src;
  Raster dst{rows, cols, std::vector<double>(static_cast<std::size_t>(rows) * cols)};
  for (int r = 0; r < rows; ++r) {
    // Source cell containing the destination cell centre; integer arithmetic
    // keeps the mapping exact: floor((2r + 1) * src / (2 * dst)).
    const int sr = static_cast<int>((2L * r + 1) * src.rows / (2L * rows));
    for (int c = 0; c < cols; ++c) {
      const int sc = static_cast<int>((2L * c + 1) * src.cols / (2L * cols));
      dst.data[static_cast<std::size_t>(r) * cols + c] = src.at(sr, sc);
    }
  }
  return dst;
}

PermeabilityField::PermeabilityField(Eigen::VectorXd values, int side)
    : values_(std::move(values)), side_(side) {
  if (values_.size() != static_cast<Eigen::Index>(side) * side)
    throw InvalidArgument("permeability: expected " + std::to_string(side * side) + " values");
  for (Eigen::Index c = 0; c < values_.size(); ++c) {
    if (!(values_[c] > 0.0) || !std::isfinite(values_[c]))
      throw InvalidArgument("permeability must be positive and finite; cell " +
                            cell_name(static_cast<int>(c / side), static_cast<int>(c % side)) +
                            " holds " + std::to_string(values_[c]));
  }
  min_ = values_.minCoeff();
  max_ = values_.maxCoeff();
}

PermeabilityField PermeabilityField::scaled(double factor) const {
  return PermeabilityField(values_ * factor, side_);
}

PermeabilityField permeability_from_raster(const Raster& raster, const TwoLevelMesh& mesh) {
  for (int r = 0; r < raster.rows; ++r)
    for (int c = 0; c < raster.cols; ++c)
      if (!(raster.at(r, c) > 0.0))
        throw InvalidArgument("permeability raster: nonpositive value " + std::to_string(raster.at(r, c)) +
                              " at " + cell_name(r, c));
  const int nf = mesh.fine_per_side();
  const Raster fine = resample_nearest(raster, nf, nf);
  return PermeabilityField(Eigen::Map<const Eigen::VectorXd>(fine.data.data(), nf * nf), nf);
}

PermeabilityField load_permeability(const std::string& path, int rows, int cols,
                                    const TwoLevelMesh& mesh) {
  return permeability_from_raster(read_raster(path, rows, cols), mesh);
}

PermeabilityField load_spe10(const std::string& path, int layer, const TwoLevelMesh& mesh) {
  constexpr int nx = 60, ny = 220, nz = 85;
  if (layer < 0 || layer >= nz)
    throw InvalidArgument("spe10: layer must be in [0, 84], got " + std::to_string(layer));
  std::ifstream in(path);
  if (!in) throw ParseError(path, 0, "cannot open SPE10 file");
  const std::size_t first = static_cast<std::size_t>(layer) * nx * ny;
  const std::size_t last = first + static_cast<std::size_t>(nx) * ny;
  Raster r{ny, nx, {}};
  r.data.reserve(last - first);
  std::string tok;
  std::size_t count = 0;
  while (count < last && in >> tok) {
    if (count >= first) {
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (ec != std::errc() || ptr != tok.data() + tok.size())
        throw ParseError(path, 0, "not a number at value " + std::to_string(count) + ": '" + tok + "'");
      r.data.push_back(v);
    }
    ++count;
  }
  if (count < last) throw ParseError(path, 0, "file ends before layer " + std::to_string(layer));
  return permeability_from_raster(r, mesh);
}

FieldKind parse_field_kind(const std::string& name) {
  if (name == "uniform") return FieldKind::uniform;
  if (name == "inclusions") return FieldKind::inclusions;
  if (name == "channels") return FieldKind::channels;
  if (name == "layered") return FieldKind::layered;
  throw InvalidArgument("unknown field kind '" + name + "'");
}

const char* to_string(FieldKind kind) {
  switch (kind) {
    case FieldKind::uniform: return "uniform";
    case FieldKind::inclusions: return "inclusions";
    case FieldKind::channels: return "channels";
    case FieldKind::layered: return "layered";
  }
  return "?";
}

PermeabilityField gen_field(FieldKind kind, double contrast, std::uint64_t seed,
                            const TwoLevelMesh& mesh) {
  if (!(contrast >= 1.0) || !std::isfinite(contrast))
    throw InvalidArgument("gen_field: contrast must be >= 1, got " + std::to_string(contrast));
  const int nf = mesh.fine_per_side();
  Eigen::VectorXd k = Eigen::VectorXd::Ones(nf * nf);
  Draw draw(seed);
  auto set = [&](int ix, int iy) {
    if (ix >= 0 && iy >= 0 && ix < nf && iy < nf) k[iy * nf + ix] = contrast;
  };
  // Feature sizes scale with the grid so fields look alike across resolutions.
  const int unit = std::max(1, nf / 96);

  switch (kind) {
    case FieldKind::uniform:
      break;
    case FieldKind::inclusions: {
      const int count = std::max(4, nf * nf / (40 * unit * unit));
      for (int m = 0; m < count; ++m) {
        const int w = unit * draw.integer(1, 3), hgt = unit * draw.integer(1, 3);
        const int x0 = draw.integer(0, nf - 1), y0 = draw.integer(0, nf - 1);
        for (int iy = y0; iy < y0 + hgt; ++iy)
          for (int ix = x0; ix < x0 + w; ++ix) set(ix, iy);
      }
      break;
    }
    case FieldKind::channels: {
      // Long thin horizontal channels with occasional one-cell jogs, plus a
      // sprinkling of short inclusions.
      const int count = std::max(2, nf / 12);
      for (int m = 0; m < count; ++m) {
        const int width = unit * draw.integer(1, 2);
        const int start = static_cast<int>(draw.uniform() * 0.3 * nf);
        const int length = static_cast<int>((0.5 + 0.5 * draw.uniform()) * nf);
        int y = draw.integer(0, nf - 1);
        for (int ix = start; ix < std::min(nf, start + length); ++ix) {
          if (draw.uniform() < 0.04) y = std::clamp(y + (draw.uniform() < 0.5 ? -unit : unit), 0, nf - 1);
          for (int dy = 0; dy < width; ++dy) set(ix, y + dy);
        }
      }
      const int blobs = std::max(2, nf * nf / (300 * unit * unit));
      for (int m = 0; m < blobs; ++m) {
        const int x0 = draw.integer(0, nf - 1), y0 = draw.integer(0, nf - 1);
        const int w = unit * draw.integer(1, 2), hgt = unit * draw.integer(1, 2);
        for (int iy = y0; iy < y0 + hgt; ++iy)
          for (int ix = x0; ix < x0 + w; ++ix) set(ix, iy);
      }
      break;
    }
    case FieldKind::layered: {
      // Stratified bands of random thickness, each band broken into lenses.
      int iy = 0;
      while (iy < nf) {
        const int thick = unit * draw.integer(1, 3);
        const bool high = draw.uniform() < 0.35;
        if (high) {
          int ix = 0;
          while (ix < nf) {
            const int run = unit * draw.integer(4, 24);
            const int gap = unit * draw.integer(0, 3);
            for (int x = ix; x < std::min(nf, ix + run); ++x)
              for (int y = iy; y < std::min(nf, iy + thick); ++y) set(x, y);
            ix += run + gap;
          }
        }
        iy += thick;
      }
      break;
    }
  }
  return PermeabilityField(std::move(k), nf);
}

Eigen::VectorXd SourceField::integrals(const TwoLevelMesh& mesh) const {
  const double h = mesh.fine_size();
  return values_ * (h * h);
}

void check_compatibility(const TwoLevelMesh& mesh, const SourceField& f) {
  const double area = mesh.fine_size() * mesh.fine_size();
  const double total = f.values().sum() * area;
  const double scale = f.values().cwiseAbs().sum() * area;
  if (std::abs(total) > 1e-12 * scale) {
    std::ostringstream msg;
    msg << std::setprecision(17) << "incompatible source: integral of f is " << total
        << " but must vanish for zero boundary flux";
    throw InvalidArgument(msg.str());
  }
}

SourceField box_source(const TwoLevelMesh& mesh, const std::vector<SourceBox>& boxes,
                       bool validate) {
  Eigen::VectorXd f = Eigen::VectorXd::Zero(mesh.num_cells());
  for (const SourceBox& box : boxes) {
    if (box.x0 < 0.0 || box.y0 < 0.0 || box.x1 > 1.0 || box.y1 > 1.0 || box.x0 >= box.x1 ||
        box.y0 >= box.y1)
      throw InvalidArgument("source box must be a nonempty rectangle inside (0,1)^2");
    for (int c = 0; c < mesh.num_cells(); ++c) {
      const auto [x, y] = mesh.cell_center(c);
      if (x > box.x0 && x < box.x1 && y > box.y0 && y < box.y1) f[c] = box.value;
    }
  }
  SourceField out(std::move(f));
  if (validate) check_compatibility(mesh, out);
  return out;
}

WeightField compute_kappa_tilde(const PermeabilityField& kappa, const PartitionOfUnity& pou) {
  const TwoLevelMesh& mesh = pou.mesh();
  if (kappa.side() != mesh.fine_per_side())
    throw InvalidArgument("compute_kappa_tilde: field and mesh sizes differ");
  Eigen::VectorXd w(mesh.num_cells());
  for (int c = 0; c < mesh.num_cells(); ++c) {
    double s = 0.0;
    for (int j : pou.functions_on_cell(c)) {
      const auto g = pou.gradient_at_cell(j, c);
      s += g[0] * g[0] + g[1] * g[1];
    }
    w[c] = kappa[c] * s;
  }
  return WeightField(std::move(w));
}

}  // namespace cemflow
