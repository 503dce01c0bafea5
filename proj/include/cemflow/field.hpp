#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

#include "cemflow/mesh.hpp"

namespace cemflow {

class PartitionOfUnity;

/// Row-major grid of values; row 0 is the lowest y.
struct Raster {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  double at(int row, int col) const { return data[static_cast<std::size_t>(row) * cols + col]; }
};

/// Reads `rows * cols` whitespace-separated numbers.
Raster read_raster(const std::string& path, int rows, int cols);
/// One line per row, full round-trip precision.
void write_raster(const std::string& path, const Raster& raster);
/// Cell field of a square fine grid as a raster (no copy of semantics).
Raster cell_raster(const TwoLevelMesh& mesh, const Eigen::VectorXd& values);
/// Nearest-cell resampling to a rows x cols grid; the identity when sizes match.
Raster resample_nearest(const Raster& src, int rows, int cols);

/// Piecewise constant permeability, one positive value per fine cell.
class PermeabilityField {
 public:
  /// Throws InvalidArgument naming the first nonpositive or non-finite cell.
  explicit PermeabilityField(Eigen::VectorXd values, int side);

  const Eigen::VectorXd& values() const { return values_; }
  double operator[](int c) const { return values_[c]; }
  int side() const { return side_; }
  double min() const { return min_; }
  double max() const { return max_; }
  PermeabilityField scaled(double factor) const;

 private:
  Eigen::VectorXd values_;
  int side_;
  double min_ = 0.0, max_ = 0.0;
};

PermeabilityField load_permeability(const std::string& path, int rows, int cols,
                                    const TwoLevelMesh& mesh);
PermeabilityField permeability_from_raster(const Raster& raster, const TwoLevelMesh& mesh);

/// Reads one horizontal layer of the x-permeability of the SPE10 model 2
/// data set (60 x 220 x 85 cells, x fastest) and resamples it to the fine grid.
PermeabilityField load_spe10(const std::string& path, int layer, const TwoLevelMesh& mesh);

enum class FieldKind { uniform, inclusions, channels, layered };

FieldKind parse_field_kind(const std::string& name);
const char* to_string(FieldKind kind);

/// Synthetic two-valued field: background 1, features equal to `contrast`.
/// Deterministic in `seed` across platforms.
PermeabilityField gen_field(FieldKind kind, double contrast, std::uint64_t seed,
                            const TwoLevelMesh& mesh);

struct SourceBox {
  double x0, y0, x1, y1;
  double value;
};

/// Cellwise source density f_c.
class SourceField {
 public:
  explicit SourceField(Eigen::VectorXd values) : values_(std::move(values)) {}
  const Eigen::VectorXd& values() const { return values_; }
  /// Cell integrals f_c h^2.
  Eigen::VectorXd integrals(const TwoLevelMesh& mesh) const;

 private:
  Eigen::VectorXd values_;
};

/// Throws InvalidArgument reporting the integral unless
/// |sum f h^2| <= 1e-12 sum |f| h^2.
void check_compatibility(const TwoLevelMesh& mesh, const SourceField& f);

/// Assigns cells by cell-centre membership (later boxes win on overlap).
SourceField box_source(const TwoLevelMesh& mesh, const std::vector<SourceBox>& boxes,
                       bool validate = true);

/// kappa-tilde = kappa * sum_j |grad chi_j|^2 evaluated at cell centres.
class WeightField {
 public:
  explicit WeightField(Eigen::VectorXd values) : values_(std::move(values)) {}
  const Eigen::VectorXd& values() const { return values_; }
  double operator[](int c) const { return values_[c]; }

 private:
  Eigen::VectorXd values_;
};

WeightField compute_kappa_tilde(const PermeabilityField& kappa, const PartitionOfUnity& pou);

}  // namespace cemflow
