#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cemflow/field.hpp"
#include "cemflow/fine_fem.hpp"
#include "cemflow/pou.hpp"

namespace cemflow {

/// Where the permeability comes from.
struct FieldSpec {
  enum class Source { generator, raster, spe10 };
  Source source = Source::generator;
  FieldKind kind = FieldKind::channels;  // generator
  double contrast = 1e4;                 // generator
  std::string path;                      // raster, spe10
  int rows = 0, cols = 0;                // raster
  int layer = 0;                         // spe10
};

/// One experiment, fully resolved. Every field has a default so a config
/// file only needs to state what differs.
struct ExperimentConfig {
  std::string name = "run";
  std::uint64_t seed = 1;

  int coarse = 8;  // T
  int fine = 12;   // n
  MassMode mass = MassMode::exact;

  FieldSpec field;
  std::vector<SourceBox> boxes{{0.0, 0.0, 0.125, 0.125, 1.0}, {0.875, 0.875, 1.0, 1.0, -1.0}};

  int modes = 3;           // J
  int offline_layers = 2;  // l

  int online_layers = 2;  // l-tilde
  double theta = 1.0;
  double tol = 1e-12;
  int max_iterations = 4;
  int max_dof = 0;
  bool enrich_pressure = true;
  bool recover_pressure = true;
  double pressure_accept = 1e-3;

  PouMode weight_pou = PouMode::all_nodes;           // kappa-tilde
  PouMode indicator_pou = PouMode::interior_folded;  // residual localisation

  std::string output_dir = "out";
  bool write_rasters = true;

  // fine-solve: kappa = 1, p = cos(pi x) cos(pi y), compared at n and 2n.
  bool manufactured = false;
};

/// Parses TOML text. `origin` names the source in error messages.
/// Throws ParseError on malformed TOML and InvalidArgument on bad values.
ExperimentConfig parse_config(const std::string& text, const std::string& origin = "<config>");
ExperimentConfig load_config(const std::string& path);

/// Checks ranges and cross-field consistency; throws InvalidArgument.
void validate(const ExperimentConfig& config);

/// Complete TOML form; parse_config(to_toml(c)) == c.
std::string to_toml(const ExperimentConfig& config);

bool operator==(const FieldSpec& a, const FieldSpec& b);
bool operator==(const ExperimentConfig& a, const ExperimentConfig& b);

}  // namespace cemflow
