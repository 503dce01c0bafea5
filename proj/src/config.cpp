#include "cemflow/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#define TOML_ENABLE_FORMATTERS 0
#include "toml.hpp"

#include "cemflow/error.hpp"

namespace cemflow {

namespace {

const char* source_name(FieldSpec::Source s) {
  switch (s) {
    case FieldSpec::Source::generator: return "generator";
    case FieldSpec::Source::raster: return "raster";
    case FieldSpec::Source::spe10: return "spe10";
  }
  return "?";
}

FieldSpec::Source parse_source(const std::string& name) {
  if (name == "generator") return FieldSpec::Source::generator;
  if (name == "raster") return FieldSpec::Source::raster;
  if (name == "spe10") return FieldSpec::Source::spe10;
  throw InvalidArgument("field.source: unknown value '" + name + "' (expected generator, raster or spe10)");
}

// Reads typed keys of one table and rejects any key it was not asked about.
class TableReader {
 public:
  TableReader(const toml::table* table, std::string prefix) : table_(table), prefix_(std::move(prefix)) {}

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!table_) return;
    const toml::node* node = table_->get(key);
    if (!node) return;
    const std::string name = prefix_ + key;
    if constexpr (std::is_same_v<T, bool>) {
      auto v = node->value_exact<bool>();
      if (!v) throw InvalidArgument(name + ": expected a boolean");
      out = *v;
    } else if constexpr (std::is_same_v<T, std::string>) {
      auto v = node->value_exact<std::string>();
      if (!v) throw InvalidArgument(name + ": expected a string");
      out = *v;
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!node->is_number()) throw InvalidArgument(name + ": expected a number");
      out = *node->value<double>();
    } else {
      auto v = node->value_exact<std::int64_t>();
      if (!v) throw InvalidArgument(name + ": expected an integer");
      if (*v < static_cast<std::int64_t>(std::numeric_limits<T>::min()) ||
          static_cast<std::uint64_t>(*v) > static_cast<std::uint64_t>(std::numeric_limits<T>::max()))
        throw InvalidArgument(name + ": integer out of range");
      out = static_cast<T>(*v);
    }
  }

  const toml::node* raw(const char* key) {
    seen_.insert(key);
    return table_ ? table_->get(key) : nullptr;
  }

  void finish() const {
    if (!table_) return;
    for (const auto& [key, node] : *table_)
      if (!seen_.count(std::string(key.str())))
        throw InvalidArgument("unknown key '" + prefix_ + std::string(key.str()) + "'");
  }

 private:
  const toml::table* table_;
  std::string prefix_;
  std::set<std::string> seen_;
};

const toml::table* subtable(const toml::table& root, const char* key) {
  const toml::node* node = root.get(key);
  if (!node) return nullptr;
  if (!node->is_table()) throw InvalidArgument(std::string(key) + ": expected a table");
  return node->as_table();
}

std::vector<SourceBox> parse_boxes(const toml::node* node) {
  const toml::array* list = node->as_array();
  if (!list) throw InvalidArgument("source.boxes: expected an array of [x0, y0, x1, y1, value]");
  std::vector<SourceBox> boxes;
  for (std::size_t k = 0; k < list->size(); ++k) {
    const toml::array* row = (*list)[k].as_array();
    const std::string name = "source.boxes[" + std::to_string(k) + "]";
    if (!row || row->size() != 5) throw InvalidArgument(name + ": expected [x0, y0, x1, y1, value]");
    double v[5];
    for (std::size_t t = 0; t < 5; ++t) {
      if (!(*row)[t].is_number()) throw InvalidArgument(name + ": expected numbers");
      v[t] = *(*row)[t].value<double>();
    }
    boxes.push_back({v[0], v[1], v[2], v[3], v[4]});
  }
  return boxes;
}

std::string number(double x) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, x);
  std::string s(buf, end);
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

std::string quoted(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  return out + "\"";
}

}  // namespace

ExperimentConfig parse_config(const std::string& text, const std::string& origin) {
  toml::table root;
  try {
    root = toml::parse(text, origin);
  } catch (const toml::parse_error& e) {
    throw ParseError(origin, static_cast<int>(e.source().begin.line), std::string(e.description()));
  }

  ExperimentConfig c;
  TableReader top(&root, "");
  top.get("name", c.name);
  std::int64_t seed = static_cast<std::int64_t>(c.seed);
  top.get("seed", seed);
  if (seed < 0) throw InvalidArgument("seed: must be nonnegative");
  c.seed = static_cast<std::uint64_t>(seed);

  TableReader mesh(subtable(root, "mesh"), "mesh.");
  mesh.get("coarse", c.coarse);
  mesh.get("fine", c.fine);
  std::string mass = to_string(c.mass);
  mesh.get("mass", mass);
  c.mass = parse_mass_mode(mass);
  mesh.finish();

  TableReader field(subtable(root, "field"), "field.");
  std::string source = source_name(c.field.source), kind = to_string(c.field.kind);
  field.get("source", source);
  field.get("kind", kind);
  c.field.source = parse_source(source);
  c.field.kind = parse_field_kind(kind);
  field.get("contrast", c.field.contrast);
  field.get("path", c.field.path);
  field.get("rows", c.field.rows);
  field.get("cols", c.field.cols);
  field.get("layer", c.field.layer);
  field.finish();

  TableReader src(subtable(root, "source"), "source.");
  if (const toml::node* boxes = src.raw("boxes")) c.boxes = parse_boxes(boxes);
  src.finish();

  TableReader offline(subtable(root, "offline"), "offline.");
  offline.get("modes", c.modes);
  offline.get("layers", c.offline_layers);
  offline.finish();

  TableReader online(subtable(root, "online"), "online.");
  online.get("layers", c.online_layers);
  online.get("theta", c.theta);
  online.get("tol", c.tol);
  online.get("max_iterations", c.max_iterations);
  online.get("max_dof", c.max_dof);
  online.get("enrich_pressure", c.enrich_pressure);
  online.get("recover_pressure", c.recover_pressure);
  online.get("pressure_accept", c.pressure_accept);
  online.finish();

  TableReader pou(subtable(root, "pou"), "pou.");
  std::string weight = to_string(c.weight_pou), indicator = to_string(c.indicator_pou);
  pou.get("weight", weight);
  pou.get("indicator", indicator);
  c.weight_pou = parse_pou_mode(weight);
  c.indicator_pou = parse_pou_mode(indicator);
  pou.finish();

  TableReader output(subtable(root, "output"), "output.");
  output.get("dir", c.output_dir);
  output.get("rasters", c.write_rasters);
  output.finish();

  TableReader fine(subtable(root, "fine"), "fine.");
  fine.get("manufactured", c.manufactured);
  fine.finish();

  top.raw("mesh");
  top.raw("field");
  top.raw("source");
  top.raw("offline");
  top.raw("online");
  top.raw("pou");
  top.raw("output");
  top.raw("fine");
  top.finish();

  validate(c);
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path, 0, "cannot open config file");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path);
}

void validate(const ExperimentConfig& c) {
  auto fail = [](const std::string& what) { throw InvalidArgument(what); };
  if (c.coarse < 1) fail("mesh.coarse: must be at least 1");
  if (c.fine < 1) fail("mesh.fine: must be at least 1");
  if (c.modes < 1 || c.modes > c.fine * c.fine) fail("offline.modes: must lie in [1, fine^2]");
  if (c.offline_layers < 0) fail("offline.layers: must be nonnegative");
  if (c.online_layers < 0) fail("online.layers: must be nonnegative");
  if (!(c.theta > 0.0 && c.theta <= 1.0)) fail("online.theta: must lie in (0, 1]");
  if (!(c.tol >= 0.0)) fail("online.tol: must be nonnegative");
  if (c.max_iterations < 0) fail("online.max_iterations: must be nonnegative");
  if (c.max_dof < 0) fail("online.max_dof: must be nonnegative");
  if (!(c.pressure_accept > 0.0 && c.pressure_accept < 1.0)) fail("online.pressure_accept: must lie in (0, 1)");
  if (c.field.source == FieldSpec::Source::generator && !(c.field.contrast >= 1.0))
    fail("field.contrast: must be at least 1");
  if (c.field.source != FieldSpec::Source::generator && c.field.path.empty()) fail("field.path: required");
  if (c.field.source == FieldSpec::Source::raster && (c.field.rows < 1 || c.field.cols < 1))
    fail("field.rows, field.cols: required for raster input");
  if (c.field.source == FieldSpec::Source::spe10 && (c.field.layer < 0 || c.field.layer >= 85))
    fail("field.layer: must lie in [0, 85)");
  if (c.indicator_pou != PouMode::all_nodes && c.coarse < 2)
    fail("pou.indicator: interior modes need mesh.coarse >= 2");
  for (std::size_t k = 0; k < c.boxes.size(); ++k) {
    const SourceBox& b = c.boxes[k];
    if (!(b.x0 >= 0.0 && b.y0 >= 0.0 && b.x1 <= 1.0 && b.y1 <= 1.0 && b.x0 < b.x1 && b.y0 < b.y1))
      fail("source.boxes[" + std::to_string(k) + "]: must be a nonempty rectangle inside the unit square");
    if (!std::isfinite(b.value)) fail("source.boxes[" + std::to_string(k) + "]: non-finite value");
  }
  if (c.output_dir.empty()) fail("output.dir: must not be empty");
  if (c.seed > static_cast<std::uint64_t>(std::numeric_limits<std::int64_t>::max()))
    fail("seed: must fit a signed 64-bit integer");
}

std::string to_toml(const ExperimentConfig& c) {
  std::ostringstream o;
  o << "name = " << quoted(c.name) << "\n";
  o << "seed = " << c.seed << "\n\n";
  o << "[mesh]\ncoarse = " << c.coarse << "\nfine = " << c.fine << "\nmass = " << quoted(to_string(c.mass))
    << "\n\n";
  o << "[field]\nsource = " << quoted(source_name(c.field.source)) << "\nkind = " << quoted(to_string(c.field.kind))
    << "\ncontrast = " << number(c.field.contrast) << "\npath = " << quoted(c.field.path)
    << "\nrows = " << c.field.rows << "\ncols = " << c.field.cols << "\nlayer = " << c.field.layer << "\n\n";
  o << "[source]\nboxes = [";
  for (std::size_t k = 0; k < c.boxes.size(); ++k) {
    const SourceBox& b = c.boxes[k];
    o << (k ? ", " : "") << "[" << number(b.x0) << ", " << number(b.y0) << ", " << number(b.x1) << ", "
      << number(b.y1) << ", " << number(b.value) << "]";
  }
  o << "]\n\n";
  o << "[offline]\nmodes = " << c.modes << "\nlayers = " << c.offline_layers << "\n\n";
  o << "[online]\nlayers = " << c.online_layers << "\ntheta = " << number(c.theta) << "\ntol = " << number(c.tol)
    << "\nmax_iterations = " << c.max_iterations << "\nmax_dof = " << c.max_dof
    << "\nenrich_pressure = " << (c.enrich_pressure ? "true" : "false")
    << "\nrecover_pressure = " << (c.recover_pressure ? "true" : "false")
    << "\npressure_accept = " << number(c.pressure_accept) << "\n\n";
  o << "[pou]\nweight = " << quoted(to_string(c.weight_pou)) << "\nindicator = " << quoted(to_string(c.indicator_pou))
    << "\n\n";
  o << "[output]\ndir = " << quoted(c.output_dir) << "\nrasters = " << (c.write_rasters ? "true" : "false") << "\n\n";
  o << "[fine]\nmanufactured = " << (c.manufactured ? "true" : "false") << "\n";
  return o.str();
}

bool operator==(const FieldSpec& a, const FieldSpec& b) {
  return a.source == b.source && a.kind == b.kind && a.contrast == b.contrast && a.path == b.path &&
         a.rows == b.rows && a.cols == b.cols && a.layer == b.layer;
}

bool operator==(const ExperimentConfig& a, const ExperimentConfig& b) {
  auto same_boxes = [&] {
    if (a.boxes.size() != b.boxes.size()) return false;
    for (std::size_t k = 0; k < a.boxes.size(); ++k) {
      const SourceBox &x = a.boxes[k], &y = b.boxes[k];
      if (x.x0 != y.x0 || x.y0 != y.y0 || x.x1 != y.x1 || x.y1 != y.y1 || x.value != y.value) return false;
    }
    return true;
  };
  return a.name == b.name && a.seed == b.seed && a.coarse == b.coarse && a.fine == b.fine && a.mass == b.mass &&
         a.field == b.field && same_boxes() && a.modes == b.modes && a.offline_layers == b.offline_layers &&
         a.online_layers == b.online_layers && a.theta == b.theta && a.tol == b.tol &&
         a.max_iterations == b.max_iterations && a.max_dof == b.max_dof && a.enrich_pressure == b.enrich_pressure &&
         a.recover_pressure == b.recover_pressure && a.pressure_accept == b.pressure_accept &&
         a.weight_pou == b.weight_pou && a.indicator_pou == b.indicator_pou && a.output_dir == b.output_dir &&
         a.write_rasters == b.write_rasters && a.manufactured == b.manufactured;
}

}  // namespace cemflow
