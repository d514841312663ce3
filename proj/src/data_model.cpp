#include "pinv/data_model.hpp"

#include <cmath>
#include <numbers>
#include <sstream>
#include <unordered_set>

#include "json.hpp"

#include "pinv/error.hpp"
#include "pinv/text_io.hpp"

namespace pinv {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

[[noreturn]] void fail_at(const std::filesystem::path& path, std::size_t line, std::string_view column,
                          const std::string& msg) {
  std::ostringstream ss;
  ss << path.string() << ":" << line << ": column '" << column << "': " << msg;
  throw ValidationError(ss.str());
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> lines;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

bool is_blank(std::string_view s) { return s.find_first_not_of(" \t") == std::string_view::npos; }

}  // namespace

Vec3 latlon_to_unit(double lat_deg, double lon_deg) {
  if (!std::isfinite(lat_deg) || !std::isfinite(lon_deg)) {
    throw ValidationError("latitude/longitude must be finite");
  }
  if (lat_deg < -90.0 || lat_deg > 90.0) {
    throw ValidationError("latitude out of range [-90, 90]: " + format_double(lat_deg));
  }
  const double lat = lat_deg * kDeg;
  const double lon = lon_deg * kDeg;
  // Exact poles so the pole maps to (0, 0, 1) without cos rounding residue.
  const double cl = (lat_deg == 90.0 || lat_deg == -90.0) ? 0.0 : std::cos(lat);
  return {cl * std::cos(lon), cl * std::sin(lon), std::sin(lat)};
}

std::pair<double, double> unit_to_latlon(const Vec3& d) {
  const double norm = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
  const double x = d[0] / norm, y = d[1] / norm, z = d[2] / norm;
  const double lat = std::atan2(z, std::hypot(x, y)) / kDeg;
  double lon = std::atan2(y, x) / kDeg;
  if (lon < 0.0) lon += 360.0;
  if (lon >= 360.0) lon -= 360.0;
  return {lat, lon};
}

SpatialLocation SpatialLocation::from_latlon(double lat_deg, double lon_deg) {
  return SpatialLocation{latlon_to_unit(lat_deg, lon_deg)};
}

SpatialLocation SpatialLocation::from_vector(const Vec3& v) {
  const double norm = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
  if (!std::isfinite(norm) || norm == 0.0) throw ValidationError("direction vector must be finite and non-zero");
  return SpatialLocation{{v[0] / norm, v[1] / norm, v[2] / norm}};
}

// ---------------------------------------------------------------------------
// FieldDataset

double FieldDataset::observed_rate(std::size_t i) const {
  if (!values.empty()) return values[i];
  return static_cast<double>(counts[i]) / exposures[i];
}

void FieldDataset::validate() const {
  const std::size_t n = locations.size();
  if (n == 0) throw ValidationError("field dataset is empty");
  if (counts.size() != n || exposures.size() != n || backgrounds.size() != n) {
    throw ValidationError("field dataset columns have different lengths");
  }
  if (!values.empty() && values.size() != n) throw ValidationError("field values length mismatch");
  for (std::size_t i = 0; i < n; ++i) {
    if (counts[i] < 0) throw ValidationError("negative count at row " + std::to_string(i));
    if (!(exposures[i] > 0.0) || !std::isfinite(exposures[i])) {
      throw ValidationError("exposure must be > 0 at row " + std::to_string(i));
    }
    if (!(backgrounds[i] >= 0.0) || !std::isfinite(backgrounds[i])) {
      throw ValidationError("background must be >= 0 at row " + std::to_string(i));
    }
  }
}

FieldDataset FieldDataset::subset(std::span<const std::size_t> idx) const {
  FieldDataset out;
  out.label = label;
  for (auto i : idx) {
    out.locations.push_back(locations.at(i));
    out.counts.push_back(counts.at(i));
    out.exposures.push_back(exposures.at(i));
    out.backgrounds.push_back(backgrounds.at(i));
    if (!values.empty()) out.values.push_back(values.at(i));
  }
  return out;
}

// ---------------------------------------------------------------------------
// ParameterDomain

void ParameterDomain::validate() const {
  if (names.empty()) throw ValidationError("parameter domain must have at least one parameter");
  if (lower.size() != names.size() || upper.size() != names.size()) {
    throw ValidationError("parameter domain lengths differ");
  }
  for (std::size_t k = 0; k < names.size(); ++k) {
    if (!std::isfinite(lower[k]) || !std::isfinite(upper[k]) || !(lower[k] < upper[k])) {
      throw ValidationError("parameter '" + names[k] + "' needs finite lower < upper");
    }
  }
}

bool ParameterDomain::contains(std::span<const double> u) const {
  if (u.size() != dim()) return false;
  for (std::size_t k = 0; k < u.size(); ++k) {
    if (!(u[k] >= lower[k] && u[k] <= upper[k])) return false;
  }
  return true;
}

std::vector<double> ParameterDomain::normalize(std::span<const double> raw) const {
  std::vector<double> out(raw.size());
  for (std::size_t k = 0; k < raw.size(); ++k) out[k] = normalize(k, raw[k]);
  return out;
}

std::vector<double> ParameterDomain::denormalize(std::span<const double> unit) const {
  std::vector<double> out(unit.size());
  for (std::size_t k = 0; k < unit.size(); ++k) out[k] = denormalize(k, unit[k]);
  return out;
}

// ---------------------------------------------------------------------------
// SimulatorCorpus

void SimulatorCorpus::validate() const {
  domain.validate();
  if (designs.rows() == 0) throw ValidationError("corpus has no runs");
  if (static_cast<std::size_t>(designs.cols()) != domain.dim()) {
    throw ValidationError("design width does not match parameter domain");
  }
  if (grid.empty()) throw ValidationError("corpus grid is empty");
  if (rates.rows() != designs.rows() || static_cast<std::size_t>(rates.cols()) != grid.size()) {
    throw ValidationError("rate matrix shape does not match runs x grid");
  }
  for (Eigen::Index r = 0; r < designs.rows(); ++r) {
    for (Eigen::Index k = 0; k < designs.cols(); ++k) {
      const double v = designs(r, k);
      if (!(v >= domain.lower[k] && v <= domain.upper[k])) {
        throw ValidationError("design row " + std::to_string(r) + " outside domain for '" + domain.names[k] + "'");
      }
    }
  }
  if (!rates.allFinite() || (rates.array() < 0.0).any()) {
    throw ValidationError("simulator rates must be finite and >= 0");
  }
}

SimulatorCorpus SimulatorCorpus::select_runs(std::span<const std::size_t> runs) const {
  SimulatorCorpus out;
  out.domain = domain;
  out.grid = grid;
  out.designs.resize(static_cast<Eigen::Index>(runs.size()), designs.cols());
  out.rates.resize(static_cast<Eigen::Index>(runs.size()), rates.cols());
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(runs[i]);
    if (r >= designs.rows()) throw ValidationError("run index out of range");
    out.designs.row(static_cast<Eigen::Index>(i)) = designs.row(r);
    out.rates.row(static_cast<Eigen::Index>(i)) = rates.row(r);
  }
  return out;
}

SimulatorCorpus SimulatorCorpus::without_runs(std::span<const std::size_t> runs) const {
  std::unordered_set<std::size_t> drop(runs.begin(), runs.end());
  std::vector<std::size_t> keep;
  for (std::size_t r = 0; r < n_runs(); ++r) {
    if (!drop.contains(r)) keep.push_back(r);
  }
  return select_runs(keep);
}

// ---------------------------------------------------------------------------
// Stacking

std::vector<ColumnMap> input_normalization(const ParameterDomain& domain) {
  std::vector<ColumnMap> maps(kSpatialDims, ColumnMap{-1.0, 1.0});
  for (std::size_t k = 0; k < domain.dim(); ++k) maps.push_back({domain.lower[k], domain.upper[k]});
  return maps;
}

std::vector<double> StackedDesign::normalize_input(const Vec3& direction, std::span<const double> u_raw) const {
  std::vector<double> row(kSpatialDims + u_raw.size());
  for (std::size_t k = 0; k < kSpatialDims; ++k) row[k] = normalization[k].apply(direction[k]);
  for (std::size_t k = 0; k < u_raw.size(); ++k) row[kSpatialDims + k] = normalization[kSpatialDims + k].apply(u_raw[k]);
  return row;
}

StackedDesign stack(const SimulatorCorpus& corpus) {
  corpus.validate();
  const std::size_t runs = corpus.n_runs(), ng = corpus.n_grid(), p = corpus.domain.dim();
  StackedDesign out;
  out.n_runs = runs;
  out.n_grid = ng;
  out.normalization = input_normalization(corpus.domain);
  out.inputs.resize(static_cast<Eigen::Index>(runs * ng), static_cast<Eigen::Index>(kSpatialDims + p));
  out.responses.resize(static_cast<Eigen::Index>(runs * ng));
  for (std::size_t r = 0; r < runs; ++r) {
    for (std::size_t g = 0; g < ng; ++g) {
      const auto row = static_cast<Eigen::Index>(r * ng + g);
      for (std::size_t k = 0; k < kSpatialDims; ++k) {
        out.inputs(row, static_cast<Eigen::Index>(k)) = out.normalization[k].apply(corpus.grid[g].direction[k]);
      }
      for (std::size_t k = 0; k < p; ++k) {
        out.inputs(row, static_cast<Eigen::Index>(kSpatialDims + k)) =
            out.normalization[kSpatialDims + k].apply(corpus.designs(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)));
      }
      out.responses(row) = corpus.rates(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(g));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Field CSV

FieldDataset load_field_csv(const std::filesystem::path& path) {
  const auto lines = lines_of(read_text_file(path));
  if (lines.empty()) throw ValidationError(path.string() + ": empty file");
  const auto header = split_csv_line(lines[0]);
  const std::vector<std::string> latlon{"lat_deg", "lon_deg", "exposure_s", "count", "background_rate"};
  const std::vector<std::string> cart{"ux", "uy", "uz", "exposure_s", "count", "background_rate"};
  auto matches = [&](const std::vector<std::string>& expect) {
    if (header.size() != expect.size()) return false;
    for (std::size_t i = 0; i < expect.size(); ++i) {
      if (header[i] != expect[i]) return false;
    }
    return true;
  };
  bool use_latlon = false;
  if (matches(latlon)) {
    use_latlon = true;
  } else if (!matches(cart)) {
    throw ValidationError(path.string() + ":1: header must be '" + "lat_deg,lon_deg,exposure_s,count,background_rate" +
                          "' or 'ux,uy,uz,exposure_s,count,background_rate'");
  }
  const auto& names = use_latlon ? latlon : cart;

  FieldDataset out;
  for (std::size_t ln = 1; ln < lines.size(); ++ln) {
    if (is_blank(lines[ln])) continue;
    const auto fields = split_csv_line(lines[ln]);
    const std::size_t line_no = ln + 1;
    if (fields.size() != names.size()) {
      fail_at(path, line_no, "*", "expected " + std::to_string(names.size()) + " fields, got " + std::to_string(fields.size()));
    }
    std::vector<double> nums(names.size());
    std::int64_t count = 0;
    for (std::size_t c = 0; c < names.size(); ++c) {
      if (names[c] == "count") {
        if (!parse_int64(fields[c], count)) fail_at(path, line_no, names[c], "not an integer: '" + std::string(fields[c]) + "'");
      } else if (!parse_double(fields[c], nums[c])) {
        fail_at(path, line_no, names[c], "not a number: '" + std::string(fields[c]) + "'");
      }
    }
    const std::size_t off = use_latlon ? 2 : 3;
    SpatialLocation loc;
    try {
      loc = use_latlon ? SpatialLocation::from_latlon(nums[0], nums[1]) : SpatialLocation::from_vector({nums[0], nums[1], nums[2]});
    } catch (const ValidationError& e) {
      fail_at(path, line_no, names[0], e.what());
    }
    const double exposure = nums[off];
    const double background = nums[off + 2];
    if (!(exposure > 0.0) || !std::isfinite(exposure)) fail_at(path, line_no, "exposure_s", "exposure must be > 0");
    if (count < 0) fail_at(path, line_no, "count", "count must be >= 0");
    if (!(background >= 0.0) || !std::isfinite(background)) fail_at(path, line_no, "background_rate", "background must be >= 0");
    out.locations.push_back(loc);
    out.exposures.push_back(exposure);
    out.counts.push_back(count);
    out.backgrounds.push_back(background);
  }
  out.validate();
  return out;
}

void write_field_csv(const FieldDataset& field, const std::filesystem::path& path) {
  field.validate();
  std::ostringstream ss;
  ss << "ux,uy,uz,exposure_s,count,background_rate\n";
  for (std::size_t i = 0; i < field.size(); ++i) {
    const auto& d = field.locations[i].direction;
    ss << format_double(d[0]) << ',' << format_double(d[1]) << ',' << format_double(d[2]) << ','
       << format_double(field.exposures[i]) << ',' << field.counts[i] << ',' << format_double(field.backgrounds[i]) << '\n';
  }
  write_text_file(path, ss.str());
}

// ---------------------------------------------------------------------------
// Simulator CSV

SimulatorCorpus load_simulator_csv(const std::filesystem::path& path, const ParameterDomain& domain) {
  domain.validate();
  const std::size_t p = domain.dim();
  const auto lines = lines_of(read_text_file(path));
  if (lines.empty()) throw ValidationError(path.string() + ": empty file");
  const auto header = split_csv_line(lines[0]);
  // run_id, p parameter columns, then lat/lon (2) or ux/uy/uz (3), then rate.
  bool use_latlon;
  if (header.size() == p + 4 && header[p + 1] == "lat_deg" && header[p + 2] == "lon_deg") {
    use_latlon = true;
  } else if (header.size() == p + 5 && header[p + 1] == "ux" && header[p + 2] == "uy" && header[p + 3] == "uz") {
    use_latlon = false;
  } else {
    throw ValidationError(path.string() + ":1: header must be 'run_id,<" + std::to_string(p) +
                          " parameters>,lat_deg,lon_deg,rate' or the ux,uy,uz variant");
  }
  if (header.front() != "run_id" || header.back() != "rate") {
    throw ValidationError(path.string() + ":1: header must start with run_id and end with rate");
  }
  const std::size_t width = header.size();

  struct Run {
    std::string id;
    std::vector<double> u;
    std::vector<SpatialLocation> grid;
    std::vector<double> rates;
    std::size_t first_line;
  };
  std::vector<Run> runs;
  std::unordered_set<std::string> seen;

  for (std::size_t ln = 1; ln < lines.size(); ++ln) {
    if (is_blank(lines[ln])) continue;
    const std::size_t line_no = ln + 1;
    const auto fields = split_csv_line(lines[ln]);
    if (fields.size() != width) {
      fail_at(path, line_no, "*", "expected " + std::to_string(width) + " fields, got " + std::to_string(fields.size()));
    }
    std::vector<double> nums(width);
    for (std::size_t c = 1; c < width; ++c) {
      if (!parse_double(fields[c], nums[c])) fail_at(path, line_no, header[c], "not a number: '" + std::string(fields[c]) + "'");
    }
    const std::string id(fields[0]);
    if (id.empty()) fail_at(path, line_no, "run_id", "empty run id");
    if (runs.empty() || runs.back().id != id) {
      if (seen.contains(id)) fail_at(path, line_no, "run_id", "run '" + id + "' appears in more than one group");
      seen.insert(id);
      runs.push_back(Run{id, std::vector<double>(nums.begin() + 1, nums.begin() + 1 + static_cast<std::ptrdiff_t>(p)), {}, {}, line_no});
      if (!domain.contains(runs.back().u)) fail_at(path, line_no, header[1], "design row outside parameter domain");
    } else {
      for (std::size_t k = 0; k < p; ++k) {
        if (nums[1 + k] != runs.back().u[k]) fail_at(path, line_no, header[1 + k], "parameter value changes within run '" + id + "'");
      }
    }
    SpatialLocation loc;
    try {
      loc = use_latlon ? SpatialLocation::from_latlon(nums[p + 1], nums[p + 2])
                       : SpatialLocation::from_vector({nums[p + 1], nums[p + 2], nums[p + 3]});
    } catch (const ValidationError& e) {
      fail_at(path, line_no, header[p + 1], e.what());
    }
    const double rate = nums[width - 1];
    if (!std::isfinite(rate) || rate < 0.0) fail_at(path, line_no, "rate", "rate must be finite and >= 0");
    runs.back().grid.push_back(loc);
    runs.back().rates.push_back(rate);
  }
  if (runs.empty()) throw ValidationError(path.string() + ": no simulator rows");

  const auto& grid0 = runs.front().grid;
  for (const auto& run : runs) {
    if (run.grid.size() != grid0.size()) {
      throw ValidationError(path.string() + ":" + std::to_string(run.first_line) + ": run '" + run.id +
                            "' has a different grid size than the first run");
    }
    for (std::size_t g = 0; g < grid0.size(); ++g) {
      for (std::size_t k = 0; k < 3; ++k) {
        if (std::abs(run.grid[g].direction[k] - grid0[g].direction[k]) > 1e-9) {
          throw ValidationError(path.string() + ": run '" + run.id + "' grid point " + std::to_string(g) +
                                " differs from the first run's grid");
        }
      }
    }
  }

  SimulatorCorpus corpus;
  corpus.domain = domain;
  corpus.grid = grid0;
  corpus.designs.resize(static_cast<Eigen::Index>(runs.size()), static_cast<Eigen::Index>(p));
  corpus.rates.resize(static_cast<Eigen::Index>(runs.size()), static_cast<Eigen::Index>(grid0.size()));
  for (std::size_t r = 0; r < runs.size(); ++r) {
    for (std::size_t k = 0; k < p; ++k) corpus.designs(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) = runs[r].u[k];
    for (std::size_t g = 0; g < grid0.size(); ++g) {
      corpus.rates(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(g)) = runs[r].rates[g];
    }
  }
  corpus.validate();
  return corpus;
}

void write_simulator_csv(const SimulatorCorpus& corpus, const std::filesystem::path& path) {
  corpus.validate();
  std::ostringstream ss;
  ss << "run_id";
  for (const auto& n : corpus.domain.names) ss << ',' << n;
  ss << ",ux,uy,uz,rate\n";
  for (std::size_t r = 0; r < corpus.n_runs(); ++r) {
    std::string prefix = "run" + std::to_string(r);
    for (std::size_t k = 0; k < corpus.domain.dim(); ++k) {
      prefix += ',' + format_double(corpus.designs(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)));
    }
    for (std::size_t g = 0; g < corpus.n_grid(); ++g) {
      const auto& d = corpus.grid[g].direction;
      ss << prefix << ',' << format_double(d[0]) << ',' << format_double(d[1]) << ',' << format_double(d[2]) << ','
         << format_double(corpus.rates(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(g))) << '\n';
    }
  }
  write_text_file(path, ss.str());
}

// ---------------------------------------------------------------------------
// Domain file: {"parameters": [{"name": ..., "lower": ..., "upper": ...}, ...]}

ParameterDomain load_domain(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  ParameterDomain d;
  try {
    for (const auto& p : j.at("parameters")) {
      d.names.push_back(p.at("name").get<std::string>());
      d.lower.push_back(p.at("lower").get<double>());
      d.upper.push_back(p.at("upper").get<double>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  d.validate();
  return d;
}

void write_domain(const ParameterDomain& domain, const std::filesystem::path& path) {
  domain.validate();
  nlohmann::json params = nlohmann::json::array();
  for (std::size_t k = 0; k < domain.dim(); ++k) {
    params.push_back({{"name", domain.names[k]}, {"lower", domain.lower[k]}, {"upper", domain.upper[k]}});
  }
  write_text_file(path, nlohmann::json{{"parameters", params}}.dump(2) + "\n");
}

}  // namespace pinv
