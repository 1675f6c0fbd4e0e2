#pragma once

// Per-country covariates: yearly series averaged over a window, static
// indicators, the region membership file and the alias table that maps
// covariate-file names onto boundary codes.

#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "geoscale/common.hpp"

namespace geoscale {

class CovariateError : public Error {
 public:
  using Error::Error;
};

/// A header row plus data rows of a delimited file.
struct DelimitedTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  /// 1-based source line of each row.
  std::vector<std::size_t> line_numbers;
  std::string source = "<memory>";

  std::optional<std::size_t> column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    return std::nullopt;
  }

  std::size_t require_column(std::string_view name) const {
    if (auto c = column(name)) return *c;
    throw CovariateError(source + ": missing column '" + std::string(name) + "'");
  }

  std::string where(std::size_t row) const { return source + ":" + std::to_string(line_numbers.at(row)); }
};

namespace detail {

inline std::string unquote(std::string_view s) {
  s = trim(s);
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return std::string(s);
}

}  // namespace detail

inline DelimitedTable read_table(std::istream& in, char delimiter = '\t', std::string source = "<memory>") {
  DelimitedTable t;
  t.source = std::move(source);
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  std::vector<std::string_view> parts;
  while (std::getline(in, line)) {
    ++line_no;
    const auto view = detail::strip_cr(line);
    if (detail::trim(view).empty()) continue;
    detail::split(view, delimiter, parts);
    std::vector<std::string> cells;
    cells.reserve(parts.size());
    for (auto p : parts) cells.push_back(detail::unquote(p));
    if (!have_header) {
      t.header = std::move(cells);
      have_header = true;
    } else {
      cells.resize(std::max(cells.size(), t.header.size()));
      t.rows.push_back(std::move(cells));
      t.line_numbers.push_back(line_no);
    }
  }
  if (in.bad()) throw CovariateError(t.source + ": read failure");
  return t;
}

inline DelimitedTable read_table_file(const std::string& path, char delimiter = '\t') {
  std::ifstream in(path);
  if (!in) throw CovariateError("cannot open " + path);
  return read_table(in, delimiter, path);
}

/// Mean of the values in [from, to] per key, from a wide table with one
/// column per year. Blank and ".." cells are missing; keys without any
/// value in range are absent from the result. Repeated rows merge per year
/// and must agree where they overlap.
inline std::map<std::string, double> load_yearly_series(const DelimitedTable& table, std::string_view key_column,
                                                        int from = 2004, int to = 2014) {
  const auto key_col = table.require_column(key_column);
  std::vector<std::pair<std::size_t, int>> year_cols;
  for (std::size_t i = 0; i < table.header.size(); ++i) {
    if (i == key_col) continue;
    if (auto y = detail::parse_int<int>(table.header[i]); y && *y >= from && *y <= to) year_cols.emplace_back(i, *y);
  }

  std::map<std::string, std::map<int, double>> values;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    const auto key = row[key_col];
    if (key.empty()) throw CovariateError(table.where(r) + ": empty key");
    auto& series = values[key];
    for (const auto& [col, year] : year_cols) {
      const std::string_view cell = detail::trim(row[col]);
      if (cell.empty() || cell == "..") continue;
      const auto v = detail::parse_double(cell);
      if (!v || !std::isfinite(*v) || *v < 0)
        throw CovariateError(table.where(r) + ": bad value '" + std::string(cell) + "' for year " +
                             std::to_string(year));
      auto [it, inserted] = series.emplace(year, *v);
      if (!inserted && it->second != *v)
        throw CovariateError(table.where(r) + ": conflicting duplicate for '" + key + "' in " + std::to_string(year));
    }
  }

  std::map<std::string, double> out;
  for (const auto& [key, series] : values) {
    if (series.empty()) continue;
    double sum = 0;
    for (const auto& [_, v] : series) sum += v;
    out[key] = sum / static_cast<double>(series.size());
  }
  return out;
}

/// key -> variable -> value. Blank cells are omitted.
using StaticCovariates = std::map<std::string, std::map<std::string, double>>;

inline StaticCovariates load_static_covariates(const DelimitedTable& table, std::string_view key_column,
                                               const std::map<std::string, std::string>& variable_columns) {
  const auto key_col = table.require_column(key_column);
  std::vector<std::pair<std::string, std::size_t>> cols;
  for (const auto& [var, col] : variable_columns) cols.emplace_back(var, table.require_column(col));

  StaticCovariates out;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    auto& entry = out[row[key_col]];
    for (const auto& [var, col] : cols) {
      const std::string_view cell = detail::trim(row[col]);
      if (cell.empty() || cell == "..") continue;
      const auto v = detail::parse_double(cell);
      if (!v || !std::isfinite(*v))
        throw CovariateError(table.where(r) + ": bad value '" + std::string(cell) + "' for " + var);
      entry[var] = *v;
    }
  }
  return out;
}

struct RegionSpec {
  std::map<std::string, std::set<std::string>> members;

  bool empty() const { return members.empty(); }

  std::optional<std::string> region_of(std::string_view code) const {
    for (const auto& [name, set] : members)
      if (set.count(std::string(code))) return name;
    return std::nullopt;
  }
};

/// Long format: one (region, country) pair per row. Regions must be disjoint.
inline RegionSpec load_regions(const DelimitedTable& table, std::string_view region_column = "region",
                               std::string_view country_column = "country") {
  const auto rc = table.require_column(region_column);
  const auto cc = table.require_column(country_column);
  RegionSpec spec;
  std::map<std::string, std::string> owner;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& region = table.rows[r][rc];
    const auto& country = table.rows[r][cc];
    if (region.empty() || country.empty()) throw CovariateError(table.where(r) + ": empty region or country");
    auto [it, inserted] = owner.emplace(country, region);
    if (!inserted && it->second != region)
      throw CovariateError(table.where(r) + ": '" + country + "' belongs to both '" + it->second + "' and '" +
                           region + "'");
    spec.members[region].insert(country);
  }
  return spec;
}

/// Covariate-file name -> boundary code. Matching is exact; nothing is guessed.
using AliasTable = std::map<std::string, std::string>;

inline AliasTable load_aliases(const DelimitedTable& table, std::string_view alias_column = "alias",
                               std::string_view code_column = "code") {
  const auto ac = table.require_column(alias_column);
  const auto cc = table.require_column(code_column);
  AliasTable out;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& alias = table.rows[r][ac];
    auto [it, inserted] = out.emplace(alias, table.rows[r][cc]);
    if (!inserted && it->second != table.rows[r][cc])
      throw CovariateError(table.where(r) + ": alias '" + alias + "' maps to two codes");
  }
  return out;
}

namespace covariate {
inline constexpr std::string_view population = "population";
inline constexpr std::string_view area = "area";
inline constexpr std::string_view gdp = "gdp";
inline constexpr std::string_view density = "density";
inline constexpr std::string_view coastline = "coastline";
inline constexpr std::string_view urban_population = "urban_population";

inline const std::vector<std::string>& all() {
  static const std::vector<std::string> names{"area", "population", "gdp", "density", "coastline", "urban_population"};
  return names;
}
inline const std::vector<std::string>& static_names() {
  static const std::vector<std::string> names{"gdp", "density", "coastline", "urban_population"};
  return names;
}
}  // namespace covariate

struct CountryCovariates {
  std::string country_code;
  std::optional<double> population_avg;
  std::optional<double> area_avg;
  std::optional<double> gdp;
  std::optional<double> density;
  std::optional<double> coastline;
  std::optional<double> urban_population;
  std::optional<std::string> region;

  std::optional<double> get(std::string_view variable) const {
    if (variable == covariate::population) return population_avg;
    if (variable == covariate::area) return area_avg;
    if (variable == covariate::gdp) return gdp;
    if (variable == covariate::density) return density;
    if (variable == covariate::coastline) return coastline;
    if (variable == covariate::urban_population) return urban_population;
    throw ContractViolation("unknown covariate '" + std::string(variable) + "'");
  }

  void set(std::string_view variable, double v) {
    if (variable == covariate::population) population_avg = v;
    else if (variable == covariate::area) area_avg = v;
    else if (variable == covariate::gdp) gdp = v;
    else if (variable == covariate::density) density = v;
    else if (variable == covariate::coastline) coastline = v;
    else if (variable == covariate::urban_population) urban_population = v;
    else throw ContractViolation("unknown covariate '" + std::string(variable) + "'");
  }
};

using CovariateTable = std::map<std::string, CountryCovariates>;

struct JoinDrop {
  std::string country;
  std::string reason;
  friend bool operator==(const JoinDrop&, const JoinDrop&) = default;
};

struct JoinReport {
  /// source name -> keys that matched neither a boundary code nor an alias.
  std::map<std::string, std::vector<std::string>> unmatched;
  /// analysis name ("population_fit", "area_fit", "correlation:<var>") -> drops.
  std::map<std::string, std::vector<JoinDrop>> dropped;
  /// Boundary countries that belong to no region.
  std::vector<std::string> uncovered_by_regions;
};

struct JoinResult {
  CovariateTable table;
  JoinReport report;
};

/// Joins every input onto the boundary universe. No value is ever imputed;
/// non-positive population or area is treated as absent and reported.
inline JoinResult join_covariates(const std::vector<std::string>& universe,
                                  const std::map<std::string, double>& population,
                                  const std::map<std::string, double>& area, const StaticCovariates& statics,
                                  const RegionSpec& regions, const AliasTable& aliases = {}) {
  if (regions.empty()) throw CovariateError("MissingRegions: region file defines no regions");

  JoinResult out;
  const std::set<std::string> codes(universe.begin(), universe.end());
  for (const auto& c : universe) out.table[c].country_code = c;

  auto resolve = [&](const std::string& key) -> std::optional<std::string> {
    if (codes.count(key)) return key;
    if (auto it = aliases.find(key); it != aliases.end() && codes.count(it->second)) return it->second;
    return std::nullopt;
  };

  auto absorb = [&](const std::string& source, const std::map<std::string, double>& series, std::string_view var) {
    for (const auto& [key, v] : series) {
      if (auto code = resolve(key))
        out.table[*code].set(var, v);
      else
        out.report.unmatched[source].push_back(key);
    }
  };
  absorb("population", population, covariate::population);
  absorb("area", area, covariate::area);
  for (const auto& [key, vars] : statics) {
    auto code = resolve(key);
    if (!code) {
      out.report.unmatched["covariates"].push_back(key);
      continue;
    }
    for (const auto& [var, v] : vars) out.table[*code].set(var, v);
  }
  for (const auto& [region, members] : regions.members) {
    for (const auto& key : members) {
      if (auto code = resolve(key))
        out.table[*code].region = region;
      else
        out.report.unmatched["regions"].push_back(key);
    }
  }

  auto& rep = out.report;
  for (auto& [code, row] : out.table) {
    for (auto [var, analysis] : {std::pair{covariate::population, "population_fit"}, std::pair{covariate::area, "area_fit"}}) {
      const auto v = row.get(var);
      const std::string name(var);
      if (!v) {
        rep.dropped[analysis].push_back({code, "Missing:" + name});
      } else if (*v <= 0) {
        rep.dropped[analysis].push_back({code, "NonPositive:" + name});
        if (var == covariate::population)
          row.population_avg.reset();
        else
          row.area_avg.reset();
      }
    }
    for (const auto& var : covariate::static_names())
      if (!row.get(var)) rep.dropped["correlation:" + var].push_back({code, "Missing:" + var});
    if (!row.region) rep.uncovered_by_regions.push_back(code);
  }
  return out;
}

}  // namespace geoscale
