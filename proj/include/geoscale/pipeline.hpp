#pragma once

// End-to-end orchestration: ingest -> geocode -> home inference ->
// attractiveness -> covariate join -> fits and correlations.
//
// Every stage writes flat delimited files plus a JSON manifest holding the
// checksums of its inputs and outputs. A stage whose manifest key matches and
// whose outputs are intact is not re-executed.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "geoscale/attractiveness.hpp"
#include "geoscale/checksum.hpp"
#include "geoscale/covariates.hpp"
#include "geoscale/geo_boundary.hpp"
#include "geoscale/home_inference.hpp"
#include "geoscale/record_ingest.hpp"
#include "geoscale/scaling_stats.hpp"

namespace geoscale {

namespace fs = std::filesystem;
using nlohmann::json;

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A stage failed; intermediates of earlier stages stay on disk.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what)
      : Error("stage '" + stage + "' failed: " + what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

struct PipelineConfig {
  struct Inputs {
    fs::path metadata;
    fs::path boundaries;
    fs::path population;
    fs::path area;
    fs::path covariates;
    fs::path regions;
    std::optional<fs::path> aliases;
  };

  /// Relative paths in the config file are resolved against this directory.
  fs::path base_dir = ".";
  Inputs inputs;
  ColumnMap columns;
  BoundaryKeys boundary_keys;
  char table_delimiter = '\t';
  std::string population_key = "country";
  std::string area_key = "country";
  std::string covariate_key = "country";
  /// variable -> column name in the static covariate file.
  std::map<std::string, std::string> covariate_columns{
      {"gdp", "gdp"}, {"density", "density"}, {"coastline", "coastline"}, {"urban_population", "urban_population"}};
  std::string region_column = "region";
  std::string region_country_column = "country";
  std::string alias_column = "alias";
  std::string alias_code_column = "code";
  int year_from = 2004;
  int year_to = 2014;
  double epsilon = default_epsilon;
  FractionDenominator denominator = FractionDenominator::ForeignObjects;
  double classify_tolerance = 0;
  std::map<std::string, Aggregation> aggregation = default_aggregation();
  unsigned workers = 1;
  fs::path output_dir = "out";

  fs::path resolve(const fs::path& p) const { return p.is_absolute() ? p : base_dir / p; }
  fs::path out() const { return resolve(output_dir); }

  static PipelineConfig from_json(const json& j, const fs::path& base_dir = ".");
  static PipelineConfig load(const fs::path& path);

  /// Analysis parameters only: worker count and output location are left out
  /// because they cannot change any result.
  json echo() const;
};

namespace detail {

inline char delimiter_from(const json& j, const char* what) {
  const auto s = j.get<std::string>();
  if (s.size() != 1) throw ConfigError(std::string(what) + " must be a single character");
  return s[0];
}

inline Aggregation aggregation_from(const std::string& s) {
  if (s == "sum") return Aggregation::Sum;
  if (s == "population_weighted_mean") return Aggregation::PopulationWeightedMean;
  throw ConfigError("unknown aggregation mode '" + s + "'");
}

}  // namespace detail

inline PipelineConfig PipelineConfig::from_json(const json& j, const fs::path& base_dir) {
  PipelineConfig c;
  c.base_dir = base_dir;
  try {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    const auto in = j.value("inputs", json::object());
    auto path_of = [&](const char* k) { return fs::path(in.value(k, std::string{})); };
    c.inputs.metadata = path_of("metadata");
    c.inputs.boundaries = path_of("boundaries");
    c.inputs.population = path_of("population");
    c.inputs.area = path_of("area");
    c.inputs.covariates = path_of("covariates");
    c.inputs.regions = path_of("regions");
    if (in.contains("aliases") && !in["aliases"].is_null()) c.inputs.aliases = fs::path(in["aliases"].get<std::string>());

    if (j.contains("columns")) {
      const auto& cm = j["columns"];
      if (cm.contains("delimiter")) c.columns.delimiter = detail::delimiter_from(cm["delimiter"], "columns.delimiter");
      c.columns.object_id = cm.value("object_id", c.columns.object_id);
      c.columns.user_id = cm.value("user_id", c.columns.user_id);
      c.columns.taken_at = cm.value("taken_at", c.columns.taken_at);
      c.columns.lon = cm.value("lon", c.columns.lon);
      c.columns.lat = cm.value("lat", c.columns.lat);
      if (cm.contains("date_formats")) c.columns.date_formats = cm["date_formats"].get<std::vector<std::string>>();
    }
    if (j.contains("boundary_keys")) {
      c.boundary_keys.code = j["boundary_keys"].value("code", c.boundary_keys.code);
      c.boundary_keys.name = j["boundary_keys"].value("name", c.boundary_keys.name);
    }
    if (j.contains("table_delimiter")) c.table_delimiter = detail::delimiter_from(j["table_delimiter"], "table_delimiter");
    c.population_key = j.value("population_key", c.population_key);
    c.area_key = j.value("area_key", c.area_key);
    if (j.contains("covariate_columns")) {
      for (const auto& [k, v] : j["covariate_columns"].items()) {
        if (k == "key")
          c.covariate_key = v.get<std::string>();
        else if (std::find(covariate::static_names().begin(), covariate::static_names().end(), k) !=
                 covariate::static_names().end())
          c.covariate_columns[k] = v.get<std::string>();
        else
          throw ConfigError("unknown covariate '" + k + "'");
      }
    }
    if (j.contains("region_columns")) {
      c.region_column = j["region_columns"].value("region", c.region_column);
      c.region_country_column = j["region_columns"].value("country", c.region_country_column);
    }
    if (j.contains("alias_columns")) {
      c.alias_column = j["alias_columns"].value("alias", c.alias_column);
      c.alias_code_column = j["alias_columns"].value("code", c.alias_code_column);
    }
    if (j.contains("years")) {
      c.year_from = j["years"].value("from", c.year_from);
      c.year_to = j["years"].value("to", c.year_to);
    }
    c.epsilon = j.value("epsilon", c.epsilon);
    if (j.contains("fraction_denominator")) {
      const auto d = j["fraction_denominator"].get<std::string>();
      if (d == "foreign_objects")
        c.denominator = FractionDenominator::ForeignObjects;
      else if (d == "all_objects")
        c.denominator = FractionDenominator::AllObjects;
      else
        throw ConfigError("fraction_denominator must be 'foreign_objects' or 'all_objects'");
    }
    c.classify_tolerance = j.value("classify_tolerance", c.classify_tolerance);
    if (j.contains("aggregation"))
      for (const auto& [k, v] : j["aggregation"].items()) {
        if (std::find(covariate::all().begin(), covariate::all().end(), k) == covariate::all().end())
          throw ConfigError("unknown covariate '" + k + "' in aggregation");
        c.aggregation[k] = detail::aggregation_from(v.get<std::string>());
      }
    if (j.contains("workers")) {
      const auto w = j["workers"].get<long long>();
      if (w < 1) throw ConfigError("workers must be >= 1");
      c.workers = static_cast<unsigned>(w);
    }
    c.output_dir = j.value("output_dir", c.output_dir.string());
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  return c;
}

inline PipelineConfig PipelineConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return from_json(j, path.has_parent_path() ? path.parent_path() : fs::path("."));
}

inline json PipelineConfig::echo() const {
  json aggr = json::object();
  for (const auto& [k, v] : aggregation) aggr[k] = std::string(to_string(v));
  return {
      {"inputs",
       {{"metadata", inputs.metadata.string()},
        {"boundaries", inputs.boundaries.string()},
        {"population", inputs.population.string()},
        {"area", inputs.area.string()},
        {"covariates", inputs.covariates.string()},
        {"regions", inputs.regions.string()},
        {"aliases", inputs.aliases ? json(inputs.aliases->string()) : json(nullptr)}}},
      {"columns",
       {{"delimiter", std::string(1, columns.delimiter)},
        {"object_id", columns.object_id},
        {"user_id", columns.user_id},
        {"taken_at", columns.taken_at},
        {"lon", columns.lon},
        {"lat", columns.lat},
        {"date_formats", columns.date_formats}}},
      {"boundary_keys", {{"code", boundary_keys.code}, {"name", boundary_keys.name}}},
      {"table_delimiter", std::string(1, table_delimiter)},
      {"population_key", population_key},
      {"area_key", area_key},
      {"covariate_key", covariate_key},
      {"covariate_columns", covariate_columns},
      {"region_columns", {{"region", region_column}, {"country", region_country_column}}},
      {"alias_columns", {{"alias", alias_column}, {"code", alias_code_column}}},
      {"years", {{"from", year_from}, {"to", year_to}}},
      {"epsilon", epsilon},
      {"fraction_denominator", std::string(to_string(denominator))},
      {"classify_tolerance", classify_tolerance},
      {"aggregation", aggr},
      {"log_base", "e"},
  };
}

// ---------------------------------------------------------------------------
// validate

struct Problem {
  std::string kind;  // MissingPath, BadColumn, BadColumnMap, BadValue, AliasTarget, Unreadable
  std::string subject;
  std::string detail;
};

namespace detail {

inline std::optional<std::string> first_nonempty_line(const fs::path& p) {
  std::ifstream in(p);
  std::string line;
  while (std::getline(in, line))
    if (!trim(line).empty()) return std::string(strip_cr(line));
  return std::nullopt;
}

inline std::vector<std::string> header_of(const fs::path& p, char delim) {
  auto first = first_nonempty_line(p);
  if (!first) return {};
  std::vector<std::string> cells;
  for (auto c : split(*first, delim)) cells.push_back(unquote(c));
  return cells;
}

}  // namespace detail

/// Reads but never writes. An empty result means the config is usable.
inline std::vector<Problem> validate(const PipelineConfig& cfg) {
  std::vector<Problem> problems;
  auto exists = [&](const fs::path& p, const char* field) {
    const auto full = cfg.resolve(p);
    if (p.empty() || !fs::is_regular_file(full)) {
      problems.push_back({"MissingPath", field, full.string()});
      return false;
    }
    return true;
  };

  if (auto p = cfg.columns.problem(); !p.empty()) problems.push_back({"BadColumnMap", "columns", p});
  if (cfg.workers < 1) problems.push_back({"BadValue", "workers", "must be >= 1"});
  if (!(cfg.epsilon >= 0)) problems.push_back({"BadValue", "epsilon", "must be >= 0"});
  if (!(cfg.classify_tolerance >= 0)) problems.push_back({"BadValue", "classify_tolerance", "must be >= 0"});
  if (cfg.year_from > cfg.year_to) problems.push_back({"BadValue", "years", "from > to"});

  if (exists(cfg.inputs.metadata, "metadata")) {
    if (auto line = detail::first_nonempty_line(cfg.resolve(cfg.inputs.metadata))) {
      const auto fields = detail::split(*line, cfg.columns.delimiter).size();
      if (cfg.columns.max_index() >= fields)
        problems.push_back({"BadColumn", "metadata",
                            "column index " + std::to_string(cfg.columns.max_index()) + " but sample line has " +
                                std::to_string(fields) + " fields"});
    }
  }

  std::optional<std::set<std::string>> codes;
  if (exists(cfg.inputs.boundaries, "boundaries")) {
    try {
      const auto set = load_boundaries_file(cfg.resolve(cfg.inputs.boundaries).string(), cfg.boundary_keys);
      const auto list = set.codes();
      codes.emplace(list.begin(), list.end());
    } catch (const std::exception& e) {
      problems.push_back({"Unreadable", "boundaries", e.what()});
    }
  }

  auto check_header = [&](const fs::path& p, const char* field, const std::vector<std::string>& required) {
    if (!exists(p, field)) return;
    const auto header = detail::header_of(cfg.resolve(p), cfg.table_delimiter);
    for (const auto& col : required)
      if (std::find(header.begin(), header.end(), col) == header.end())
        problems.push_back({"BadColumn", field, "missing column '" + col + "'"});
  };
  check_header(cfg.inputs.population, "population", {cfg.population_key});
  check_header(cfg.inputs.area, "area", {cfg.area_key});
  {
    std::vector<std::string> cols{cfg.covariate_key};
    for (const auto& [_, col] : cfg.covariate_columns) cols.push_back(col);
    check_header(cfg.inputs.covariates, "covariates", cols);
  }
  check_header(cfg.inputs.regions, "regions", {cfg.region_column, cfg.region_country_column});
  if (cfg.inputs.aliases) {
    check_header(*cfg.inputs.aliases, "aliases", {cfg.alias_column, cfg.alias_code_column});
    if (codes && fs::is_regular_file(cfg.resolve(*cfg.inputs.aliases))) {
      try {
        const auto aliases = load_aliases(read_table_file(cfg.resolve(*cfg.inputs.aliases).string(), cfg.table_delimiter),
                                          cfg.alias_column, cfg.alias_code_column);
        for (const auto& [alias, code] : aliases)
          if (!codes->count(code))
            problems.push_back({"AliasTarget", "aliases", "'" + alias + "' maps to unknown code '" + code + "'"});
      } catch (const std::exception& e) {
        problems.push_back({"Unreadable", "aliases", e.what()});
      }
    }
  }
  return problems;
}

// ---------------------------------------------------------------------------
// intermediate files

namespace files {
inline constexpr const char* records = "records.tsv";
inline constexpr const char* ingest_stats = "ingest.json";
inline constexpr const char* geocoded = "geocoded.tsv";
inline constexpr const char* geocode_stats = "geocode.json";
inline constexpr const char* activity = "activity.tsv";
inline constexpr const char* homes = "homes.tsv";
inline constexpr const char* home_stats = "homes.json";
inline constexpr const char* counts = "attractiveness_counts.tsv";
inline constexpr const char* covariates = "covariates.tsv";
inline constexpr const char* join_report = "join_report.json";
inline constexpr const char* attractiveness = "attractiveness.tsv";
inline constexpr const char* fits = "fits.json";
inline constexpr const char* report = "report.json";
}  // namespace files

namespace detail {

inline void write_text(const fs::path& p, const std::string& text) {
  const auto tmp = fs::path(p.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    out << text;
    if (!out) throw Error("cannot write " + p.string());
  }
  fs::rename(tmp, p);
}

inline void write_json(const fs::path& p, const json& j) { write_text(p, j.dump(2) + "\n"); }

inline json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw Error("cannot open " + p.string());
  return json::parse(in);
}

inline std::string opt(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

inline json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

inline json stats_json(const PruneStats& s) {
  return {{"total_lines", s.total_lines},
          {"kept", s.kept},
          {"dropped_not_geotagged", s.dropped_not_geotagged},
          {"dropped_bad_date", s.dropped_bad_date},
          {"dropped_malformed", s.dropped_malformed}};
}

/// Reads a file of the form written by this module: header line, then rows.
template <class Fn>
void for_each_row(const fs::path& p, Fn&& fn) {
  std::ifstream in(p);
  if (!in) throw Error("cannot open " + p.string());
  std::string line;
  std::vector<std::string_view> cells;
  bool header = true;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (header) {
      header = false;
      continue;
    }
    if (line.empty()) continue;
    split(line, '\t', cells);
    fn(cells, line_no);
  }
  if (in.bad()) throw Error("read failure on " + p.string());
}

inline std::uint64_t to_u64(std::string_view s, const fs::path& p, std::size_t line) {
  auto v = parse_int<std::uint64_t>(s);
  if (!v) throw Error(p.string() + ":" + std::to_string(line) + ": expected integer, got '" + std::string(s) + "'");
  return *v;
}

inline std::optional<double> to_opt_double(std::string_view s) {
  if (trim(s).empty()) return std::nullopt;
  return parse_double(s);
}

}  // namespace detail

/// Loads attractiveness counts persisted by the attractiveness stage.
inline AttractivenessTable<std::string> read_counts(const fs::path& p, FractionDenominator denominator) {
  AttractivenessTable<std::string> t;
  t.denominator = denominator;
  detail::for_each_row(p, [&](const std::vector<std::string_view>& c, std::size_t line) {
    if (c.size() < 6) throw Error(p.string() + ":" + std::to_string(line) + ": expected 6 columns");
    auto& row = t.rows[std::string(c[0])];
    row.foreign_object_count = detail::to_u64(c[1], p, line);
    row.foreign_user_count = detail::to_u64(c[2], p, line);
    row.total_object_count = detail::to_u64(c[3], p, line);
    row.total_user_count = detail::to_u64(c[4], p, line);
    row.fraction_of_total = detail::parse_double(c[5]).value_or(0.0);
  });
  return t;
}

inline CovariateTable read_covariates(const fs::path& p) {
  CovariateTable t;
  detail::for_each_row(p, [&](const std::vector<std::string_view>& c, std::size_t line) {
    if (c.size() < 8) throw Error(p.string() + ":" + std::to_string(line) + ": expected 8 columns");
    CountryCovariates row;
    row.country_code = std::string(c[0]);
    row.population_avg = detail::to_opt_double(c[1]);
    row.area_avg = detail::to_opt_double(c[2]);
    row.gdp = detail::to_opt_double(c[3]);
    row.density = detail::to_opt_double(c[4]);
    row.coastline = detail::to_opt_double(c[5]);
    row.urban_population = detail::to_opt_double(c[6]);
    if (!c[7].empty()) row.region = std::string(c[7]);
    t[row.country_code] = std::move(row);
  });
  return t;
}

inline RegionSpec regions_from(const CovariateTable& t) {
  RegionSpec spec;
  for (const auto& [code, row] : t)
    if (row.region) spec.members[*row.region].insert(code);
  return spec;
}

// ---------------------------------------------------------------------------
// stage runner

class StageRunner {
 public:
  /// Bumped whenever the layout of any intermediate file changes.
  static constexpr int format_version = 1;

  explicit StageRunner(fs::path dir) : dir_(std::move(dir)) {}

  /// Runs `fn` unless a manifest with an identical key vouches for intact outputs.
  template <class Fn>
  void run(const std::string& name, const json& key, const std::vector<std::string>& outputs, Fn&& fn,
           bool force = false) {
    const auto manifest_path = dir_ / (name + ".manifest.json");
    const auto t0 = std::chrono::steady_clock::now();
    bool cached = false;
    if (!force && fs::exists(manifest_path)) {
      try {
        const auto m = detail::read_json(manifest_path);
        cached = m.value("key", json()) == key && m.value("format", 0) == format_version;
        for (const auto& o : outputs) {
          if (!cached) break;
          const auto p = dir_ / o;
          cached = fs::exists(p) && m["outputs"].value(o, std::string()) == sha256_file(p);
        }
      } catch (const std::exception&) {
        cached = false;
      }
    }
    if (!cached) {
      fs::remove(manifest_path);
      try {
        fn();
      } catch (const StageError&) {
        throw;
      } catch (const std::exception& e) {
        throw StageError(name, e.what());
      }
      json m{{"stage", name}, {"format", format_version}, {"key", key}, {"outputs", json::object()}};
      for (const auto& o : outputs) m["outputs"][o] = sha256_file(dir_ / o);
      detail::write_json(manifest_path, m);
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    timing_[name] = {{"seconds", secs}, {"cached", cached}};
    completed_.push_back(name);
  }

  std::string checksum(const std::string& output) const { return sha256_file(dir_ / output); }
  const fs::path& dir() const { return dir_; }
  const json& timing() const { return timing_; }
  const std::vector<std::string>& completed() const { return completed_; }

 private:
  fs::path dir_;
  json timing_ = json::object();
  std::vector<std::string> completed_;
};

// ---------------------------------------------------------------------------
// stages

namespace stages {

inline void ingest(const PipelineConfig& cfg, const fs::path& dir) {
  std::ifstream in(cfg.resolve(cfg.inputs.metadata), std::ios::binary);
  if (!in) throw Error("cannot open metadata " + cfg.resolve(cfg.inputs.metadata).string());
  std::ofstream out(dir / files::records, std::ios::binary);
  out << "object_id\tuser_id\ttaken_at\tlon\tlat\n";
  std::string buf;
  const auto stats = prune_stream(
      in, cfg.columns,
      [&](MediaRecord&& r) {
        buf.clear();
        buf += r.object_id;
        buf += '\t';
        buf += r.user_id;
        buf += '\t';
        auto ts = format_timestamp(r.taken_at);
        ts[10] = ' ';
        buf += ts;
        buf += '\t';
        buf += detail::format_double(r.lon);
        buf += '\t';
        buf += detail::format_double(r.lat);
        buf += '\n';
        out << buf;
      },
      cfg.workers);
  if (!out) throw Error("cannot write records");
  out.close();
  detail::write_json(dir / files::ingest_stats, detail::stats_json(stats));
}

inline void geocode(const PipelineConfig& cfg, const fs::path& dir) {
  GeoIndex index(load_boundaries_file(cfg.resolve(cfg.inputs.boundaries).string(), cfg.boundary_keys));
  const ColumnMap compact = ColumnMap::compact();
  std::ifstream in(dir / files::records, std::ios::binary);
  if (!in) throw Error("cannot open records");
  std::ofstream out(dir / files::geocoded, std::ios::binary);
  out << "object_id\tuser_id\tdate\tcountry\trescued\n";

  std::uint64_t assigned = 0, unassigned = 0, rescued = 0;
  std::vector<std::uint64_t> per_country(index.boundaries().size(), 0);
  std::vector<std::string> batch;
  std::vector<MediaRecord> records;
  std::vector<LonLat> points;
  std::string line, buf;
  std::getline(in, line);  // header
  auto flush = [&] {
    auto parsed = prune_lines(batch, compact, cfg.workers);
    if (parsed.records.size() != batch.size()) throw Error("records file is corrupt");
    points.clear();
    for (const auto& r : parsed.records) points.push_back({r.lon, r.lat});
    const auto located = locate_batch(index, points, cfg.epsilon, cfg.workers);
    for (std::size_t i = 0; i < located.size(); ++i) {
      const auto& loc = located[i];
      if (!loc.assigned()) {
        ++unassigned;
        continue;
      }
      ++assigned;
      ++per_country[loc.country];
      if (loc.rescued) ++rescued;
      const auto& r = parsed.records[i];
      buf.clear();
      buf += r.object_id;
      buf += '\t';
      buf += r.user_id;
      buf += '\t';
      buf += format_date(calendar_date(r.taken_at));
      buf += '\t';
      buf += index.code(loc.country);
      buf += loc.rescued ? "\t1\n" : "\t0\n";
      out << buf;
    }
    batch.clear();
  };
  while (std::getline(in, line)) {
    batch.push_back(std::move(line));
    line.clear();
    if (batch.size() == (1u << 16)) flush();
  }
  if (in.bad()) throw Error("read failure on records");
  if (!batch.empty()) flush();
  if (!out) throw Error("cannot write geocoded records");

  json countries = json::array();
  for (std::size_t i = 0; i < index.boundaries().size(); ++i) {
    const auto& e = index.boundaries().entries[i];
    countries.push_back({{"code", e.code},
                         {"name", e.name},
                         {"polygons", e.polygons.size()},
                         {"objects", per_country[i]}});
  }
  detail::write_json(dir / files::geocode_stats, {{"assigned", assigned},
                                                   {"unassigned", unassigned},
                                                   {"epsilon_rescued", rescued},
                                                   {"country_count", index.boundaries().size()},
                                                   {"countries", countries}});
}

struct GeocodedEvent {
  std::string user_id;
  std::string country;
  Timestamp day;
};

inline std::vector<GeocodedEvent> read_geocoded(const fs::path& p) {
  std::vector<GeocodedEvent> events;
  detail::for_each_row(p, [&](const std::vector<std::string_view>& c, std::size_t line) {
    if (c.size() < 5) throw Error(p.string() + ":" + std::to_string(line) + ": expected 5 columns");
    auto day = parse_timestamp(c[2], "%Y-%m-%d");
    if (!day) throw Error(p.string() + ":" + std::to_string(line) + ": bad date");
    events.push_back({std::string(c[1]), std::string(c[3]), *day});
  });
  return events;
}

inline void homes(const PipelineConfig&, const fs::path& dir) {
  ActivityStore<std::string> store;
  for (const auto& e : read_geocoded(dir / files::geocoded)) store.accumulate(e.user_id, e.country, e.day);
  HomeStats stats;
  const auto assignments = infer_homes(store, &stats);

  std::ostringstream act, hom;
  act << "user_id\tcountry\tobjects\tdays\n";
  hom << "user_id\tstatus\thome\treason\n";
  for (const auto user : store.sorted_users()) {
    for (const auto& [country, a] : store.find(user)->countries)
      act << user << '\t' << country << '\t' << a.object_count << '\t' << a.day_count() << '\n';
    const auto& h = assignments.at(std::string(user));
    if (h.home)
      hom << user << "\thome\t" << *h.home << "\t\n";
    else
      hom << user << "\tundetermined\t\t" << to_string(*h.reason) << '\n';
  }
  detail::write_text(dir / files::activity, act.str());
  detail::write_text(dir / files::homes, hom.str());
  detail::write_json(dir / files::home_stats, {{"users", stats.users},
                                                {"homes_found", stats.homes_found},
                                                {"undetermined",
                                                 {{"ObjectTie", stats.object_tie},
                                                  {"DayTie", stats.day_tie},
                                                  {"ArgmaxMismatch", stats.argmax_mismatch}}}});
}

inline AssignmentMap<std::string> read_homes(const fs::path& p) {
  AssignmentMap<std::string> out;
  detail::for_each_row(p, [&](const std::vector<std::string_view>& c, std::size_t line) {
    if (c.size() < 4) throw Error(p.string() + ":" + std::to_string(line) + ": expected 4 columns");
    if (c[1] == "home") {
      out.emplace(std::string(c[0]), HomeAssignment<std::string>::at(std::string(c[2])));
    } else {
      UndeterminedReason r = UndeterminedReason::ArgmaxMismatch;
      if (c[3] == "ObjectTie") r = UndeterminedReason::ObjectTie;
      if (c[3] == "DayTie") r = UndeterminedReason::DayTie;
      out.emplace(std::string(c[0]), HomeAssignment<std::string>::undetermined(r));
    }
  });
  return out;
}

inline std::vector<std::string> universe_from(const fs::path& dir) {
  std::vector<std::string> codes;
  const auto stats = detail::read_json(dir / files::geocode_stats);
  for (const auto& c : stats.at("countries")) codes.push_back(c.at("code"));
  return codes;
}

inline void attractiveness(const PipelineConfig& cfg, const fs::path& dir) {
  const auto universe = universe_from(dir);
  const auto assignments = read_homes(dir / files::homes);
  std::vector<GeoEvent<std::string>> events;
  for (auto& e : read_geocoded(dir / files::geocoded)) events.push_back({std::move(e.user_id), std::move(e.country)});
  const auto table = compute_attractiveness<std::string>(events, assignments, cfg.denominator,
                                                         std::span<const std::string>(universe), cfg.workers);
  std::ostringstream out;
  out << "country\tforeign_objects\tforeign_users\ttotal_objects\ttotal_users\tfraction_of_total\n";
  for (const auto& [code, r] : table.rows)
    out << code << '\t' << r.foreign_object_count << '\t' << r.foreign_user_count << '\t' << r.total_object_count
        << '\t' << r.total_user_count << '\t' << detail::format_double(r.fraction_of_total) << '\n';
  detail::write_text(dir / files::counts, out.str());
}

inline json join_report_json(const JoinReport& rep) {
  json dropped = json::object();
  for (const auto& [analysis, drops] : rep.dropped) {
    json arr = json::array();
    for (const auto& d : drops) arr.push_back({{"country", d.country}, {"reason", d.reason}});
    dropped[analysis] = arr;
  }
  return {{"unmatched", rep.unmatched}, {"dropped", dropped}, {"uncovered_by_regions", rep.uncovered_by_regions}};
}

inline void covariates(const PipelineConfig& cfg, const fs::path& dir) {
  const auto universe = universe_from(dir);
  const char d = cfg.table_delimiter;
  const auto pop = load_yearly_series(read_table_file(cfg.resolve(cfg.inputs.population).string(), d),
                                      cfg.population_key, cfg.year_from, cfg.year_to);
  const auto area = load_yearly_series(read_table_file(cfg.resolve(cfg.inputs.area).string(), d), cfg.area_key,
                                       cfg.year_from, cfg.year_to);
  const auto statics = load_static_covariates(read_table_file(cfg.resolve(cfg.inputs.covariates).string(), d),
                                              cfg.covariate_key, cfg.covariate_columns);
  const auto regions = load_regions(read_table_file(cfg.resolve(cfg.inputs.regions).string(), d), cfg.region_column,
                                    cfg.region_country_column);
  AliasTable aliases;
  if (cfg.inputs.aliases)
    aliases = load_aliases(read_table_file(cfg.resolve(*cfg.inputs.aliases).string(), d), cfg.alias_column,
                           cfg.alias_code_column);
  const auto joined = join_covariates(universe, pop, area, statics, regions, aliases);

  std::ostringstream out;
  out << "country\tpopulation_avg\tarea_avg\tgdp\tdensity\tcoastline\turban_population\tregion\n";
  for (const auto& [code, r] : joined.table)
    out << code << '\t' << detail::opt(r.population_avg) << '\t' << detail::opt(r.area_avg) << '\t'
        << detail::opt(r.gdp) << '\t' << detail::opt(r.density) << '\t' << detail::opt(r.coastline) << '\t'
        << detail::opt(r.urban_population) << '\t' << r.region.value_or("") << '\n';
  detail::write_text(dir / files::covariates, out.str());
  auto rep = join_report_json(joined.report);
  rep["gdp_column"] = cfg.covariate_columns.at("gdp");
  detail::write_json(dir / files::join_report, rep);
}

inline json fit_json(const std::optional<PowerLawFit>& fit, const FitInputs& inputs) {
  json points = json::array();
  for (std::size_t i = 0; i < inputs.pairs.size(); ++i)
    points.push_back({{"country", inputs.countries[i]}, {"x", inputs.pairs[i].x}, {"y", inputs.pairs[i].y}});
  json excl = json::array();
  for (const auto& e : inputs.exclusions) excl.push_back({{"country", e.country}, {"reason", std::string(to_string(e.reason))}});
  json j{{"n_points", inputs.pairs.size()}, {"points", points}, {"exclusions", excl}};
  if (fit) {
    j["fit"] = {{"beta", fit->beta},
                {"log_intercept", fit->log_intercept},
                {"r_squared", fit->r_squared},
                {"n_points", fit->n_points},
                {"regime", std::string(to_string(fit->regime))},
                {"negative_beta", fit->beta < 0}};
  } else {
    j["fit"] = nullptr;
    j["unfittable"] = {{"n", inputs.pairs.size()}};
  }
  return j;
}

inline void fits(const PipelineConfig& cfg, const fs::path& dir) {
  auto table = read_counts(dir / files::counts, cfg.denominator);
  const auto cov = read_covariates(dir / files::covariates);
  const auto regions = regions_from(cov);
  normalized_stats(table, cov);

  std::ostringstream out;
  out << "country\tforeign_object_count\tforeign_user_count\ttotal_object_count\ttotal_user_count\t"
         "fraction_of_total\tusers_per_resident\tobjects_per_km2\tobjects_per_user\tdenominator\t"
         "population_status\tarea_status\n";
  for (const auto& [code, r] : table.rows)
    out << code << '\t' << r.foreign_object_count << '\t' << r.foreign_user_count << '\t' << r.total_object_count
        << '\t' << r.total_user_count << '\t' << detail::format_double(r.fraction_of_total) << '\t'
        << detail::opt(r.users_per_resident) << '\t' << detail::opt(r.objects_per_km2) << '\t'
        << detail::opt(r.objects_per_user) << '\t' << to_string(table.denominator) << '\t'
        << to_string(r.population_status) << '\t' << to_string(r.area_status) << '\n';
  detail::write_text(dir / files::attractiveness, out.str());

  json result = json::object();
  for (const auto axis : {FitAxis::Population, FitAxis::Area}) {
    const std::string name(to_string(axis));
    const auto inputs = filter_fit_inputs(table, cov, axis);
    std::optional<PowerLawFit> world;
    if (inputs.pairs.size() >= min_fit_points) {
      try {
        world = fit_power_law(inputs.pairs, cfg.classify_tolerance);
      } catch (const StatsError&) {
      }
    }
    result["world"][name] = fit_json(world, inputs);

    const auto region_fits = fit_by_region(table, cov, regions, axis, cfg.classify_tolerance);
    json arr = json::array();
    for (const auto& rf : region_fits) {
      auto j = fit_json(rf.fit, rf.inputs);
      j["region"] = rf.region;
      j["country_count"] = rf.country_count;
      j["aggregate_population"] = rf.aggregate_population;
      arr.push_back(j);
    }
    result["regions"][name] = arr;

    if (axis == FitAxis::Population) {
      const auto aggregates = aggregate_region_covariates(regions, cov, cfg.aggregation);
      json corr = json::array();
      for (const auto& c : correlate_fit_quality(region_fits, aggregates, covariate::all())) {
        json cj{{"variable", c.variable}, {"n", c.n}, {"r", detail::opt_json(c.r)}};
        cj["aggregation"] = std::string(to_string(cfg.aggregation.at(c.variable)));
        if (c.error) cj["error"] = *c.error;
        corr.push_back(cj);
      }
      result["correlations"] = corr;
    }
  }
  result["log_base"] = "e";
  result["denominator"] = std::string(to_string(cfg.denominator));
  detail::write_json(dir / files::fits, result);
}

}  // namespace stages

// ---------------------------------------------------------------------------
// report

inline json attractiveness_rows_json(const fs::path& p) {
  json rows = json::array();
  detail::for_each_row(p, [&](const std::vector<std::string_view>& c, std::size_t) {
    rows.push_back({{"country", std::string(c[0])},
                    {"foreign_object_count", detail::parse_int<std::uint64_t>(c[1]).value_or(0)},
                    {"foreign_user_count", detail::parse_int<std::uint64_t>(c[2]).value_or(0)},
                    {"total_object_count", detail::parse_int<std::uint64_t>(c[3]).value_or(0)},
                    {"total_user_count", detail::parse_int<std::uint64_t>(c[4]).value_or(0)},
                    {"fraction_of_total", detail::parse_double(c[5]).value_or(0.0)},
                    {"users_per_resident", detail::opt_json(detail::to_opt_double(c[6]))},
                    {"objects_per_km2", detail::opt_json(detail::to_opt_double(c[7]))},
                    {"objects_per_user", detail::opt_json(detail::to_opt_double(c[8]))},
                    {"population_status", std::string(c[10])},
                    {"area_status", std::string(c[11])}});
  });
  return rows;
}

/// Assembles report.json from whatever stage outputs exist in the output directory.
inline json assemble_report(const PipelineConfig& cfg, const json& input_checksums, const StageRunner& runner,
                            const std::optional<std::string>& failed_stage = std::nullopt) {
  const auto& dir = runner.dir();
  auto load = [&](const char* f) { return fs::exists(dir / f) ? detail::read_json(dir / f) : json(nullptr); };
  json report{{"schema", "geoscale.report/1"}, {"config", cfg.echo()}, {"input_checksums", input_checksums}};
  report["ingest"] = load(files::ingest_stats);
  if (auto g = load(files::geocode_stats); !g.is_null()) {
    g.erase("countries");
    report["geocode"] = g;
  } else {
    report["geocode"] = nullptr;
  }
  report["homes"] = load(files::home_stats);
  report["join"] = load(files::join_report);
  report["fits"] = load(files::fits);
  if (fs::exists(dir / files::attractiveness)) {
    json a{{"denominator", std::string(to_string(cfg.denominator))},
           {"rows", attractiveness_rows_json(dir / files::attractiveness)}};
    const auto table = [&] {
      auto t = read_counts(dir / files::counts, cfg.denominator);
      normalized_stats(t, read_covariates(dir / files::covariates));
      return t;
    }();
    json top = json::object();
    for (const auto& m : attractiveness_metrics()) {
      json arr = json::array();
      for (const auto& [code, v] : top_k(table, m, 5)) arr.push_back({{"country", code}, {"value", v}});
      top[m] = arr;
    }
    a["top5"] = top;
    report["attractiveness"] = a;
  } else {
    report["attractiveness"] = nullptr;
  }
  json intermediates = json::object();
  for (const auto& stage : runner.completed()) {
    const auto m = detail::read_json(dir / (stage + ".manifest.json"));
    intermediates[stage] = m["outputs"];
  }
  report["intermediates"] = intermediates;
  report["status"] = failed_stage ? "failed" : "ok";
  if (failed_stage) report["failed_stage"] = *failed_stage;
  report["runtime"] = {{"workers", cfg.workers}, {"output_dir", cfg.out().string()}, {"timing", runner.timing()}};
  return report;
}

/// Fields that legitimately differ between otherwise identical runs.
inline json strip_runtime(json report) {
  report.erase("runtime");
  return report;
}

struct RunOptions {
  /// Re-execute the covariate and fit stages from persisted upstream files
  /// without touching earlier stages.
  bool fits_only = false;
};

inline json input_checksums(const PipelineConfig& cfg) {
  json j = json::object();
  auto add = [&](const char* name, const fs::path& p) { j[name] = sha256_file(cfg.resolve(p)); };
  add("metadata", cfg.inputs.metadata);
  add("boundaries", cfg.inputs.boundaries);
  add("population", cfg.inputs.population);
  add("area", cfg.inputs.area);
  add("covariates", cfg.inputs.covariates);
  add("regions", cfg.inputs.regions);
  if (cfg.inputs.aliases) add("aliases", *cfg.inputs.aliases);
  return j;
}

/// Runs every stage in order and writes report.json. Throws StageError on
/// the first failing stage after writing a partial report.
inline json run(const PipelineConfig& cfg, const RunOptions& options = {}) {
  const auto dir = cfg.out();
  fs::create_directories(dir);
  StageRunner runner(dir);
  const auto inputs = input_checksums(cfg);
  const auto echo = cfg.echo();

  auto upstream = [&](const char* file) { return runner.checksum(file); };
  try {
    if (!options.fits_only) {
      runner.run("ingest", {{"metadata", inputs["metadata"]}, {"columns", echo["columns"]}},
                 {files::records, files::ingest_stats}, [&] { stages::ingest(cfg, dir); });
      runner.run("geocode",
                 {{"records", upstream(files::records)},
                  {"boundaries", inputs["boundaries"]},
                  {"boundary_keys", echo["boundary_keys"]},
                  {"epsilon", cfg.epsilon}},
                 {files::geocoded, files::geocode_stats}, [&] { stages::geocode(cfg, dir); });
      runner.run("homes", {{"geocoded", upstream(files::geocoded)}}, {files::activity, files::homes, files::home_stats},
                 [&] { stages::homes(cfg, dir); });
      runner.run("attractiveness",
                 {{"geocoded", upstream(files::geocoded)},
                  {"homes", upstream(files::homes)},
                  {"universe", upstream(files::geocode_stats)},
                  {"denominator", echo["fraction_denominator"]}},
                 {files::counts}, [&] { stages::attractiveness(cfg, dir); });
    } else {
      for (const char* f : {files::counts, files::geocode_stats})
        if (!fs::exists(dir / f)) throw StageError("fits", std::string("missing persisted ") + f + "; run the pipeline first");
    }
    json cov_key = inputs;
    cov_key.erase("metadata");
    cov_key["universe"] = upstream(files::geocode_stats);
    for (const char* k : {"table_delimiter", "population_key", "area_key", "covariate_key", "covariate_columns",
                          "region_columns", "alias_columns", "years"})
      cov_key[k] = echo[k];
    runner.run("covariates", cov_key, {files::covariates, files::join_report}, [&] { stages::covariates(cfg, dir); },
               options.fits_only);
    runner.run("fits",
               {{"counts", upstream(files::counts)},
                {"covariates", upstream(files::covariates)},
                {"denominator", echo["fraction_denominator"]},
                {"classify_tolerance", cfg.classify_tolerance},
                {"aggregation", echo["aggregation"]}},
               {files::attractiveness, files::fits}, [&] { stages::fits(cfg, dir); }, options.fits_only);
  } catch (const StageError& e) {
    if (!runner.completed().empty())
      detail::write_json(dir / files::report, assemble_report(cfg, inputs, runner, e.stage()));
    throw;
  }
  auto report = assemble_report(cfg, inputs, runner);
  detail::write_json(dir / files::report, report);
  return report;
}

// ---------------------------------------------------------------------------
// plot data

namespace detail {

inline std::string cell(const json& v) {
  if (v.is_null()) return {};
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_unsigned()) return std::to_string(v.get<std::uint64_t>());
  if (v.is_number_integer()) return std::to_string(v.get<std::int64_t>());
  if (v.is_number_float()) return format_double(v.get<double>());
  if (v.is_boolean()) return v.get<bool>() ? "1" : "0";
  return v.dump();
}

}  // namespace detail

inline constexpr std::size_t fit_line_samples = 50;

/// Writes one tab-separated file per figure under `dir` and returns their names.
inline std::vector<std::string> emit_plot_data(const json& report, const fs::path& dir) {
  fs::create_directories(dir);
  std::vector<std::string> written;
  auto put = [&](const std::string& name, const std::string& text) {
    detail::write_text(dir / name, text);
    written.push_back(name);
  };
  const json rows = report.contains("attractiveness") && report["attractiveness"].is_object()
                        ? report["attractiveness"]["rows"]
                        : json::array();

  {
    std::uint64_t objects = 0, users = 0;
    for (const auto& r : rows) {
      objects += r["total_object_count"].get<std::uint64_t>();
      users += r["total_user_count"].get<std::uint64_t>();
    }
    std::vector<json> sorted(rows.begin(), rows.end());
    std::stable_sort(sorted.begin(), sorted.end(), [](const json& a, const json& b) {
      return a["total_object_count"].get<std::uint64_t>() > b["total_object_count"].get<std::uint64_t>();
    });
    std::string t = "country\tobjects\tobject_share\tusers\tuser_share\n";
    for (const auto& r : sorted) {
      const auto o = r["total_object_count"].get<std::uint64_t>();
      const auto u = r["total_user_count"].get<std::uint64_t>();
      t += r["country"].get<std::string>() + '\t' + std::to_string(o) + '\t' +
           detail::format_double(objects ? static_cast<double>(o) / static_cast<double>(objects) : 0.0) + '\t' +
           std::to_string(u) + '\t' +
           detail::format_double(users ? static_cast<double>(u) / static_cast<double>(users) : 0.0) + '\n';
    }
    put("country_share.tsv", t);
  }
  {
    std::vector<std::pair<std::string, double>> v;
    for (const auto& r : rows)
      if (!r["objects_per_user"].is_null()) v.emplace_back(r["country"], r["objects_per_user"].get<double>());
    std::stable_sort(v.begin(), v.end(), [](const auto& a, const auto& b) {
      return a.second != b.second ? a.second > b.second : a.first < b.first;
    });
    std::string t = "country\tobjects_per_user\n";
    for (const auto& [c, x] : v) t += c + '\t' + detail::format_double(x) + '\n';
    put("objects_per_user.tsv", t);
  }

  const json fits = report.contains("fits") && report["fits"].is_object() ? report["fits"] : json::object();
  for (const std::string axis : {"population", "area"}) {
    std::string points = "scope\tcountry\tx\ty\n";
    std::string lines = "scope\tx\ty\n";
    auto add_scope = [&](const std::string& scope, const json& f) {
      double lo = std::numeric_limits<double>::infinity(), hi = -lo;
      for (const auto& p : f.value("points", json::array())) {
        const double x = p["x"], y = p["y"];
        points += scope + '\t' + p["country"].get<std::string>() + '\t' + detail::format_double(x) + '\t' +
                  detail::format_double(y) + '\n';
        lo = std::min(lo, x);
        hi = std::max(hi, x);
      }
      if (!f.contains("fit") || f["fit"].is_null()) return;
      const double beta = f["fit"]["beta"], a = f["fit"]["log_intercept"];
      for (std::size_t i = 0; i < fit_line_samples; ++i) {
        const double t = static_cast<double>(i) / static_cast<double>(fit_line_samples - 1);
        const double lx = std::log(lo) + t * (std::log(hi) - std::log(lo));
        const double x = std::exp(lx);
        lines += scope + '\t' + detail::format_double(x) + '\t' + detail::format_double(std::exp(a + beta * std::log(x))) + '\n';
      }
    };
    if (fits.contains("world") && fits["world"].contains(axis)) add_scope("world", fits["world"][axis]);
    std::string summary = "region\tcountries\tpopulation\tbeta\tr_squared_percent\tregime\tnegative_beta\n";
    if (fits.contains("regions") && fits["regions"].contains(axis)) {
      for (const auto& rf : fits["regions"][axis]) {
        add_scope(rf["region"], rf);
        summary += rf["region"].get<std::string>() + '\t' + detail::cell(rf["country_count"]) + '\t' +
                   detail::cell(rf["aggregate_population"]) + '\t';
        if (rf["fit"].is_null()) {
          summary += "\t\tunfittable\t\n";
        } else {
          const auto& f = rf["fit"];
          summary += detail::format_double(f["beta"].get<double>()) + '\t' +
                     detail::format_double(100.0 * f["r_squared"].get<double>()) + '\t' + f["regime"].get<std::string>() +
                     '\t' + (f["negative_beta"].get<bool>() ? "1" : "0") + '\n';
        }
      }
    }
    put("scaling_points_" + axis + ".tsv", points);
    put("scaling_lines_" + axis + ".tsv", lines);
    put("region_summary_" + axis + ".tsv", summary);
  }
  return written;
}

}  // namespace geoscale
