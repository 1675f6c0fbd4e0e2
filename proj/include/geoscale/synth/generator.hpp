#pragma once

// Synthetic worlds with planted ground truth.
//
// Countries are disjoint axis-aligned boxes. Every country receives a planted
// number of foreign objects A = a * p^beta * exp(noise) where beta is its
// region's exponent; the population p is solved back from the integer A so
// the log-log relation holds exactly up to the drawn noise. Each user's home
// country strictly dominates their activity in both objects and distinct days.
//
// Random numbers come from std::mt19937_64 seeded with SynthConfig::seed.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "geoscale/common.hpp"

namespace geoscale::synth {

struct SynthConfig {
  std::uint64_t seed = 1;
  std::size_t n_countries = 200;
  std::size_t n_users = 1000;
  /// One entry per region; countries are split into contiguous equal blocks.
  std::vector<double> region_betas{0.7, 1.2};
  double population_min = 1e5;
  double population_max = 1e8;
  /// Foreign objects planted at population_min (the scale a of the law).
  double objects_at_min_population = 1;
  /// Standard deviation of the log-normal noise on A.
  double noise_sigma = 0;
  /// Share of users that travel abroad at all.
  double foreign_trip_probability = 0.8;
  std::size_t trip_objects_min = 1;
  std::size_t trip_objects_max = 12;
  std::size_t days_per_trip_min = 1;
  std::size_t days_per_trip_max = 4;
  double non_geotag_rate = 0;
  double bad_date_rate = 0;

  void validate() const {
    auto rate_ok = [](double r) { return r >= 0 && r <= 1; };
    if (!rate_ok(foreign_trip_probability) || !rate_ok(non_geotag_rate) || !rate_ok(bad_date_rate) ||
        non_geotag_rate + bad_date_rate >= 1)
      throw Error("synth: rates must lie in [0, 1] and junk rates must sum below 1");
    if (n_countries == 0 || region_betas.empty() || region_betas.size() > n_countries)
      throw Error("synth: need at least one country per region");
    if (n_countries > 120 * 360) throw Error("synth: too many countries for the one-degree plane grid");
    if (n_users == 0) throw Error("synth: need at least one user");
    if (!(population_min > 0) || population_max < population_min) throw Error("synth: bad population range");
    if (!(objects_at_min_population > 0) || noise_sigma < 0) throw Error("synth: bad attractiveness scale");
    if (trip_objects_min == 0 || trip_objects_max < trip_objects_min || days_per_trip_min == 0 ||
        days_per_trip_max < days_per_trip_min)
      throw Error("synth: bad trip ranges");
    if (n_users < 2 && n_countries > 1) throw Error("synth: foreign trips need at least two users");
  }
};

enum class LineLabel { Kept, NotGeotagged, BadDate };

struct CountryTruth {
  std::string region;
  double population = 0;
  double area = 0;
  std::uint64_t foreign_objects = 0;
  std::uint64_t foreign_users = 0;
  std::uint64_t total_objects = 0;
  std::uint64_t total_users = 0;
};

struct GroundTruth {
  std::map<std::string, std::string> home_of_user;
  std::map<std::string, CountryTruth> countries;
  std::map<std::string, double> region_betas;
  /// Parallel to SynthWorld::metadata_lines.
  std::vector<LineLabel> line_labels;
};

struct SynthWorld {
  std::vector<std::string> metadata_lines;
  nlohmann::json boundaries;
  std::string population_table;
  std::string area_table;
  std::string covariate_table;
  std::string region_table;
  std::string alias_table;
  GroundTruth truth;
};

namespace detail {

inline std::string country_code(std::size_t i) {
  std::string s(3, 'A');
  for (int k = 2; k >= 0; --k) {
    s[k] = static_cast<char>('A' + i % 26);
    i /= 26;
  }
  return s;
}

inline std::string region_name(std::size_t r) { return "Region " + std::string(1, static_cast<char>('A' + r % 26)) + (r >= 26 ? std::to_string(r / 26) : ""); }

inline std::string number(double v) { return geoscale::detail::format_double(v); }

// Days since 1970-01-01 to a Y-M-D string (proleptic Gregorian).
inline std::string civil_date(std::int64_t z) {
  z += 719468;
  const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const std::int64_t y = static_cast<std::int64_t>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  const unsigned d = doy - (153 * mp + 2) / 5 + 1;
  const unsigned m = mp < 10 ? mp + 3 : mp - 9;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04lld-%02u-%02u", static_cast<long long>(y + (m <= 2)), m, d);
  return buf;
}

// 2004-01-01 and the number of days through 2014-12-31.
inline constexpr std::int64_t first_day = 12418;
inline constexpr std::int64_t day_span = 4018;

}  // namespace detail

/// Metadata lines whose labels are known: exactly round(n * rate) lines of
/// each junk kind, the rest well formed, shuffled together.
inline std::pair<std::vector<std::string>, std::vector<LineLabel>> generate_labelled_lines(
    std::size_t n_lines, double non_geotag_rate, double bad_date_rate, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto n_ng = static_cast<std::size_t>(std::llround(static_cast<double>(n_lines) * non_geotag_rate));
  const auto n_bd = static_cast<std::size_t>(std::llround(static_cast<double>(n_lines) * bad_date_rate));
  if (n_ng + n_bd > n_lines) throw Error("synth: junk rates exceed line count");
  std::vector<LineLabel> labels(n_lines, LineLabel::Kept);
  std::fill_n(labels.begin(), n_ng, LineLabel::NotGeotagged);
  std::fill_n(labels.begin() + static_cast<std::ptrdiff_t>(n_ng), n_bd, LineLabel::BadDate);
  std::shuffle(labels.begin(), labels.end(), rng);
  std::uniform_real_distribution<double> lon(-179.0, 179.0), lat(-89.0, 89.0);
  std::uniform_int_distribution<std::int64_t> day(0, detail::day_span - 1);
  std::vector<std::string> lines;
  lines.reserve(n_lines);
  for (std::size_t i = 0; i < n_lines; ++i) {
    const std::string id = "obj" + std::to_string(i);
    const std::string user = "user" + std::to_string(i % 97);
    const std::string when = detail::civil_date(detail::first_day + day(rng)) + " 12:00:00";
    switch (labels[i]) {
      case LineLabel::Kept:
        lines.push_back(id + '\t' + user + '\t' + when + '\t' + detail::number(lon(rng)) + '\t' + detail::number(lat(rng)));
        break;
      case LineLabel::NotGeotagged: lines.push_back(id + '\t' + user + '\t' + when + "\t\t"); break;
      case LineLabel::BadDate:
        lines.push_back(id + '\t' + user + "\tnot-a-date\t" + detail::number(lon(rng)) + '\t' + detail::number(lat(rng)));
        break;
    }
  }
  return {std::move(lines), std::move(labels)};
}

inline SynthWorld generate_world(const SynthConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto uniform_size = [&](std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  };

  SynthWorld world;
  auto& truth = world.truth;
  const std::size_t n = cfg.n_countries;
  const std::size_t n_regions = cfg.region_betas.size();

  // Plane layout: a grid over lon [-180, 180] x lat [-60, 60], boxes inset by 10%.
  const auto cols = static_cast<std::size_t>(std::ceil(std::sqrt(3.0 * static_cast<double>(n))));
  const std::size_t rows = (n + cols - 1) / cols;
  const double cw = 360.0 / static_cast<double>(cols), ch = 120.0 / static_cast<double>(rows);
  struct Cell {
    double x0, y0, x1, y1;
  };
  std::vector<Cell> boxes(n);
  std::vector<std::string> codes(n);
  std::vector<std::size_t> region_of(n);
  world.boundaries = {{"type", "FeatureCollection"}, {"features", nlohmann::json::array()}};
  for (std::size_t i = 0; i < n; ++i) {
    const double cx = -180.0 + cw * static_cast<double>(i % cols);
    const double cy = -60.0 + ch * static_cast<double>(i / cols);
    boxes[i] = {cx + 0.1 * cw, cy + 0.1 * ch, cx + 0.9 * cw, cy + 0.9 * ch};
    codes[i] = detail::country_code(i);
    region_of[i] = i * n_regions / n;
    const auto& b = boxes[i];
    nlohmann::json ring = nlohmann::json::array(
        {{b.x0, b.y0}, {b.x1, b.y0}, {b.x1, b.y1}, {b.x0, b.y1}, {b.x0, b.y0}});
    world.boundaries["features"].push_back(
        {{"type", "Feature"},
         {"properties", {{"code", codes[i]}, {"name", "Synthland " + codes[i]}}},
         {"geometry", {{"type", "Polygon"}, {"coordinates", nlohmann::json::array({ring})}}}});
  }
  for (std::size_t r = 0; r < n_regions; ++r) truth.region_betas[detail::region_name(r)] = cfg.region_betas[r];

  // Planted foreign-object totals and back-solved populations.
  const double log_pmin = std::log(cfg.population_min), log_pmax = std::log(cfg.population_max);
  std::vector<std::uint64_t> planted(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double beta = cfg.region_betas[region_of[i]];
    const double a = cfg.objects_at_min_population / std::pow(cfg.population_min, beta);
    const double p_draw = std::exp(log_pmin + (log_pmax - log_pmin) * unit(rng));
    const double eps = cfg.noise_sigma > 0 ? cfg.noise_sigma * gauss(rng) : 0.0;
    const double target = a * std::pow(p_draw, beta) * std::exp(eps);
    planted[i] = static_cast<std::uint64_t>(std::max<long long>(1, std::llround(target)));
    auto& ct = truth.countries[codes[i]];
    ct.region = detail::region_name(region_of[i]);
    ct.population = std::exp((std::log(static_cast<double>(planted[i])) - std::log(a) - eps) / beta);
    ct.area = std::exp(std::log(1e3) + (std::log(1e7) - std::log(1e3)) * unit(rng));
  }

  // Users: homes round-robin; travellers receive trip chunks.
  std::vector<std::string> users(cfg.n_users);
  std::vector<std::size_t> home(cfg.n_users);
  std::vector<std::size_t> travellers;
  for (std::size_t u = 0; u < cfg.n_users; ++u) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "u%06zu", u);
    users[u] = buf;
    home[u] = u % n;
    truth.home_of_user[users[u]] = codes[home[u]];
    if (unit(rng) < cfg.foreign_trip_probability) travellers.push_back(u);
  }
  if (travellers.empty()) travellers.push_back(0);

  struct Visit {
    std::uint64_t objects = 0;
    std::uint64_t days = 0;
  };
  std::vector<std::map<std::size_t, Visit>> visits(cfg.n_users);
  for (std::size_t c = 0; c < n; ++c) {
    std::uint64_t left = planted[c];
    while (left > 0) {
      const auto chunk = std::min<std::uint64_t>(left, uniform_size(cfg.trip_objects_min, cfg.trip_objects_max));
      std::size_t u;
      std::size_t guard = 0;
      do {
        u = travellers[uniform_size(0, travellers.size() - 1)];
        if (++guard > 64 * travellers.size()) throw Error("synth: no traveller with a foreign home available");
      } while (home[u] == c);
      auto& v = visits[u][c];
      v.objects += chunk;
      v.days += std::min<std::uint64_t>(chunk, uniform_size(cfg.days_per_trip_min, cfg.days_per_trip_max));
      left -= chunk;
    }
  }

  // Event emission.
  struct Event {
    std::size_t user, country;
    std::int64_t day;
  };
  std::vector<Event> events;
  auto emit = [&](std::size_t u, std::size_t c, std::uint64_t objects, std::uint64_t days) {
    days = std::min<std::uint64_t>(days, detail::day_span);
    std::set<std::int64_t> chosen;
    std::uniform_int_distribution<std::int64_t> pick(0, detail::day_span - 1);
    while (chosen.size() < days) chosen.insert(pick(rng));
    std::vector<std::int64_t> day_list(chosen.begin(), chosen.end());
    for (std::uint64_t k = 0; k < objects; ++k) {
      const auto d = k < days ? day_list[k] : day_list[uniform_size(0, day_list.size() - 1)];
      events.push_back({u, c, detail::first_day + d});
    }
  };
  for (std::size_t u = 0; u < cfg.n_users; ++u) {
    std::uint64_t max_obj = 0, max_days = 0;
    for (const auto& [c, v] : visits[u]) {
      const auto days = std::min<std::uint64_t>(v.days, v.objects);
      emit(u, c, v.objects, days);
      max_obj = std::max(max_obj, v.objects);
      max_days = std::max(max_days, days);
      auto& ct = truth.countries[codes[c]];
      ct.foreign_objects += v.objects;
      ct.foreign_users += 1;
      ct.total_objects += v.objects;
      ct.total_users += 1;
    }
    const std::uint64_t home_days = max_days + 1 + uniform_size(0, cfg.days_per_trip_max);
    if (home_days > static_cast<std::uint64_t>(detail::day_span)) throw Error("synth: home activity exceeds the date range");
    const std::uint64_t home_objects = std::max(home_days, max_obj + 1 + uniform_size(0, cfg.trip_objects_max));
    emit(u, home[u], home_objects, home_days);
    auto& ht = truth.countries[codes[home[u]]];
    ht.total_objects += home_objects;
    ht.total_users += 1;
  }
  std::shuffle(events.begin(), events.end(), rng);

  // Metadata lines, with junk lines interleaved at the configured rates.
  const double junk = cfg.non_geotag_rate + cfg.bad_date_rate;
  const auto total = static_cast<std::size_t>(std::llround(static_cast<double>(events.size()) / (1.0 - junk)));
  const auto n_ng = static_cast<std::size_t>(std::llround(static_cast<double>(total) * cfg.non_geotag_rate));
  const auto n_bd = static_cast<std::size_t>(std::llround(static_cast<double>(total) * cfg.bad_date_rate));
  std::vector<LineLabel> labels(events.size(), LineLabel::Kept);
  labels.insert(labels.end(), n_ng, LineLabel::NotGeotagged);
  labels.insert(labels.end(), n_bd, LineLabel::BadDate);
  std::shuffle(labels.begin(), labels.end(), rng);

  std::uniform_int_distribution<int> hour(0, 23), minute(0, 59);
  std::size_t next_event = 0;
  world.metadata_lines.reserve(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    char id[24];
    std::snprintf(id, sizeof id, "m%09zu", i);
    char clock[16];
    std::snprintf(clock, sizeof clock, " %02d:%02d:00", hour(rng), minute(rng));
    if (labels[i] == LineLabel::Kept) {
      const auto& e = events[next_event++];
      const auto& b = boxes[e.country];
      const double lon = b.x0 + (b.x1 - b.x0) * (0.05 + 0.9 * unit(rng));
      const double lat = b.y0 + (b.y1 - b.y0) * (0.05 + 0.9 * unit(rng));
      world.metadata_lines.push_back(std::string(id) + '\t' + users[e.user] + '\t' + detail::civil_date(e.day) + clock +
                                     '\t' + detail::number(lon) + '\t' + detail::number(lat));
    } else if (labels[i] == LineLabel::NotGeotagged) {
      world.metadata_lines.push_back(std::string(id) + '\t' + users[i % cfg.n_users] + '\t' +
                                     detail::civil_date(detail::first_day) + clock + "\t\t");
    } else {
      world.metadata_lines.push_back(std::string(id) + '\t' + users[i % cfg.n_users] + "\t31/02/2010\t0.5\t0.5");
    }
  }
  truth.line_labels = std::move(labels);

  // Covariate tables. Population ramps symmetrically around p so the
  // 2004-2014 mean is p; 2009 is left blank for every fifth country.
  std::string pop = "country", area = "country";
  for (int y = 2004; y <= 2014; ++y) {
    pop += '\t' + std::to_string(y);
    area += '\t' + std::to_string(y);
  }
  pop += '\n';
  area += '\n';
  std::string cov = "name\tgdp\tdensity\tcoastline\turban_population\n";
  std::string regions = "region\tcountry\n";
  std::string aliases = "alias\tcode\n";
  for (std::size_t i = 0; i < n; ++i) {
    const auto& ct = truth.countries[codes[i]];
    pop += codes[i];
    area += codes[i];
    for (int y = 2004; y <= 2014; ++y) {
      const int k = y - 2009;
      area += '\t' + detail::number(ct.area);
      pop += '\t';
      if (k == 0 && i % 5 == 0) continue;
      pop += detail::number(ct.population * (1.0 + 0.01 * k));
    }
    pop += '\n';
    area += '\n';
    const std::string name = "Synthland " + codes[i];
    cov += name + '\t' + detail::number(ct.population * (500 + 4e4 * unit(rng))) + '\t' +
           detail::number(ct.population / ct.area) + '\t' + detail::number(1e4 * unit(rng)) + '\t' +
           detail::number(ct.population * unit(rng)) + '\n';
    regions += ct.region + '\t' + codes[i] + '\n';
    aliases += name + '\t' + codes[i] + '\n';
  }
  world.population_table = std::move(pop);
  world.area_table = std::move(area);
  world.covariate_table = std::move(cov);
  world.region_table = std::move(regions);
  world.alias_table = std::move(aliases);
  return world;
}

/// Pipeline config (JSON) pointing at the files written by write_world.
inline nlohmann::json world_config(const std::string& output_dir = "out") {
  return {
      {"inputs",
       {{"metadata", "metadata.tsv"},
        {"boundaries", "boundaries.geojson"},
        {"population", "population.tsv"},
        {"area", "area.tsv"},
        {"covariates", "covariates.tsv"},
        {"regions", "regions.tsv"},
        {"aliases", "aliases.tsv"}}},
      {"columns",
       {{"delimiter", "\t"},
        {"object_id", 0},
        {"user_id", 1},
        {"taken_at", 2},
        {"lon", 3},
        {"lat", 4},
        {"date_formats", {"%Y-%m-%d %H:%M:%S"}}}},
      {"covariate_columns",
       {{"key", "name"},
        {"gdp", "gdp"},
        {"density", "density"},
        {"coastline", "coastline"},
        {"urban_population", "urban_population"}}},
      {"output_dir", output_dir},
  };
}

/// Writes every input file plus config.json into `dir`.
inline void write_world(const SynthWorld& world, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto put = [&](const char* name, const std::string& text) {
    std::ofstream out(dir / name, std::ios::binary);
    out << text;
    if (!out) throw Error("cannot write " + (dir / name).string());
  };
  {
    std::ofstream out(dir / "metadata.tsv", std::ios::binary);
    for (const auto& l : world.metadata_lines) out << l << '\n';
    if (!out) throw Error("cannot write metadata");
  }
  put("boundaries.geojson", world.boundaries.dump());
  put("population.tsv", world.population_table);
  put("area.tsv", world.area_table);
  put("covariates.tsv", world.covariate_table);
  put("regions.tsv", world.region_table);
  put("aliases.tsv", world.alias_table);
  put("config.json", world_config().dump(2) + "\n");
}

}  // namespace geoscale::synth
