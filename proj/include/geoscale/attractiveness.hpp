#pragma once

// Per-country attractiveness: objects created by foreign users, plus the
// per-capita, per-area and per-user normalizations.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "geoscale/common.hpp"
#include "geoscale/covariates.hpp"
#include "geoscale/home_inference.hpp"

namespace geoscale {

template <class Country>
struct GeoEvent {
  std::string user_id;
  Country country;
};

enum class FractionDenominator { ForeignObjects, AllObjects };

inline std::string_view to_string(FractionDenominator d) {
  return d == FractionDenominator::ForeignObjects ? "foreign_objects" : "all_objects";
}

enum class CovariateStatus { Present, Missing, NonPositive };

inline std::string_view to_string(CovariateStatus s) {
  switch (s) {
    case CovariateStatus::Present: return "present";
    case CovariateStatus::Missing: return "missing";
    case CovariateStatus::NonPositive: return "non_positive";
  }
  return "?";
}

struct AttractivenessRow {
  std::uint64_t foreign_object_count = 0;
  std::uint64_t foreign_user_count = 0;
  std::uint64_t total_object_count = 0;
  std::uint64_t total_user_count = 0;
  double fraction_of_total = 0;
  std::optional<double> users_per_resident;
  std::optional<double> objects_per_km2;
  std::optional<double> objects_per_user;
  CovariateStatus population_status = CovariateStatus::Missing;
  CovariateStatus area_status = CovariateStatus::Missing;

  friend bool operator==(const AttractivenessRow&, const AttractivenessRow&) = default;
};

template <class Country>
struct AttractivenessTable {
  std::map<Country, AttractivenessRow> rows;
  FractionDenominator denominator = FractionDenominator::ForeignObjects;

  friend bool operator==(const AttractivenessTable&, const AttractivenessTable&) = default;
};

namespace detail {

struct CountryTally {
  std::uint64_t foreign_objects = 0;
  std::uint64_t total_objects = 0;
  std::unordered_set<std::string_view> users;
  std::unordered_set<std::string_view> foreign_users;
};

}  // namespace detail

/// Counts every event toward its country's totals; events of users whose home
/// is another country also count as foreign. Work is sharded by user so
/// distinct-user counts merge by plain summation.
template <class Country, class Events>
AttractivenessTable<Country> compute_attractiveness(const Events& events, const AssignmentMap<Country>& assignments,
                                                    FractionDenominator denominator = FractionDenominator::ForeignObjects,
                                                    std::span<const Country> universe = {}, unsigned workers = 1) {
  const unsigned shards = std::max(1u, workers);
  std::vector<std::map<Country, detail::CountryTally>> partial(shards);
  std::vector<std::string> missing(shards);
  const std::hash<std::string_view> hasher;

  detail::parallel_chunks(shards, shards, [&](std::size_t begin, std::size_t end, unsigned) {
    for (std::size_t shard = begin; shard < end; ++shard) {
      auto& tallies = partial[shard];
      for (const auto& e : events) {
        const std::string_view user = e.user_id;
        if (shards > 1 && hasher(user) % shards != shard) continue;
        auto it = assignments.find(e.user_id);
        if (it == assignments.end()) {
          missing[shard] = e.user_id;
          return;
        }
        auto& t = tallies[e.country];
        ++t.total_objects;
        t.users.insert(user);
        if (foreignness(it->second, e.country) == Foreignness::ForeignUser) {
          ++t.foreign_objects;
          t.foreign_users.insert(user);
        }
      }
    }
  });
  for (const auto& m : missing)
    if (!m.empty()) throw ContractViolation("user '" + m + "' has no home assignment");

  AttractivenessTable<Country> table;
  table.denominator = denominator;
  for (const auto& c : universe) table.rows[c];
  for (const auto& shard : partial) {
    for (const auto& [country, t] : shard) {
      auto& row = table.rows[country];
      row.foreign_object_count += t.foreign_objects;
      row.total_object_count += t.total_objects;
      row.total_user_count += t.users.size();
      row.foreign_user_count += t.foreign_users.size();
    }
  }
  std::uint64_t denom = 0;
  for (const auto& [_, row] : table.rows)
    denom += denominator == FractionDenominator::ForeignObjects ? row.foreign_object_count : row.total_object_count;
  for (auto& [_, row] : table.rows)
    row.fraction_of_total = denom == 0 ? 0.0 : static_cast<double>(row.foreign_object_count) / static_cast<double>(denom);
  return table;
}

/// Re-keys a table through `key_of` (e.g. boundary index -> country code).
template <class From, class KeyOf>
auto rekey(const AttractivenessTable<From>& table, KeyOf&& key_of) {
  using To = std::decay_t<decltype(key_of(std::declval<const From&>()))>;
  AttractivenessTable<To> out;
  out.denominator = table.denominator;
  for (const auto& [k, row] : table.rows) out.rows.emplace(key_of(k), row);
  return out;
}

/// Fills the normalized ratios. A ratio is only computed over a positive
/// denominator; anything else leaves it missing with the cause recorded.
inline void normalized_stats(AttractivenessTable<std::string>& table, const CovariateTable& covariates) {
  auto status_of = [](const std::optional<double>& v) {
    if (!v) return CovariateStatus::Missing;
    return *v > 0 ? CovariateStatus::Present : CovariateStatus::NonPositive;
  };
  for (auto& [code, row] : table.rows) {
    std::optional<double> pop, area;
    if (auto it = covariates.find(code); it != covariates.end()) {
      pop = it->second.population_avg;
      area = it->second.area_avg;
    }
    row.population_status = status_of(pop);
    row.area_status = status_of(area);
    row.users_per_resident.reset();
    row.objects_per_km2.reset();
    row.objects_per_user.reset();
    if (row.population_status == CovariateStatus::Present)
      row.users_per_resident = static_cast<double>(row.total_user_count) / *pop;
    if (row.area_status == CovariateStatus::Present)
      row.objects_per_km2 = static_cast<double>(row.total_object_count) / *area;
    if (row.total_user_count > 0)
      row.objects_per_user = static_cast<double>(row.total_object_count) / static_cast<double>(row.total_user_count);
  }
}

inline const std::vector<std::string>& attractiveness_metrics() {
  static const std::vector<std::string> names{
      "foreign_object_count", "foreign_user_count", "total_object_count", "total_user_count",
      "fraction_of_total",    "users_per_resident", "objects_per_km2",    "objects_per_user"};
  return names;
}

inline std::optional<double> metric_value(const AttractivenessRow& row, std::string_view metric) {
  if (metric == "foreign_object_count") return static_cast<double>(row.foreign_object_count);
  if (metric == "foreign_user_count") return static_cast<double>(row.foreign_user_count);
  if (metric == "total_object_count") return static_cast<double>(row.total_object_count);
  if (metric == "total_user_count") return static_cast<double>(row.total_user_count);
  if (metric == "fraction_of_total") return row.fraction_of_total;
  if (metric == "users_per_resident") return row.users_per_resident;
  if (metric == "objects_per_km2") return row.objects_per_km2;
  if (metric == "objects_per_user") return row.objects_per_user;
  throw Error("unknown metric '" + std::string(metric) + "'");
}

/// Highest values first; ties by ascending country code. Countries without a
/// value for the metric are skipped.
inline std::vector<std::pair<std::string, double>> top_k(const AttractivenessTable<std::string>& table,
                                                         std::string_view metric, std::size_t k) {
  if (k == 0) throw ContractViolation("top_k requires k >= 1");
  std::vector<std::pair<std::string, double>> out;
  for (const auto& [code, row] : table.rows)
    if (auto v = metric_value(row, metric)) out.emplace_back(code, *v);
  if (table.rows.empty()) metric_value(AttractivenessRow{}, metric);
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  if (out.size() > k) out.resize(k);
  return out;
}

}  // namespace geoscale
