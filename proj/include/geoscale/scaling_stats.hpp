#pragma once

// Power-law fits on log-log axes, scaling-regime classification, per-region
// fits and Pearson correlation of fit quality against region covariates.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "geoscale/attractiveness.hpp"
#include "geoscale/common.hpp"
#include "geoscale/covariates.hpp"

namespace geoscale {

enum class Regime { Sublinear, Linear, Superlinear };

inline std::string_view to_string(Regime r) {
  switch (r) {
    case Regime::Sublinear: return "sublinear";
    case Regime::Linear: return "linear";
    case Regime::Superlinear: return "superlinear";
  }
  return "?";
}

/// Linear iff |beta - 1| <= tolerance; otherwise the side of 1 it falls on.
inline Regime classify(double beta, double tolerance = 0.0) {
  if (tolerance < 0) throw ContractViolation("classify tolerance must be >= 0");
  if (std::abs(beta - 1.0) <= tolerance) return Regime::Linear;
  return beta < 1.0 ? Regime::Sublinear : Regime::Superlinear;
}

class StatsError : public Error {
 public:
  enum class Kind { InsufficientPoints, DegenerateAbscissa, DegenerateVariance };

  StatsError(Kind kind, const std::string& detail) : Error(std::string(kind_name(kind)) + ": " + detail), kind_(kind) {}
  Kind kind() const { return kind_; }

  static const char* kind_name(Kind k) {
    switch (k) {
      case Kind::InsufficientPoints: return "InsufficientPoints";
      case Kind::DegenerateAbscissa: return "DegenerateAbscissa";
      case Kind::DegenerateVariance: return "DegenerateVariance";
    }
    return "?";
  }

 private:
  Kind kind_;
};

struct XY {
  double x = 0;
  double y = 0;
};

/// y ~ exp(log_intercept) * x^beta, fitted by OLS on natural logs.
struct PowerLawFit {
  double beta = 0;
  double log_intercept = 0;
  /// Coefficient of determination in log-log space.
  double r_squared = 0;
  std::size_t n_points = 0;
  Regime regime = Regime::Linear;
};

inline constexpr std::size_t min_fit_points = 3;

inline PowerLawFit fit_power_law(std::span<const XY> pairs, double tolerance = 0.0) {
  const std::size_t n = pairs.size();
  if (n < min_fit_points)
    throw StatsError(StatsError::Kind::InsufficientPoints, "need at least 3 points, got " + std::to_string(n));
  std::vector<double> lx(n), ly(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!(pairs[i].x > 0) || !(pairs[i].y > 0)) throw ContractViolation("power-law fit needs positive x and y");
    lx[i] = std::log(pairs[i].x);
    ly[i] = std::log(pairs[i].y);
  }
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += lx[i];
    my += ly[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = lx[i] - mx, dy = ly[i] - my;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  if (sxx == 0) throw StatsError(StatsError::Kind::DegenerateAbscissa, "all x values are identical");

  PowerLawFit fit;
  fit.n_points = n;
  fit.beta = sxy / sxx;
  fit.log_intercept = my - fit.beta * mx;
  double sse = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = ly[i] - (fit.log_intercept + fit.beta * lx[i]);
    sse += r * r;
  }
  fit.r_squared = syy == 0 ? 1.0 : std::clamp(1.0 - sse / syy, 0.0, 1.0);
  fit.regime = classify(fit.beta, tolerance);
  return fit;
}

enum class FitAxis { Population, Area };

inline std::string_view to_string(FitAxis a) { return a == FitAxis::Population ? "population" : "area"; }

enum class ExclusionReason { ZeroAttractiveness, MissingCovariate, NonPositiveCovariate };

inline std::string_view to_string(ExclusionReason r) {
  switch (r) {
    case ExclusionReason::ZeroAttractiveness: return "ZeroAttractiveness";
    case ExclusionReason::MissingCovariate: return "MissingCovariate";
    case ExclusionReason::NonPositiveCovariate: return "NonPositiveCovariate";
  }
  return "?";
}

struct Exclusion {
  std::string country;
  ExclusionReason reason;
  friend bool operator==(const Exclusion&, const Exclusion&) = default;
};

struct FitInputs {
  std::vector<XY> pairs;
  /// Country of each pair, parallel to `pairs`.
  std::vector<std::string> countries;
  std::vector<Exclusion> exclusions;
};

/// (covariate, fraction_of_total) for every country where both are positive.
/// Covariate problems take precedence over zero attractiveness.
inline FitInputs filter_fit_inputs(const AttractivenessTable<std::string>& table, const CovariateTable& covariates,
                                   FitAxis axis, const std::set<std::string>* only = nullptr) {
  FitInputs out;
  for (const auto& [code, row] : table.rows) {
    if (only && !only->count(code)) continue;
    std::optional<double> x;
    if (auto it = covariates.find(code); it != covariates.end())
      x = axis == FitAxis::Population ? it->second.population_avg : it->second.area_avg;
    if (!x) {
      out.exclusions.push_back({code, ExclusionReason::MissingCovariate});
    } else if (!(*x > 0)) {
      out.exclusions.push_back({code, ExclusionReason::NonPositiveCovariate});
    } else if (!(row.fraction_of_total > 0)) {
      out.exclusions.push_back({code, ExclusionReason::ZeroAttractiveness});
    } else {
      out.pairs.push_back({*x, row.fraction_of_total});
      out.countries.push_back(code);
    }
  }
  return out;
}

struct RegionFit {
  std::string region;
  /// Number of (x, y) pairs that entered the fit.
  std::size_t country_count = 0;
  double aggregate_population = 0;
  /// Empty when the region had fewer than three usable countries.
  std::optional<PowerLawFit> fit;
  FitInputs inputs;
};

using RegionFitTable = std::vector<RegionFit>;

/// One fit per region, best R^2 first; unfittable regions follow by name.
inline RegionFitTable fit_by_region(const AttractivenessTable<std::string>& table, const CovariateTable& covariates,
                                    const RegionSpec& regions, FitAxis axis, double tolerance = 0.0) {
  RegionFitTable out;
  for (const auto& [name, members] : regions.members) {
    RegionFit rf;
    rf.region = name;
    rf.inputs = filter_fit_inputs(table, covariates, axis, &members);
    rf.country_count = rf.inputs.pairs.size();
    for (const auto& c : rf.inputs.countries)
      if (auto it = covariates.find(c); it != covariates.end() && it->second.population_avg)
        rf.aggregate_population += *it->second.population_avg;
    if (rf.country_count >= min_fit_points) {
      try {
        rf.fit = fit_power_law(rf.inputs.pairs, tolerance);
      } catch (const StatsError&) {
        // degenerate abscissa: reported as unfittable
      }
    }
    out.push_back(std::move(rf));
  }
  std::stable_sort(out.begin(), out.end(), [](const RegionFit& a, const RegionFit& b) {
    if (a.fit.has_value() != b.fit.has_value()) return a.fit.has_value();
    if (a.fit && a.fit->r_squared != b.fit->r_squared) return a.fit->r_squared > b.fit->r_squared;
    return a.region < b.region;
  });
  return out;
}

struct CorrelationResult {
  std::string variable;
  std::optional<double> r;
  std::size_t n = 0;
  /// Set when r could not be computed.
  std::optional<std::string> error;
};

/// Sample Pearson correlation coefficient.
inline CorrelationResult pearson(std::span<const double> xs, std::span<const double> ys, std::string variable = {}) {
  if (xs.size() != ys.size()) throw ContractViolation("pearson requires sequences of equal length");
  const std::size_t n = xs.size();
  if (n < 2) throw StatsError(StatsError::Kind::InsufficientPoints, "pearson needs at least 2 points");
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = xs[i] - mx, dy = ys[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (sxx == 0 || syy == 0) throw StatsError(StatsError::Kind::DegenerateVariance, "zero variance");
  CorrelationResult res;
  res.variable = std::move(variable);
  res.n = n;
  res.r = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
  return res;
}

enum class Aggregation { Sum, PopulationWeightedMean };

inline std::string_view to_string(Aggregation a) {
  return a == Aggregation::Sum ? "sum" : "population_weighted_mean";
}

/// Extensive quantities add up; density is averaged with population weights.
inline std::map<std::string, Aggregation> default_aggregation() {
  return {{"area", Aggregation::Sum},       {"population", Aggregation::Sum},
          {"gdp", Aggregation::Sum},        {"urban_population", Aggregation::Sum},
          {"coastline", Aggregation::Sum},  {"density", Aggregation::PopulationWeightedMean}};
}

/// region -> variable -> aggregate over member countries that carry the value.
using RegionAggregates = std::map<std::string, std::map<std::string, double>>;

inline RegionAggregates aggregate_region_covariates(const RegionSpec& regions, const CovariateTable& covariates,
                                                    const std::map<std::string, Aggregation>& modes) {
  RegionAggregates out;
  for (const auto& [region, members] : regions.members) {
    for (const auto& [var, mode] : modes) {
      double acc = 0, weight = 0;
      std::size_t used = 0;
      for (const auto& code : members) {
        auto it = covariates.find(code);
        if (it == covariates.end()) continue;
        const auto v = it->second.get(var);
        if (!v) continue;
        if (mode == Aggregation::Sum) {
          acc += *v;
          ++used;
        } else if (const auto w = it->second.population_avg) {
          acc += *v * *w;
          weight += *w;
          ++used;
        }
      }
      if (used == 0) continue;
      if (mode == Aggregation::Sum)
        out[region][var] = acc;
      else if (weight > 0)
        out[region][var] = acc / weight;
    }
  }
  return out;
}

/// Correlates each fitted region's R^2 with each covariate. A failure on
/// one covariate is recorded on its result and does not affect the others.
inline std::vector<CorrelationResult> correlate_fit_quality(const RegionFitTable& fits,
                                                            const RegionAggregates& aggregates,
                                                            const std::vector<std::string>& variables) {
  std::vector<CorrelationResult> out;
  for (const auto& var : variables) {
    std::vector<double> r2, xs;
    for (const auto& rf : fits) {
      if (!rf.fit) continue;
      auto it = aggregates.find(rf.region);
      if (it == aggregates.end()) continue;
      auto jt = it->second.find(var);
      if (jt == it->second.end()) continue;
      r2.push_back(rf.fit->r_squared);
      xs.push_back(jt->second);
    }
    try {
      out.push_back(pearson(r2, xs, var));
    } catch (const StatsError& e) {
      CorrelationResult failed;
      failed.variable = var;
      failed.n = r2.size();
      failed.error = StatsError::kind_name(e.kind());
      out.push_back(std::move(failed));
    }
  }
  return out;
}

}  // namespace geoscale
