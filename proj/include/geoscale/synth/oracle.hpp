#pragma once

// Brute-force reference implementations used to check the production paths.
// Nothing here includes or calls production geometry or counting code.

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace geoscale::oracle {

using Point = std::pair<double, double>;

/// rings[0] is the outer boundary; every further ring is a hole.
struct PolygonRings {
  std::vector<std::vector<Point>> rings;
};

/// Horizontal ray to +x, half-open vertex rule, crossing decided by the sign
/// of a cross product. Every ring toggles parity, so holes subtract.
inline bool point_in_polygon(const PolygonRings& poly, Point p) {
  const auto [px, py] = p;
  bool inside = false;
  for (const auto& ring : poly.rings) {
    const std::size_t n = ring.size();
    for (std::size_t k = 0; k + 1 < n; ++k) {
      auto a = ring[k], b = ring[k + 1];
      if (a.second > b.second) std::swap(a, b);
      // edge spans py with the lower endpoint included and the upper excluded
      if (!(a.second <= py && py < b.second)) continue;
      // point is strictly left of the upward edge a->b
      const double side = (b.first - a.first) * (py - a.second) - (b.second - a.second) * (px - a.first);
      if (side > 0) inside = !inside;
    }
  }
  return inside;
}

/// Smallest planar distance from p to any edge of any ring.
inline double distance_to_edges(const PolygonRings& poly, Point p) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& ring : poly.rings) {
    for (std::size_t k = 0; k + 1 < ring.size(); ++k) {
      const auto [ax, ay] = ring[k];
      const auto [bx, by] = ring[k + 1];
      const double vx = bx - ax, vy = by - ay;
      const double wx = p.first - ax, wy = p.second - ay;
      const double len2 = vx * vx + vy * vy;
      double t = len2 == 0 ? 0 : (wx * vx + wy * vy) / len2;
      t = t < 0 ? 0 : (t > 1 ? 1 : t);
      const double dx = wx - t * vx, dy = wy - t * vy;
      best = std::min(best, std::sqrt(dx * dx + dy * dy));
    }
  }
  return best;
}

struct Event {
  std::string user;
  std::string country;
  /// Any per-day key (e.g. "2010-06-01" or a day number).
  std::string day;
};

struct UserCountryCount {
  std::uint64_t objects = 0;
  std::uint64_t days = 0;
  friend bool operator==(const UserCountryCount&, const UserCountryCount&) = default;
};

struct CountryCount {
  std::uint64_t total_objects = 0;
  std::uint64_t total_users = 0;
  std::uint64_t foreign_objects = 0;
  std::uint64_t foreign_users = 0;
  friend bool operator==(const CountryCount&, const CountryCount&) = default;
};

struct Recount {
  std::map<std::pair<std::string, std::string>, UserCountryCount> per_user_country;
  std::map<std::string, CountryCount> per_country;
};

/// Naive recount. `homes` maps user -> home country; users absent from it (or
/// mapped to nullopt) never contribute foreign activity.
inline Recount recount(const std::vector<Event>& log,
                       const std::map<std::string, std::optional<std::string>>& homes = {}) {
  Recount out;
  std::map<std::pair<std::string, std::string>, std::set<std::string>> days;
  std::map<std::string, std::set<std::string>> users, foreign_users;
  for (const auto& e : log) {
    auto& uc = out.per_user_country[{e.user, e.country}];
    uc.objects += 1;
    days[{e.user, e.country}].insert(e.day);
    auto& c = out.per_country[e.country];
    c.total_objects += 1;
    users[e.country].insert(e.user);
    auto h = homes.find(e.user);
    if (h != homes.end() && h->second && *h->second != e.country) {
      c.foreign_objects += 1;
      foreign_users[e.country].insert(e.user);
    }
  }
  for (auto& [key, uc] : out.per_user_country) uc.days = days[key].size();
  for (auto& [country, c] : out.per_country) {
    c.total_users = users[country].size();
    c.foreign_users = foreign_users[country].size();
  }
  return out;
}

/// Slope, intercept and R^2 of y on x from the raw normal equations
/// (uncentered sums, Cramer's rule).
struct LineFit {
  double slope = 0;
  double intercept = 0;
  double r_squared = 0;
};

inline LineFit normal_equations(const std::vector<double>& x, const std::vector<double>& y) {
  long double n = static_cast<long double>(x.size());
  long double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += static_cast<long double>(x[i]) * x[i];
    sxy += static_cast<long double>(x[i]) * y[i];
  }
  const long double det = n * sxx - sx * sx;
  LineFit f;
  f.slope = static_cast<double>((n * sxy - sx * sy) / det);
  f.intercept = static_cast<double>((sxx * sy - sx * sxy) / det);
  long double ybar = sy / n, ss_tot = 0, ss_res = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const long double pred = static_cast<long double>(f.intercept) + static_cast<long double>(f.slope) * x[i];
    ss_res += (y[i] - pred) * (y[i] - pred);
    ss_tot += (y[i] - ybar) * (y[i] - ybar);
  }
  f.r_squared = ss_tot == 0 ? 1.0 : static_cast<double>(1 - ss_res / ss_tot);
  return f;
}

/// Pearson r straight from the definition with long double accumulation.
inline double pearson_direct(const std::vector<double>& x, const std::vector<double>& y) {
  const long double n = static_cast<long double>(x.size());
  long double sx = 0, sy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
  }
  const long double mx = sx / n, my = sy / n;
  long double cov = 0, vx = 0, vy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    cov += (x[i] - mx) * (y[i] - my);
    vx += (x[i] - mx) * (x[i] - mx);
    vy += (y[i] - my) * (y[i] - my);
  }
  return static_cast<double>(cov / std::sqrt(vx * vy));
}

}  // namespace geoscale::oracle
