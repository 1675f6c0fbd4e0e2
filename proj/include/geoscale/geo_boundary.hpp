#pragma once

// Country boundaries, a bounding-box grid index over them, and point to
// country reverse geocoding.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "geoscale/common.hpp"

namespace geoscale {

struct LonLat {
  double lon = 0;
  double lat = 0;
  friend bool operator==(const LonLat&, const LonLat&) = default;
};

/// Explicitly closed: front() == back().
using Ring = std::vector<LonLat>;

struct Polygon {
  Ring outer;
  std::vector<Ring> holes;
};

struct CountryBoundary {
  std::string code;
  std::string name;
  std::vector<Polygon> polygons;

  std::size_t vertex_count() const {
    std::size_t n = 0;
    for (const auto& p : polygons) {
      n += p.outer.size();
      for (const auto& h : p.holes) n += h.size();
    }
    return n;
  }
};

struct BoundarySet {
  std::vector<CountryBoundary> entries;

  std::size_t size() const { return entries.size(); }
  bool empty() const { return entries.empty(); }

  std::optional<std::size_t> index_of(std::string_view code) const {
    for (std::size_t i = 0; i < entries.size(); ++i)
      if (entries[i].code == code) return i;
    return std::nullopt;
  }

  std::vector<std::string> codes() const {
    std::vector<std::string> out;
    out.reserve(entries.size());
    for (const auto& e : entries) out.push_back(e.code);
    return out;
  }
};

class BoundaryError : public Error {
 public:
  enum class Kind { UnclosedRing, DuplicateCode, NonPolygonal, MissingProperty, AntimeridianSpan, BadDocument };

  BoundaryError(Kind kind, std::string feature, const std::string& detail)
      : Error(std::string(kind_name(kind)) + "(" + feature + "): " + detail),
        kind_(kind),
        feature_(std::move(feature)) {}

  Kind kind() const { return kind_; }
  const std::string& feature() const { return feature_; }

  static const char* kind_name(Kind k) {
    switch (k) {
      case Kind::UnclosedRing: return "UnclosedRing";
      case Kind::DuplicateCode: return "DuplicateCode";
      case Kind::NonPolygonal: return "NonPolygonal";
      case Kind::MissingProperty: return "MissingProperty";
      case Kind::AntimeridianSpan: return "AntimeridianSpan";
      case Kind::BadDocument: return "BadDocument";
    }
    return "?";
  }

 private:
  Kind kind_;
  std::string feature_;
};

/// Property names holding the country code and display name on each feature.
struct BoundaryKeys {
  std::string code = "code";
  std::string name = "name";
};

namespace detail {

inline Ring parse_ring(const nlohmann::json& coords, const std::string& feature) {
  using K = BoundaryError::Kind;
  if (!coords.is_array()) throw BoundaryError(K::BadDocument, feature, "ring is not an array");
  Ring ring;
  ring.reserve(coords.size());
  for (const auto& pos : coords) {
    if (!pos.is_array() || pos.size() < 2 || !pos[0].is_number() || !pos[1].is_number())
      throw BoundaryError(K::BadDocument, feature, "position must be [lon, lat]");
    const double lon = pos[0].get<double>();
    const double lat = pos[1].get<double>();
    if (!(lon >= -180 && lon <= 180 && lat >= -90 && lat <= 90))
      throw BoundaryError(K::BadDocument, feature, "position out of range");
    ring.push_back({lon, lat});
  }
  if (ring.size() < 4 || !(ring.front() == ring.back()))
    throw BoundaryError(K::UnclosedRing, feature,
                        "ring needs at least 4 positions with first == last, got " +
                            std::to_string(ring.size()));
  const auto [lo, hi] = std::minmax_element(
      ring.begin(), ring.end(), [](const LonLat& a, const LonLat& b) { return a.lon < b.lon; });
  if (hi->lon - lo->lon > 180.0)
    throw BoundaryError(K::AntimeridianSpan, feature,
                        "ring spans more than 180 degrees of longitude; split it at the antimeridian");
  return ring;
}

inline Polygon parse_polygon(const nlohmann::json& rings, const std::string& feature) {
  if (!rings.is_array() || rings.empty())
    throw BoundaryError(BoundaryError::Kind::BadDocument, feature, "polygon has no rings");
  Polygon p;
  p.outer = parse_ring(rings[0], feature);
  for (std::size_t i = 1; i < rings.size(); ++i) p.holes.push_back(parse_ring(rings[i], feature));
  return p;
}

inline std::string property_string(const nlohmann::json& props, const std::string& key) {
  if (!props.is_object() || !props.contains(key)) return {};
  const auto& v = props[key];
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  return {};
}

}  // namespace detail

/// Loads a GeoJSON FeatureCollection of Polygon/MultiPolygon features.
inline BoundarySet load_boundaries(const nlohmann::json& doc, const BoundaryKeys& keys = {}) {
  using K = BoundaryError::Kind;
  if (!doc.is_object() || doc.value("type", "") != "FeatureCollection" || !doc.contains("features") ||
      !doc["features"].is_array())
    throw BoundaryError(K::BadDocument, "<document>", "expected a GeoJSON FeatureCollection");

  BoundarySet set;
  std::unordered_set<std::string> seen;
  std::size_t ordinal = 0;
  for (const auto& f : doc["features"]) {
    const std::string fallback = "#" + std::to_string(ordinal++);
    const auto props = f.contains("properties") ? f["properties"] : nlohmann::json::object();
    std::string code = detail::property_string(props, keys.code);
    const std::string label = code.empty() ? fallback : code;
    if (code.empty()) throw BoundaryError(K::MissingProperty, label, "missing property '" + keys.code + "'");
    if (!seen.insert(code).second) throw BoundaryError(K::DuplicateCode, code, "country code appears twice");

    if (!f.contains("geometry") || !f["geometry"].is_object())
      throw BoundaryError(K::NonPolygonal, label, "feature has no geometry");
    const auto& g = f["geometry"];
    const std::string type = g.value("type", "");
    CountryBoundary entry{code, detail::property_string(props, keys.name), {}};
    if (type == "Polygon") {
      entry.polygons.push_back(detail::parse_polygon(g["coordinates"], label));
    } else if (type == "MultiPolygon") {
      if (!g["coordinates"].is_array()) throw BoundaryError(K::BadDocument, label, "bad MultiPolygon");
      for (const auto& rings : g["coordinates"]) entry.polygons.push_back(detail::parse_polygon(rings, label));
    } else {
      throw BoundaryError(K::NonPolygonal, label, "geometry type '" + type + "' is not polygonal");
    }
    set.entries.push_back(std::move(entry));
  }
  return set;
}

inline BoundarySet load_boundaries_file(const std::string& path, const BoundaryKeys& keys = {}) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open boundary file " + path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw BoundaryError(BoundaryError::Kind::BadDocument, path, e.what());
  }
  return load_boundaries(doc, keys);
}

struct Box {
  double min_lon = 0, min_lat = 0, max_lon = 0, max_lat = 0;
  bool contains(double lon, double lat) const {
    return lon >= min_lon && lon <= max_lon && lat >= min_lat && lat <= max_lat;
  }
};

inline Box bounding_box(const Ring& ring) {
  Box b{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
        -std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
  for (const auto& v : ring) {
    b.min_lon = std::min(b.min_lon, v.lon);
    b.max_lon = std::max(b.max_lon, v.lon);
    b.min_lat = std::min(b.min_lat, v.lat);
    b.max_lat = std::max(b.max_lat, v.lat);
  }
  return b;
}

/// Result of a reverse-geocoding query.
struct Location {
  static constexpr std::uint32_t unassigned = std::numeric_limits<std::uint32_t>::max();

  std::uint32_t country = unassigned;
  /// True when the point lies outside every polygon but within epsilon of one.
  bool rescued = false;

  bool assigned() const { return country != unassigned; }
  friend bool operator==(const Location&, const Location&) = default;
};

namespace detail {

// Boundary points count as inside.
enum class RingSide { Outside, Inside, OnEdge };

inline RingSide ring_side(const Ring& ring, double x, double y) {
  bool inside = false;
  for (std::size_t i = 0, j = ring.size() - 1; i < ring.size(); j = i++) {
    const double xi = ring[i].lon, yi = ring[i].lat;
    const double xj = ring[j].lon, yj = ring[j].lat;
    // On-segment test: collinear and within the segment's extent.
    const double cross = (xj - xi) * (y - yi) - (yj - yi) * (x - xi);
    if (cross == 0 && x >= std::min(xi, xj) && x <= std::max(xi, xj) && y >= std::min(yi, yj) &&
        y <= std::max(yi, yj))
      return RingSide::OnEdge;
    if ((yi > y) != (yj > y)) {
      const double t = (y - yi) / (yj - yi);
      if (x < xi + t * (xj - xi)) inside = !inside;
    }
  }
  return inside ? RingSide::Inside : RingSide::Outside;
}

inline double segment_distance(double px, double py, const LonLat& a, const LonLat& b) {
  const double dx = b.lon - a.lon, dy = b.lat - a.lat;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0 ? ((px - a.lon) * dx + (py - a.lat) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return std::hypot(px - (a.lon + t * dx), py - (a.lat + t * dy));
}

inline double ring_distance(const Ring& ring, double x, double y) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 1; i < ring.size(); ++i) best = std::min(best, segment_distance(x, y, ring[i - 1], ring[i]));
  return best;
}

}  // namespace detail

/// Even-odd containment with holes subtracted; points on any ring edge are inside.
inline bool polygon_contains(const Polygon& poly, double lon, double lat) {
  using detail::RingSide;
  const auto outer = detail::ring_side(poly.outer, lon, lat);
  if (outer == RingSide::OnEdge) return true;
  if (outer == RingSide::Outside) return false;
  for (const auto& h : poly.holes) {
    const auto s = detail::ring_side(h, lon, lat);
    if (s == RingSide::OnEdge) return true;
    if (s == RingSide::Inside) return false;
  }
  return true;
}

/// Planar distance in degrees from a point to the nearest edge of any ring.
inline double polygon_boundary_distance(const Polygon& poly, double lon, double lat) {
  double d = detail::ring_distance(poly.outer, lon, lat);
  for (const auto& h : poly.holes) d = std::min(d, detail::ring_distance(h, lon, lat));
  return d;
}

/// Immutable uniform-grid index over polygon bounding boxes. Each polygon is
/// registered in every cell its box touches, so a point's cell lists every
/// polygon whose box contains the point.
class GeoIndex {
 public:
  struct Slot {
    std::uint32_t country;
    std::uint32_t polygon;
    Box box;
  };

  explicit GeoIndex(BoundarySet set, double cell_degrees = 1.0)
      : set_(std::move(set)), cell_(cell_degrees) {
    if (!(cell_ > 0)) throw ContractViolation("cell size must be positive");
    cols_ = static_cast<std::size_t>(std::ceil(360.0 / cell_));
    rows_ = static_cast<std::size_t>(std::ceil(180.0 / cell_));
    for (std::uint32_t c = 0; c < set_.entries.size(); ++c)
      for (std::uint32_t p = 0; p < set_.entries[c].polygons.size(); ++p)
        slots_.push_back({c, p, bounding_box(set_.entries[c].polygons[p].outer)});

    std::vector<std::uint32_t> counts(cols_ * rows_ + 1, 0);
    for_each_cell_pass(counts, nullptr);
    offsets_.assign(counts.size(), 0);
    for (std::size_t i = 1; i < counts.size(); ++i) offsets_[i] = offsets_[i - 1] + counts[i - 1];
    ids_.resize(offsets_.back());
    std::vector<std::uint32_t> cursor(offsets_.begin(), offsets_.end() - 1);
    for_each_cell_pass(counts, &cursor);
  }

  const BoundarySet& boundaries() const { return set_; }
  std::span<const Slot> slots() const { return slots_; }

  const std::string& code(std::uint32_t country) const { return set_.entries.at(country).code; }

  /// Slot ids (ascending) whose bounding box contains the point.
  void candidates(double lon, double lat, std::vector<std::uint32_t>& out) const {
    out.clear();
    if (slots_.empty()) return;
    for (const auto id : cell_ids(col_of(lon), row_of(lat)))
      if (slots_[id].box.contains(lon, lat)) out.push_back(id);
  }

  std::vector<std::uint32_t> candidates(double lon, double lat) const {
    std::vector<std::uint32_t> out;
    candidates(lon, lat, out);
    return out;
  }

  /// Slot ids (ascending, unique) whose box lies within `radius` of the point.
  void candidates_near(double lon, double lat, double radius, std::vector<std::uint32_t>& out) const {
    out.clear();
    if (slots_.empty()) return;
    const Box probe{lon - radius, lat - radius, lon + radius, lat + radius};
    const auto c0 = col_of(probe.min_lon), c1 = col_of(probe.max_lon);
    const auto r0 = row_of(probe.min_lat), r1 = row_of(probe.max_lat);
    for (auto r = r0; r <= r1; ++r)
      for (auto c = c0; c <= c1; ++c)
        for (const auto id : cell_ids(c, r)) {
          const auto& b = slots_[id].box;
          if (b.max_lon >= probe.min_lon && b.min_lon <= probe.max_lon && b.max_lat >= probe.min_lat &&
              b.min_lat <= probe.max_lat)
            out.push_back(id);
        }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
  }

  const Polygon& polygon(std::uint32_t slot) const {
    const auto& s = slots_[slot];
    return set_.entries[s.country].polygons[s.polygon];
  }

 private:
  std::size_t col_of(double lon) const {
    const double c = std::floor((lon + 180.0) / cell_);
    return static_cast<std::size_t>(std::clamp(c, 0.0, static_cast<double>(cols_ - 1)));
  }
  std::size_t row_of(double lat) const {
    const double r = std::floor((lat + 90.0) / cell_);
    return static_cast<std::size_t>(std::clamp(r, 0.0, static_cast<double>(rows_ - 1)));
  }
  std::span<const std::uint32_t> cell_ids(std::size_t col, std::size_t row) const {
    const auto cell = row * cols_ + col;
    return {ids_.data() + offsets_[cell], ids_.data() + offsets_[cell + 1]};
  }

  // Pass 1 (cursor == nullptr) counts entries per cell; pass 2 fills them.
  void for_each_cell_pass(std::vector<std::uint32_t>& counts, std::vector<std::uint32_t>* cursor) {
    for (std::uint32_t id = 0; id < slots_.size(); ++id) {
      const auto& b = slots_[id].box;
      for (auto r = row_of(b.min_lat); r <= row_of(b.max_lat); ++r)
        for (auto c = col_of(b.min_lon); c <= col_of(b.max_lon); ++c) {
          const auto cell = r * cols_ + c;
          if (cursor)
            ids_[(*cursor)[cell]++] = id;
          else
            ++counts[cell];
        }
    }
  }

  BoundarySet set_;
  double cell_;
  std::size_t cols_ = 0, rows_ = 0;
  std::vector<Slot> slots_;
  std::vector<std::uint32_t> offsets_;
  std::vector<std::uint32_t> ids_;
};

inline GeoIndex build_index(BoundarySet set) { return GeoIndex(std::move(set)); }

constexpr double default_epsilon = 0.01;

/// Reverse geocodes one point. Containment wins; otherwise the nearest boundary
/// within `epsilon` degrees (planar, longitude wrapping at +-180) is used.
/// Overlaps and distance ties resolve to the lower boundary-set position.
inline Location locate(const GeoIndex& index, double lon, double lat, double epsilon,
                       std::vector<std::uint32_t>& scratch) {
  index.candidates(lon, lat, scratch);
  for (const auto slot : scratch)
    if (polygon_contains(index.polygon(slot), lon, lat)) return {index.slots()[slot].country, false};
  if (!(epsilon > 0)) return {};

  double best = std::numeric_limits<double>::infinity();
  std::uint32_t best_country = Location::unassigned;
  for (const double shift : {0.0, 360.0, -360.0}) {
    const double x = lon + shift;
    if (x < -180.0 - epsilon || x > 180.0 + epsilon) continue;
    index.candidates_near(x, lat, epsilon, scratch);
    for (const auto slot : scratch) {
      const double d = polygon_boundary_distance(index.polygon(slot), x, lat);
      const auto country = index.slots()[slot].country;
      if (d <= epsilon && (d < best || (d == best && country < best_country))) {
        best = d;
        best_country = country;
      }
    }
  }
  if (best_country == Location::unassigned) return {};
  return {best_country, true};
}

inline Location locate(const GeoIndex& index, double lon, double lat, double epsilon = default_epsilon) {
  std::vector<std::uint32_t> scratch;
  return locate(index, lon, lat, epsilon, scratch);
}

/// Elementwise locate; output order matches input order for any worker count.
inline std::vector<Location> locate_batch(const GeoIndex& index, std::span<const LonLat> points,
                                          double epsilon = default_epsilon, unsigned workers = 1) {
  std::vector<Location> out(points.size());
  detail::parallel_chunks(points.size(), workers, [&](std::size_t begin, std::size_t end, unsigned) {
    std::vector<std::uint32_t> scratch;
    for (std::size_t i = begin; i < end; ++i) out[i] = locate(index, points[i].lon, points[i].lat, epsilon, scratch);
  });
  return out;
}

}  // namespace geoscale
