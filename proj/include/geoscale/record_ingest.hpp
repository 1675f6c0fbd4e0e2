#pragma once

// Streaming ingest of delimited media metadata: parsing, pruning and
// bookkeeping of every dropped line.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <iterator>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "geoscale/common.hpp"

namespace geoscale {

using Timestamp = std::chrono::sys_seconds;
using Date = std::chrono::sys_days;

struct MediaRecord {
  std::string object_id;
  std::string user_id;
  Timestamp taken_at;
  double lon = 0;
  double lat = 0;

  friend bool operator==(const MediaRecord&, const MediaRecord&) = default;
};

enum class SkipReason { NotGeotagged, BadDate, Malformed };

inline std::string_view to_string(SkipReason r) {
  switch (r) {
    case SkipReason::NotGeotagged: return "NotGeotagged";
    case SkipReason::BadDate: return "BadDate";
    case SkipReason::Malformed: return "Malformed";
  }
  return "?";
}

struct PruneStats {
  std::uint64_t total_lines = 0;
  std::uint64_t kept = 0;
  std::uint64_t dropped_not_geotagged = 0;
  std::uint64_t dropped_bad_date = 0;
  std::uint64_t dropped_malformed = 0;

  std::uint64_t dropped() const {
    return dropped_not_geotagged + dropped_bad_date + dropped_malformed;
  }
  bool balanced() const { return total_lines == kept + dropped(); }

  void count(SkipReason r) {
    ++total_lines;
    switch (r) {
      case SkipReason::NotGeotagged: ++dropped_not_geotagged; break;
      case SkipReason::BadDate: ++dropped_bad_date; break;
      case SkipReason::Malformed: ++dropped_malformed; break;
    }
  }
  void count_kept() {
    ++total_lines;
    ++kept;
  }

  PruneStats& operator+=(const PruneStats& o) {
    total_lines += o.total_lines;
    kept += o.kept;
    dropped_not_geotagged += o.dropped_not_geotagged;
    dropped_bad_date += o.dropped_bad_date;
    dropped_malformed += o.dropped_malformed;
    return *this;
  }
  friend bool operator==(const PruneStats&, const PruneStats&) = default;
};

/// Column layout of the metadata dump. The defaults follow the public
/// YFCC100M dataset file: photo id, user nsid, date taken, longitude, latitude.
struct ColumnMap {
  char delimiter = '\t';
  std::size_t object_id = 0;
  std::size_t user_id = 1;
  std::size_t taken_at = 3;
  std::size_t lon = 10;
  std::size_t lat = 11;
  /// strptime-style patterns; first match wins. Supported directives are
  /// %Y %m %d %H %M %S and %%; every other character matches literally.
  std::vector<std::string> date_formats{"%Y-%m-%d %H:%M:%S.0", "%Y-%m-%d %H:%M:%S"};

  /// Five-column layout used by intermediate files and synthetic dumps.
  static ColumnMap compact() {
    ColumnMap m;
    m.object_id = 0;
    m.user_id = 1;
    m.taken_at = 2;
    m.lon = 3;
    m.lat = 4;
    m.date_formats = {"%Y-%m-%d %H:%M:%S"};
    return m;
  }

  std::size_t max_index() const { return std::max({object_id, user_id, taken_at, lon, lat}); }

  /// Empty string when valid, otherwise a description of the problem.
  std::string problem() const {
    const std::array idx{object_id, user_id, taken_at, lon, lat};
    std::set<std::size_t> unique(idx.begin(), idx.end());
    if (unique.size() != idx.size()) return "column indices must be distinct";
    if (date_formats.empty()) return "at least one date format is required";
    if (delimiter == '\n' || delimiter == '\r') return "delimiter cannot be a line break";
    return {};
  }

  void validate() const {
    if (auto p = problem(); !p.empty()) throw Error("invalid column map: " + p);
  }
};

namespace detail {

inline bool take_digits(std::string_view& s, std::size_t n, int& out) {
  if (s.size() < n) return false;
  int v = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const char c = s[i];
    if (c < '0' || c > '9') return false;
    v = v * 10 + (c - '0');
  }
  out = v;
  s.remove_prefix(n);
  return true;
}

}  // namespace detail

/// Strict fixed-width timestamp parser. The whole text must be consumed and
/// the calendar date must exist.
inline std::optional<Timestamp> parse_timestamp(std::string_view text, std::string_view format) {
  int year = -1, month = 1, day = 1, hour = 0, minute = 0, second = 0;
  bool have_year = false, have_month = false, have_day = false;
  for (std::size_t i = 0; i < format.size(); ++i) {
    const char f = format[i];
    if (f != '%') {
      if (text.empty() || text.front() != f) return std::nullopt;
      text.remove_prefix(1);
      continue;
    }
    if (++i == format.size()) return std::nullopt;
    bool ok = true;
    switch (format[i]) {
      case 'Y': ok = detail::take_digits(text, 4, year); have_year = true; break;
      case 'm': ok = detail::take_digits(text, 2, month); have_month = true; break;
      case 'd': ok = detail::take_digits(text, 2, day); have_day = true; break;
      case 'H': ok = detail::take_digits(text, 2, hour); break;
      case 'M': ok = detail::take_digits(text, 2, minute); break;
      case 'S': ok = detail::take_digits(text, 2, second); break;
      case '%':
        ok = !text.empty() && text.front() == '%';
        if (ok) text.remove_prefix(1);
        break;
      default: return std::nullopt;
    }
    if (!ok) return std::nullopt;
  }
  if (!text.empty() || !have_year || !have_month || !have_day) return std::nullopt;
  if (hour > 23 || minute > 59 || second > 59) return std::nullopt;
  using namespace std::chrono;
  const year_month_day ymd{std::chrono::year{year}, std::chrono::month{static_cast<unsigned>(month)},
                           std::chrono::day{static_cast<unsigned>(day)}};
  if (!ymd.ok()) return std::nullopt;
  return sys_days{ymd} + hours{hour} + minutes{minute} + seconds{second};
}

/// ISO-8601 "YYYY-MM-DDTHH:MM:SS".
inline std::string format_timestamp(Timestamp t) {
  using namespace std::chrono;
  const auto day = floor<days>(t);
  const year_month_day ymd{day};
  const hh_mm_ss hms{t - day};
  char buf[64];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02ld:%02ld:%02ld", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                static_cast<long>(hms.hours().count()), static_cast<long>(hms.minutes().count()),
                static_cast<long>(hms.seconds().count()));
  return buf;
}

inline std::string format_date(Date d) {
  const std::chrono::year_month_day ymd{d};
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
  return buf;
}

inline Date calendar_date(Timestamp t) { return std::chrono::floor<std::chrono::days>(t); }

using ParseResult = std::variant<MediaRecord, SkipReason>;

/// Never throws on bad content: every failure maps to a SkipReason.
inline ParseResult parse_line(std::string_view line, const ColumnMap& map,
                              std::vector<std::string_view>& scratch) {
  line = detail::strip_cr(line);
  detail::split(line, map.delimiter, scratch);
  if (scratch.size() <= map.max_index()) return SkipReason::Malformed;

  const auto lon_text = detail::trim(scratch[map.lon]);
  const auto lat_text = detail::trim(scratch[map.lat]);
  if (lon_text.empty() || lat_text.empty()) return SkipReason::NotGeotagged;
  const auto lon = detail::parse_double(lon_text);
  const auto lat = detail::parse_double(lat_text);
  if (!lon || !lat || std::isnan(*lon) || std::isnan(*lat)) return SkipReason::Malformed;
  if (!(*lon >= -180.0 && *lon <= 180.0 && *lat >= -90.0 && *lat <= 90.0))
    return SkipReason::NotGeotagged;

  const auto date_text = detail::trim(scratch[map.taken_at]);
  std::optional<Timestamp> taken;
  for (const auto& fmt : map.date_formats) {
    taken = parse_timestamp(date_text, fmt);
    if (taken) break;
  }
  if (!taken) return SkipReason::BadDate;

  const auto id = detail::trim(scratch[map.object_id]);
  const auto user = detail::trim(scratch[map.user_id]);
  if (id.empty() || user.empty()) return SkipReason::Malformed;

  return MediaRecord{std::string(id), std::string(user), *taken, *lon, *lat};
}

inline ParseResult parse_line(std::string_view line, const ColumnMap& map) {
  std::vector<std::string_view> scratch;
  return parse_line(line, map, scratch);
}

/// Raised when the underlying stream fails (not for bad content).
class IngestError : public Error {
 public:
  IngestError(const std::string& what, std::uint64_t line_offset)
      : Error(what + " at line " + std::to_string(line_offset)), line_offset_(line_offset) {}
  std::uint64_t line_offset() const { return line_offset_; }

 private:
  std::uint64_t line_offset_;
};

struct PruneResult {
  std::vector<MediaRecord> records;
  PruneStats stats;
};

/// Parses a batch of lines over `workers` contiguous partitions. Per-partition
/// stats are summed and records concatenated in partition order, so output is
/// independent of the worker count.
template <class Lines>
PruneResult prune_lines(const Lines& lines, const ColumnMap& map, unsigned workers = 1) {
  const std::size_t n = std::size(lines);
  const unsigned w = std::max(1u, workers);
  std::vector<PruneResult> parts(std::min<std::size_t>(w, std::max<std::size_t>(n, 1)));
  detail::parallel_chunks(n, w, [&](std::size_t begin, std::size_t end, unsigned worker) {
    auto& part = parts[worker];
    std::vector<std::string_view> scratch;
    auto it = std::begin(lines);
    std::advance(it, begin);
    for (std::size_t i = begin; i < end; ++i, ++it) {
      auto result = parse_line(std::string_view(*it), map, scratch);
      if (auto* rec = std::get_if<MediaRecord>(&result)) {
        part.stats.count_kept();
        part.records.push_back(std::move(*rec));
      } else {
        part.stats.count(std::get<SkipReason>(result));
      }
    }
  });
  PruneResult out;
  std::size_t total = 0;
  for (const auto& p : parts) total += p.records.size();
  out.records.reserve(total);
  for (auto& p : parts) {
    out.stats += p.stats;
    std::move(p.records.begin(), p.records.end(), std::back_inserter(out.records));
  }
  return out;
}

/// Streams `in` in fixed-size batches, handing each kept record to `sink` in
/// input order. Returns the accumulated stats.
template <class Sink>
PruneStats prune_stream(std::istream& in, const ColumnMap& map, Sink&& sink, unsigned workers = 1,
                        std::size_t batch_size = 1 << 16) {
  map.validate();
  PruneStats stats;
  std::vector<std::string> batch;
  batch.reserve(batch_size);
  std::uint64_t line_no = 0;
  auto flush = [&] {
    auto part = prune_lines(batch, map, workers);
    stats += part.stats;
    for (auto& r : part.records) sink(std::move(r));
    batch.clear();
  };
  std::string line;
  while (true) {
    if (!std::getline(in, line)) {
      if (in.bad()) throw IngestError("read failure", line_no);
      break;
    }
    ++line_no;
    batch.push_back(std::move(line));
    line.clear();
    if (batch.size() == batch_size) flush();
  }
  if (!batch.empty()) flush();
  return stats;
}

inline PruneResult prune_stream(std::istream& in, const ColumnMap& map, unsigned workers = 1) {
  PruneResult out;
  out.stats = prune_stream(
      in, map, [&](MediaRecord&& r) { out.records.push_back(std::move(r)); }, workers);
  return out;
}

}  // namespace geoscale
