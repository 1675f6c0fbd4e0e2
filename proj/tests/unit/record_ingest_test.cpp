#include <gtest/gtest.h>

#include <algorithm>
#include <sstream>
#include <string>
#include <vector>

#include "geoscale/record_ingest.hpp"
#include "geoscale/synth/generator.hpp"
#include "support.hpp"

using namespace geoscale;

namespace {

const ColumnMap compact = ColumnMap::compact();

std::string row(std::initializer_list<std::string_view> cells) {
  std::string out;
  for (auto c : cells) {
    if (!out.empty()) out += '\t';
    out += c;
  }
  return out;
}

SkipReason skip_of(const ParseResult& r) { return std::get<SkipReason>(r); }

}  // namespace

TEST(ParseLine, WellFormedRow) {
  auto r = parse_line(row({"id1", "userA", "2010-06-01 12:00:00", "13.40", "52.52"}), compact);
  ASSERT_TRUE(std::holds_alternative<MediaRecord>(r));
  const auto& rec = std::get<MediaRecord>(r);
  EXPECT_EQ(rec.object_id, "id1");
  EXPECT_EQ(rec.user_id, "userA");
  EXPECT_EQ(format_timestamp(rec.taken_at), "2010-06-01T12:00:00");
  EXPECT_DOUBLE_EQ(rec.lon, 13.40);
  EXPECT_DOUBLE_EQ(rec.lat, 52.52);
}

TEST(ParseLine, EmptyCoordinatesAreNotGeotagged) {
  EXPECT_EQ(skip_of(parse_line(row({"id1", "u", "2010-06-01 12:00:00", "", ""}), compact)), SkipReason::NotGeotagged);
  EXPECT_EQ(skip_of(parse_line(row({"id1", "u", "2010-06-01 12:00:00", "13.4", " "}), compact)),
            SkipReason::NotGeotagged);
}

TEST(ParseLine, BadDate) {
  EXPECT_EQ(skip_of(parse_line(row({"id1", "u", "not-a-date", "1", "2"}), compact)), SkipReason::BadDate);
  EXPECT_EQ(skip_of(parse_line(row({"id1", "u", "2010-02-30 12:00:00", "1", "2"}), compact)), SkipReason::BadDate);
  EXPECT_EQ(skip_of(parse_line(row({"id1", "u", "2010-06-01 24:00:00", "1", "2"}), compact)), SkipReason::BadDate);
  EXPECT_EQ(skip_of(parse_line(row({"id1", "u", "2010-06-01 12:00:00x", "1", "2"}), compact)), SkipReason::BadDate);
}

TEST(ParseLine, OutOfRangeCoordinatesAreNotGeotagged) {
  EXPECT_EQ(skip_of(parse_line(row({"id", "u", "2010-06-01 12:00:00", "180.5", "0"}), compact)),
            SkipReason::NotGeotagged);
  EXPECT_EQ(skip_of(parse_line(row({"id", "u", "2010-06-01 12:00:00", "0", "-90.01"}), compact)),
            SkipReason::NotGeotagged);
  EXPECT_EQ(skip_of(parse_line(row({"id", "u", "2010-06-01 12:00:00", "inf", "0"}), compact)),
            SkipReason::NotGeotagged);
}

TEST(ParseLine, BoundaryCoordinatesAreKept) {
  EXPECT_TRUE(std::holds_alternative<MediaRecord>(
      parse_line(row({"id", "u", "2010-06-01 12:00:00", "-180", "90"}), compact)));
}

TEST(ParseLine, MalformedRows) {
  EXPECT_EQ(skip_of(parse_line("just one field", compact)), SkipReason::Malformed);
  EXPECT_EQ(skip_of(parse_line(row({"id", "u", "2010-06-01 12:00:00", "abc", "1"}), compact)), SkipReason::Malformed);
  EXPECT_EQ(skip_of(parse_line(row({"id", "u", "2010-06-01 12:00:00", "nan", "1"}), compact)), SkipReason::Malformed);
  EXPECT_EQ(skip_of(parse_line(row({"", "u", "2010-06-01 12:00:00", "1", "1"}), compact)), SkipReason::Malformed);
  EXPECT_EQ(skip_of(parse_line(row({"id", "", "2010-06-01 12:00:00", "1", "1"}), compact)), SkipReason::Malformed);
}

TEST(ParseLine, ExtraColumnsAndCarriageReturnAreTolerated) {
  auto r = parse_line(row({"id", "u", "2010-06-01 12:00:00", "1", "2", "extra"}) + "\r", compact);
  ASSERT_TRUE(std::holds_alternative<MediaRecord>(r));
  EXPECT_DOUBLE_EQ(std::get<MediaRecord>(r).lat, 2.0);
}

TEST(ParseLine, DefaultLayoutReadsDumpColumns) {
  std::vector<std::string> cells(12, "x");
  cells[0] = "6985418911";
  cells[1] = "4e2f7a26a1dfbf165a7e30bdabf7e72a";
  cells[3] = "2012-02-16 09:56:37.0";
  cells[10] = "-0.1275";
  cells[11] = "51.507";
  std::string line;
  for (std::size_t i = 0; i < cells.size(); ++i) line += (i ? "\t" : "") + cells[i];
  auto r = parse_line(line, ColumnMap{});
  ASSERT_TRUE(std::holds_alternative<MediaRecord>(r));
  EXPECT_EQ(format_timestamp(std::get<MediaRecord>(r).taken_at), "2012-02-16T09:56:37");
}

TEST(ParseLine, FirstMatchingFormatWins) {
  ColumnMap m = compact;
  m.date_formats = {"%d/%m/%Y", "%Y-%m-%d %H:%M:%S"};
  auto a = parse_line(row({"id", "u", "01/06/2010", "1", "2"}), m);
  auto b = parse_line(row({"id", "u", "2010-06-01 00:00:00", "1", "2"}), m);
  ASSERT_TRUE(std::holds_alternative<MediaRecord>(a));
  ASSERT_TRUE(std::holds_alternative<MediaRecord>(b));
  EXPECT_EQ(std::get<MediaRecord>(a).taken_at, std::get<MediaRecord>(b).taken_at);
}

TEST(ColumnMapTest, Problems) {
  EXPECT_TRUE(ColumnMap{}.problem().empty());
  ColumnMap dup = compact;
  dup.lat = dup.lon;
  EXPECT_FALSE(dup.problem().empty());
  EXPECT_THROW(dup.validate(), Error);
  ColumnMap no_formats = compact;
  no_formats.date_formats.clear();
  EXPECT_FALSE(no_formats.problem().empty());
}

TEST(ParseTimestamp, Strictness) {
  EXPECT_TRUE(parse_timestamp("2012-02-29", "%Y-%m-%d"));
  EXPECT_FALSE(parse_timestamp("2011-02-29", "%Y-%m-%d"));
  EXPECT_FALSE(parse_timestamp("2011-2-01", "%Y-%m-%d"));
  EXPECT_FALSE(parse_timestamp("2011-02-01", "%Y-%m"));
  EXPECT_FALSE(parse_timestamp("2011-02", "%Y-%m"));
  EXPECT_TRUE(parse_timestamp("100%", "100%%") == std::nullopt);
  EXPECT_TRUE(parse_timestamp("2011-02-01 50%", "%Y-%m-%d 50%%"));
}

TEST(PruneStream, FiveRowExample) {
  std::stringstream in;
  in << row({"a", "u", "2010-06-01 12:00:00", "1", "1"}) << "\n"
     << row({"b", "u", "2010-06-01 12:00:00", "", ""}) << "\n"
     << row({"c", "u", "2010-06-01 12:00:00", "2", "2"}) << "\n"
     << row({"d", "u", "2010-06-01 12:00:00", "", ""}) << "\n"
     << row({"e", "u", "garbage", "3", "3"}) << "\n";
  auto r = prune_stream(in, compact);
  ASSERT_EQ(r.records.size(), 2u);
  EXPECT_EQ(r.records[0].object_id, "a");
  EXPECT_EQ(r.records[1].object_id, "c");
  EXPECT_EQ(r.stats, (PruneStats{5, 2, 2, 1, 0}));
}

TEST(PruneStream, EmptyInput) {
  std::stringstream in;
  auto r = prune_stream(in, compact);
  EXPECT_TRUE(r.records.empty());
  EXPECT_EQ(r.stats, PruneStats{});
}

TEST(PruneStream, ReadFailureCarriesLineOffset) {
  struct FailingBuf : std::stringbuf {
    int served = 0;
    int_type underflow() override {
      if (served++ == 0) {
        static const std::string text = "a\tu\t2010-06-01 12:00:00\t1\t1\nb\tu\t";
        setg(const_cast<char*>(text.data()), const_cast<char*>(text.data()),
             const_cast<char*>(text.data()) + text.size());
        return traits_type::to_int_type(text[0]);
      }
      throw std::runtime_error("disk gone");
    }
  } buf;
  std::istream failing(&buf);
  failing.exceptions(std::ios::goodbit);
  try {
    prune_stream(failing, compact);
    FAIL() << "expected IngestError";
  } catch (const IngestError& e) {
    EXPECT_EQ(e.line_offset(), 1u);
  }
}

TEST(PruneStream, PlantedNonGeotagShareIsDroppedExactly) {
  auto [lines, labels] = synth::generate_labelled_lines(10000, 0.3, 0.0, 11);
  std::stringstream in;
  for (const auto& l : lines) in << l << "\n";
  auto r = prune_stream(in, compact);
  EXPECT_EQ(r.stats.kept, 7000u);
  EXPECT_EQ(r.stats.dropped_not_geotagged, 3000u);
  std::vector<std::string> expected;
  for (std::size_t i = 0; i < lines.size(); ++i)
    if (labels[i] == synth::LineLabel::Kept) expected.push_back("obj" + std::to_string(i));
  std::vector<std::string> got;
  for (const auto& rec : r.records) got.push_back(rec.object_id);
  EXPECT_EQ(got, expected);
}

TEST(PruneStream, LabelledBadDatesAndNonGeotagsAreSeparated) {
  auto [lines, labels] = synth::generate_labelled_lines(5000, 0.2, 0.1, 5);
  auto r = prune_lines(lines, compact);
  EXPECT_EQ(r.stats.dropped_not_geotagged, 1000u);
  EXPECT_EQ(r.stats.dropped_bad_date, 500u);
  EXPECT_EQ(r.stats.kept, 3500u);
}

// Property: any corruption of any line keeps the stats balanced, every kept
// record obeys the type invariants, and the result is independent of the
// worker count and batch size.
TEST(PruneProperty, ConservationAndDeterminismUnderCorruption) {
  testing_support::Gen g(2024);
  auto [lines, labels] = synth::generate_labelled_lines(3000, 0.2, 0.1, 3);
  const std::string alphabet = "\t\r 0123456789-:.+eEnaNifx/%\"";
  for (auto& l : lines) {
    const int edits = g.integer(0, 4);
    for (int e = 0; e < edits && !l.empty(); ++e) {
      const auto pos = g.index(l.size());
      switch (g.integer(0, 2)) {
        case 0: l[pos] = alphabet[g.index(alphabet.size())]; break;
        case 1: l.erase(pos, 1); break;
        default: l.insert(pos, 1, alphabet[g.index(alphabet.size())]); break;
      }
    }
  }
  const auto one = prune_lines(lines, compact, 1);
  EXPECT_TRUE(one.stats.balanced());
  EXPECT_EQ(one.stats.total_lines, lines.size());
  for (const auto& r : one.records) {
    EXPECT_GE(r.lon, -180.0);
    EXPECT_LE(r.lon, 180.0);
    EXPECT_GE(r.lat, -90.0);
    EXPECT_LE(r.lat, 90.0);
    EXPECT_FALSE(r.object_id.empty());
  }
  for (unsigned w : {2u, 3u, 8u}) {
    const auto many = prune_lines(lines, compact, w);
    EXPECT_EQ(many.stats, one.stats);
    EXPECT_EQ(many.records, one.records);
  }
  std::stringstream in;
  for (const auto& l : lines) in << l << "\n";
  PruneResult streamed;
  streamed.stats = prune_stream(in, compact, [&](MediaRecord&& r) { streamed.records.push_back(std::move(r)); }, 4, 97);
  EXPECT_EQ(streamed.stats, one.stats);
  EXPECT_EQ(streamed.records, one.records);
}

TEST(PruneStatsTest, MergeIsSummation) {
  PruneStats a{3, 1, 1, 1, 0}, b{2, 0, 0, 0, 2};
  a += b;
  EXPECT_EQ(a, (PruneStats{5, 1, 1, 1, 2}));
  EXPECT_TRUE(a.balanced());
}
