#include <gtest/gtest.h>

#include <cmath>
#include <string>
#include <vector>

#include "geoscale/attractiveness.hpp"
#include "geoscale/geo_boundary.hpp"
#include "geoscale/home_inference.hpp"
#include "geoscale/record_ingest.hpp"
#include "geoscale/synth/generator.hpp"
#include "geoscale/synth/oracle.hpp"
#include "support.hpp"

using namespace geoscale;

namespace {

synth::SynthConfig small_world(std::uint64_t seed = 3) {
  synth::SynthConfig cfg;
  cfg.seed = seed;
  cfg.n_countries = 30;
  cfg.n_users = 120;
  cfg.non_geotag_rate = 0.05;
  cfg.bad_date_rate = 0.02;
  return cfg;
}

}  // namespace

TEST(Generator, SameSeedSameWorld) {
  const auto a = synth::generate_world(small_world(9));
  const auto b = synth::generate_world(small_world(9));
  EXPECT_EQ(a.metadata_lines, b.metadata_lines);
  EXPECT_EQ(a.boundaries, b.boundaries);
  EXPECT_EQ(a.population_table, b.population_table);
  EXPECT_EQ(a.covariate_table, b.covariate_table);
  EXPECT_NE(synth::generate_world(small_world(10)).metadata_lines, a.metadata_lines);
}

TEST(Generator, InvalidConfigs) {
  auto bad = small_world();
  bad.non_geotag_rate = 0.6;
  bad.bad_date_rate = 0.5;
  EXPECT_THROW(synth::generate_world(bad), Error);
  bad = small_world();
  bad.region_betas.assign(40, 1.0);
  EXPECT_THROW(synth::generate_world(bad), Error);
  bad = small_world();
  bad.population_max = 1;
  EXPECT_THROW(synth::generate_world(bad), Error);
  bad = small_world();
  bad.n_users = 0;
  EXPECT_THROW(synth::generate_world(bad), Error);
}

TEST(Generator, LineLabelsMatchParser) {
  const auto world = synth::generate_world(small_world());
  ASSERT_EQ(world.metadata_lines.size(), world.truth.line_labels.size());
  const auto map = ColumnMap::compact();
  for (std::size_t i = 0; i < world.metadata_lines.size(); ++i) {
    const auto r = parse_line(world.metadata_lines[i], map);
    switch (world.truth.line_labels[i]) {
      case synth::LineLabel::Kept: ASSERT_TRUE(std::holds_alternative<MediaRecord>(r)) << i; break;
      case synth::LineLabel::NotGeotagged: ASSERT_EQ(std::get<SkipReason>(r), SkipReason::NotGeotagged); break;
      case synth::LineLabel::BadDate: ASSERT_EQ(std::get<SkipReason>(r), SkipReason::BadDate); break;
    }
  }
}

// Running the library stages on the world reproduces the planted homes and
// per-country counts exactly.
TEST(Generator, TruthIsConsistentWithStages) {
  const auto world = synth::generate_world(small_world());
  const auto pruned = prune_lines(world.metadata_lines, ColumnMap::compact());
  const auto index = build_index(load_boundaries(world.boundaries));
  ActivityStore<std::string> store;
  std::vector<GeoEvent<std::string>> events;
  for (const auto& r : pruned.records) {
    const auto loc = locate(index, r.lon, r.lat, 0.0);
    ASSERT_TRUE(loc.assigned());
    const std::string code(index.code(loc.country));
    store.accumulate(r.user_id, code, r.taken_at);
    events.push_back({r.user_id, code});
  }
  const auto homes = infer_homes(store);
  for (const auto& [user, home] : world.truth.home_of_user) EXPECT_EQ(homes.at(user).home, home) << user;
  const auto table = compute_attractiveness<std::string>(events, homes);
  for (const auto& [code, ct] : world.truth.countries) {
    const auto& row = table.rows.at(code);
    EXPECT_EQ(row.foreign_object_count, ct.foreign_objects) << code;
    EXPECT_EQ(row.foreign_user_count, ct.foreign_users) << code;
    EXPECT_EQ(row.total_object_count, ct.total_objects) << code;
    EXPECT_EQ(row.total_user_count, ct.total_users) << code;
  }
}

TEST(Generator, PlantedLawHoldsNoiseFree) {
  auto cfg = small_world();
  cfg.region_betas = {0.5};
  const auto world = synth::generate_world(cfg);
  const double a = 1 / std::pow(cfg.population_min, 0.5);
  for (const auto& [code, ct] : world.truth.countries)
    EXPECT_NEAR(std::log(static_cast<double>(ct.foreign_objects)), std::log(a) + 0.5 * std::log(ct.population), 1e-9);
}

TEST(LabelledLines, ExactJunkCounts) {
  const auto [lines, labels] = synth::generate_labelled_lines(1000, 0.3, 0.1, 4);
  ASSERT_EQ(lines.size(), 1000u);
  EXPECT_EQ(std::count(labels.begin(), labels.end(), synth::LineLabel::NotGeotagged), 300);
  EXPECT_EQ(std::count(labels.begin(), labels.end(), synth::LineLabel::BadDate), 100);
  EXPECT_THROW(synth::generate_labelled_lines(10, 0.8, 0.8, 1), Error);
}

TEST(Oracle, PointInPolygonExamples) {
  const oracle::PolygonRings square{{{{0, 0}, {1, 0}, {1, 1}, {0, 1}, {0, 0}}}};
  EXPECT_TRUE(oracle::point_in_polygon(square, {0.5, 0.5}));
  EXPECT_FALSE(oracle::point_in_polygon(square, {1.5, 0.5}));
  // U shape with a notch cut down from the top between x = 1 and x = 2
  const oracle::PolygonRings u{{{{0, 0}, {3, 0}, {3, 3}, {2, 3}, {2, 1}, {1, 1}, {1, 3}, {0, 3}, {0, 0}}}};
  EXPECT_TRUE(oracle::point_in_polygon(u, {0.5, 2.5}));
  EXPECT_TRUE(oracle::point_in_polygon(u, {1.5, 0.5}));
  EXPECT_FALSE(oracle::point_in_polygon(u, {1.5, 2}));
  const oracle::PolygonRings holed{{{{0, 0}, {4, 0}, {4, 4}, {0, 4}, {0, 0}}, {{1, 1}, {3, 1}, {3, 3}, {1, 3}, {1, 1}}}};
  EXPECT_FALSE(oracle::point_in_polygon(holed, {2, 2}));
  EXPECT_TRUE(oracle::point_in_polygon(holed, {0.5, 2}));
  EXPECT_NEAR(oracle::distance_to_edges(square, {0.5, 0.25}), 0.25, 1e-15);
}

TEST(Oracle, Recount) {
  EXPECT_TRUE(oracle::recount({}).per_country.empty());
  const std::vector<oracle::Event> log{{"u", "FR", "d1"}, {"u", "FR", "d1"}, {"u", "DE", "d2"}};
  const auto r = oracle::recount(log, {{"u", std::string("FR")}});
  EXPECT_EQ(r.per_user_country.at({"u", "FR"}), (oracle::UserCountryCount{2, 1}));
  EXPECT_EQ(r.per_country.at("DE"), (oracle::CountryCount{1, 1, 1, 1}));
  EXPECT_EQ(r.per_country.at("FR"), (oracle::CountryCount{2, 1, 0, 0}));
}

TEST(Oracle, NormalEquations) {
  const auto f = oracle::normal_equations({0, 1, 2}, {1, 3, 5});
  EXPECT_NEAR(f.slope, 2, 1e-12);
  EXPECT_NEAR(f.intercept, 1, 1e-12);
  EXPECT_NEAR(f.r_squared, 1, 1e-12);
  EXPECT_NEAR(oracle::pearson_direct({1, 2, 3}, {3, 2, 1}), -1, 1e-12);
}
