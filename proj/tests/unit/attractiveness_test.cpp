#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "geoscale/attractiveness.hpp"
#include "geoscale/synth/oracle.hpp"
#include "support.hpp"

using namespace geoscale;

namespace {

using Events = std::vector<GeoEvent<std::string>>;
using Homes = AssignmentMap<std::string>;

void add(Events& e, const std::string& user, const std::string& country, int n) {
  for (int i = 0; i < n; ++i) e.push_back({user, country});
}

CovariateTable covariates(std::initializer_list<std::tuple<std::string, std::optional<double>, std::optional<double>>> rows) {
  CovariateTable t;
  for (const auto& [code, pop, area] : rows) {
    t[code].country_code = code;
    t[code].population_avg = pop;
    t[code].area_avg = area;
  }
  return t;
}

}  // namespace

TEST(Compute, SingleForeignFlow) {
  Events ev;
  add(ev, "u", "DE", 3);
  add(ev, "u", "FR", 7);
  Homes homes{{"u", HomeAssignment<std::string>::at("FR")}};
  const auto t = compute_attractiveness<std::string>(ev, homes);
  EXPECT_EQ(t.rows.at("DE").foreign_object_count, 3u);
  EXPECT_EQ(t.rows.at("FR").foreign_object_count, 0u);
  EXPECT_EQ(t.rows.at("DE").fraction_of_total, 1.0);
  EXPECT_EQ(t.rows.at("FR").total_object_count, 7u);
  EXPECT_EQ(t.rows.at("DE").foreign_user_count, 1u);
}

TEST(Compute, UndeterminedUserOnlyCountsTowardTotals) {
  Events ev;
  add(ev, "u", "DE", 5);
  Homes homes{{"u", HomeAssignment<std::string>::undetermined(UndeterminedReason::ObjectTie)}};
  const auto t = compute_attractiveness<std::string>(ev, homes);
  EXPECT_EQ(t.rows.at("DE").foreign_object_count, 0u);
  EXPECT_EQ(t.rows.at("DE").total_object_count, 5u);
  EXPECT_EQ(t.rows.at("DE").total_user_count, 1u);
  EXPECT_EQ(t.rows.at("DE").fraction_of_total, 0.0);
}

TEST(Compute, MissingAssignmentViolatesContract) {
  Events ev;
  add(ev, "ghost", "DE", 1);
  EXPECT_THROW(compute_attractiveness<std::string>(ev, Homes{}), ContractViolation);
  EXPECT_THROW(compute_attractiveness<std::string>(ev, Homes{}, FractionDenominator::ForeignObjects, {}, 4),
               ContractViolation);
}

TEST(Compute, UniverseRowsArePresentWithZeros) {
  const std::vector<std::string> universe{"AA", "ZZ"};
  const auto t = compute_attractiveness<std::string>(Events{}, Homes{}, FractionDenominator::ForeignObjects,
                                                     std::span<const std::string>(universe));
  ASSERT_EQ(t.rows.size(), 2u);
  EXPECT_EQ(t.rows.at("ZZ"), AttractivenessRow{});
}

TEST(Compute, AllObjectsDenominator) {
  Events ev;
  add(ev, "u", "DE", 3);
  add(ev, "u", "FR", 7);
  Homes homes{{"u", HomeAssignment<std::string>::at("FR")}};
  const auto t = compute_attractiveness<std::string>(ev, homes, FractionDenominator::AllObjects);
  EXPECT_DOUBLE_EQ(t.rows.at("DE").fraction_of_total, 0.3);
  EXPECT_EQ(t.denominator, FractionDenominator::AllObjects);
}

// 1,000 users with planted homes and trips: table equals the naive recount,
// for every worker count and any permutation of the stream.
TEST(ComputeProperty, MatchesRecountOracle) {
  testing_support::Gen g(8);
  Events ev;
  std::vector<oracle::Event> log;
  Homes homes;
  std::map<std::string, std::optional<std::string>> oracle_homes;
  for (int u = 0; u < 1000; ++u) {
    const std::string user = "u" + std::to_string(u);
    const std::string home = "C" + std::to_string(g.integer(0, 29));
    if (g.coin(0.9)) {
      homes.emplace(user, HomeAssignment<std::string>::at(home));
      oracle_homes[user] = home;
    } else {
      homes.emplace(user, HomeAssignment<std::string>::undetermined(UndeterminedReason::DayTie));
      oracle_homes[user] = std::nullopt;
    }
    const int trips = g.integer(0, 5);
    for (int t = 0; t <= trips; ++t) {
      const std::string country = t == 0 ? home : "C" + std::to_string(g.integer(0, 29));
      const int n = g.integer(1, 12);
      add(ev, user, country, n);
      for (int k = 0; k < n; ++k) log.push_back({user, country, "d"});
    }
  }
  const auto expected = oracle::recount(log, oracle_homes);
  auto check = [&](const AttractivenessTable<std::string>& t) {
    ASSERT_EQ(t.rows.size(), expected.per_country.size());
    for (const auto& [country, want] : expected.per_country) {
      const auto& row = t.rows.at(country);
      EXPECT_EQ(row.foreign_object_count, want.foreign_objects);
      EXPECT_EQ(row.foreign_user_count, want.foreign_users);
      EXPECT_EQ(row.total_object_count, want.total_objects);
      EXPECT_EQ(row.total_user_count, want.total_users);
    }
  };
  const auto base = compute_attractiveness<std::string>(ev, homes);
  check(base);
  for (unsigned w : {2u, 5u, 8u}) EXPECT_EQ(compute_attractiveness<std::string>(ev, homes, FractionDenominator::ForeignObjects, {}, w), base);
  std::shuffle(ev.begin(), ev.end(), g.rng);
  EXPECT_EQ(compute_attractiveness<std::string>(ev, homes, FractionDenominator::ForeignObjects, {}, 3), base);

  double sum = 0;
  for (const auto& [_, row] : base.rows) {
    sum += row.fraction_of_total;
    EXPECT_LE(row.foreign_object_count, row.total_object_count);
    EXPECT_LE(row.foreign_user_count, row.total_user_count);
  }
  EXPECT_NEAR(sum, 1.0, 1e-12);
}

// Property: one more foreign record in c changes only c's foreign count.
TEST(ComputeProperty, ForeignRecordIsLocal) {
  testing_support::Gen g(10);
  Events ev;
  Homes homes;
  for (int u = 0; u < 50; ++u) {
    const std::string user = "u" + std::to_string(u);
    homes.emplace(user, HomeAssignment<std::string>::at("C" + std::to_string(u % 7)));
    for (int k = 0; k < 10; ++k) ev.push_back({user, "C" + std::to_string(g.integer(0, 6))});
  }
  const auto before = compute_attractiveness<std::string>(ev, homes);
  ev.push_back({"u0", "C3"});
  const auto after = compute_attractiveness<std::string>(ev, homes);
  for (const auto& [c, row] : after.rows)
    EXPECT_EQ(row.foreign_object_count, before.rows.at(c).foreign_object_count + (c == "C3" ? 1u : 0u)) << c;
}

TEST(Normalized, UsersPerResident) {
  AttractivenessTable<std::string> t;
  t.rows["IS"].total_user_count = 1000;
  t.rows["IS"].total_object_count = 5000;
  normalized_stats(t, covariates({{"IS", 180000.0, 1e5}}));
  EXPECT_DOUBLE_EQ(*t.rows["IS"].users_per_resident, 1.0 / 180.0);
  EXPECT_DOUBLE_EQ(*t.rows["IS"].objects_per_km2, 0.05);
  EXPECT_DOUBLE_EQ(*t.rows["IS"].objects_per_user, 5.0);
}

TEST(Normalized, ObjectsPerUser) {
  AttractivenessTable<std::string> t;
  t.rows["TW"].total_user_count = 37;
  t.rows["TW"].total_object_count = 222 * 37;
  normalized_stats(t, {});
  EXPECT_EQ(*t.rows["TW"].objects_per_user, 222.0);
  EXPECT_EQ(t.rows["TW"].population_status, CovariateStatus::Missing);
  EXPECT_EQ(t.rows["TW"].users_per_resident, std::nullopt);
}

TEST(Normalized, DegenerateDenominators) {
  AttractivenessTable<std::string> t;
  t.rows["AA"].total_object_count = 0;
  t.rows["BB"].total_user_count = 3;
  t.rows["BB"].total_object_count = 9;
  normalized_stats(t, covariates({{"AA", 10.0, 10.0}, {"BB", 0.0, -1.0}}));
  EXPECT_EQ(t.rows["AA"].objects_per_user, std::nullopt);
  EXPECT_EQ(t.rows["BB"].population_status, CovariateStatus::NonPositive);
  EXPECT_EQ(t.rows["BB"].area_status, CovariateStatus::NonPositive);
  EXPECT_EQ(t.rows["BB"].users_per_resident, std::nullopt);
  EXPECT_EQ(t.rows["BB"].objects_per_km2, std::nullopt);
}

TEST(TopK, Examples) {
  AttractivenessTable<std::string> t;
  t.rows["a"].foreign_object_count = 5;
  t.rows["b"].foreign_object_count = 9;
  t.rows["c"].foreign_object_count = 1;
  EXPECT_EQ(top_k(t, "foreign_object_count", 2),
            (std::vector<std::pair<std::string, double>>{{"b", 9}, {"a", 5}}));
  EXPECT_EQ(top_k(t, "foreign_object_count", 10).size(), 3u);

  AttractivenessTable<std::string> tie;
  tie.rows["AB"].total_object_count = 7;
  tie.rows["AA"].total_object_count = 7;
  EXPECT_EQ(top_k(tie, "total_object_count", 1).front().first, "AA");
}

TEST(TopK, Errors) {
  AttractivenessTable<std::string> t;
  t.rows["a"];
  EXPECT_THROW(top_k(t, "bogus", 3), Error);
  EXPECT_THROW(top_k(AttractivenessTable<std::string>{}, "bogus", 3), Error);
  EXPECT_THROW(top_k(t, "fraction_of_total", 0), ContractViolation);
}

TEST(Rekey, IndexToCode) {
  AttractivenessTable<int> t;
  t.rows[0].foreign_object_count = 2;
  t.rows[1].foreign_object_count = 4;
  const std::vector<std::string> codes{"XX", "AA"};
  const auto r = rekey(t, [&](int i) { return codes[i]; });
  EXPECT_EQ(r.rows.at("AA").foreign_object_count, 4u);
  EXPECT_EQ(r.rows.begin()->first, "AA");
}
