#pragma once

// Per-user activity accumulation and home-country inference.
//
// A user's home is the country holding both the strictly largest number of
// their media objects and the strictly largest number of distinct calendar
// days with activity. Anything else leaves the user undetermined.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "geoscale/common.hpp"
#include "geoscale/record_ingest.hpp"

namespace geoscale {

struct CountryActivity {
  std::uint64_t object_count = 0;
  std::set<Date> active_days;

  std::uint64_t day_count() const { return active_days.size(); }
  friend bool operator==(const CountryActivity&, const CountryActivity&) = default;
};

template <class Country>
struct UserActivity {
  std::map<Country, CountryActivity> countries;

  bool empty() const { return countries.empty(); }
  friend bool operator==(const UserActivity&, const UserActivity&) = default;
};

/// Activity of every user, keyed by user id.
template <class Country>
class ActivityStore {
 public:
  void accumulate(std::string_view user_id, const Country& country, Timestamp taken_at) {
    auto it = users_.find(user_id);
    if (it == users_.end()) it = users_.emplace(std::string(user_id), UserActivity<Country>{}).first;
    auto& a = it->second.countries[country];
    ++a.object_count;
    a.active_days.insert(calendar_date(taken_at));
  }

  /// Absorbs another store. Shards must be disjoint by user or the merge
  /// combines their activity per (user, country).
  void merge(ActivityStore&& other) {
    for (auto& [user, act] : other.users_) {
      auto [it, inserted] = users_.try_emplace(user, std::move(act));
      if (inserted) continue;
      for (auto& [country, ca] : act.countries) {
        auto& dst = it->second.countries[country];
        dst.object_count += ca.object_count;
        dst.active_days.merge(ca.active_days);
      }
    }
  }

  const UserActivity<Country>* find(std::string_view user_id) const {
    auto it = users_.find(user_id);
    return it == users_.end() ? nullptr : &it->second;
  }

  std::size_t size() const { return users_.size(); }

  /// User ids in ascending order.
  std::vector<std::string_view> sorted_users() const {
    std::vector<std::string_view> ids;
    ids.reserve(users_.size());
    for (const auto& [u, _] : users_) ids.push_back(u);
    std::sort(ids.begin(), ids.end());
    return ids;
  }

  template <class Fn>
  void for_each(Fn&& fn) const {
    for (const auto& [u, a] : users_) fn(std::string_view(u), a);
  }

 private:
  struct Hash {
    using is_transparent = void;
    std::size_t operator()(std::string_view s) const { return std::hash<std::string_view>{}(s); }
  };
  std::unordered_map<std::string, UserActivity<Country>, Hash, std::equal_to<>> users_;
};

enum class UndeterminedReason { ObjectTie, DayTie, ArgmaxMismatch };

inline std::string_view to_string(UndeterminedReason r) {
  switch (r) {
    case UndeterminedReason::ObjectTie: return "ObjectTie";
    case UndeterminedReason::DayTie: return "DayTie";
    case UndeterminedReason::ArgmaxMismatch: return "ArgmaxMismatch";
  }
  return "?";
}

template <class Country>
struct HomeAssignment {
  std::optional<Country> home;
  /// Engaged exactly when `home` is not.
  std::optional<UndeterminedReason> reason;

  static HomeAssignment at(Country c) { return {std::move(c), std::nullopt}; }
  static HomeAssignment undetermined(UndeterminedReason r) { return {std::nullopt, r}; }

  bool determined() const { return home.has_value(); }
  friend bool operator==(const HomeAssignment&, const HomeAssignment&) = default;
};

template <class Country>
HomeAssignment<Country> infer_home(const UserActivity<Country>& activity) {
  if (activity.empty()) throw ContractViolation("infer_home requires non-empty activity");

  const Country* by_objects = nullptr;
  const Country* by_days = nullptr;
  std::uint64_t max_objects = 0, max_days = 0;
  bool object_tie = false, day_tie = false;
  for (const auto& [country, a] : activity.countries) {
    if (a.object_count > max_objects) {
      max_objects = a.object_count;
      by_objects = &country;
      object_tie = false;
    } else if (a.object_count == max_objects) {
      object_tie = true;
    }
    if (a.day_count() > max_days) {
      max_days = a.day_count();
      by_days = &country;
      day_tie = false;
    } else if (a.day_count() == max_days) {
      day_tie = true;
    }
  }
  using R = UndeterminedReason;
  if (object_tie) return HomeAssignment<Country>::undetermined(R::ObjectTie);
  if (day_tie) return HomeAssignment<Country>::undetermined(R::DayTie);
  if (!(*by_objects == *by_days)) return HomeAssignment<Country>::undetermined(R::ArgmaxMismatch);
  return HomeAssignment<Country>::at(*by_objects);
}

enum class Foreignness { ForeignUser, DomesticUser, Unknown };

template <class Country>
Foreignness foreignness(const HomeAssignment<Country>& assignment, const Country& country) {
  if (!assignment.home) return Foreignness::Unknown;
  return *assignment.home == country ? Foreignness::DomesticUser : Foreignness::ForeignUser;
}

template <class Country>
using AssignmentMap = std::unordered_map<std::string, HomeAssignment<Country>>;

struct HomeStats {
  std::uint64_t users = 0;
  std::uint64_t homes_found = 0;
  std::uint64_t object_tie = 0;
  std::uint64_t day_tie = 0;
  std::uint64_t argmax_mismatch = 0;
  friend bool operator==(const HomeStats&, const HomeStats&) = default;
};

template <class Country>
AssignmentMap<Country> infer_homes(const ActivityStore<Country>& store, HomeStats* stats = nullptr) {
  AssignmentMap<Country> out;
  out.reserve(store.size());
  HomeStats s;
  store.for_each([&](std::string_view user, const UserActivity<Country>& a) {
    auto h = infer_home(a);
    ++s.users;
    if (h.home) {
      ++s.homes_found;
    } else {
      switch (*h.reason) {
        case UndeterminedReason::ObjectTie: ++s.object_tie; break;
        case UndeterminedReason::DayTie: ++s.day_tie; break;
        case UndeterminedReason::ArgmaxMismatch: ++s.argmax_mismatch; break;
      }
    }
    out.emplace(std::string(user), std::move(h));
  });
  if (stats) *stats = s;
  return out;
}

}  // namespace geoscale
