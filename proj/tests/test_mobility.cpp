#include <doctest.h>

#include <numbers>
#include <random>

#include "avh/mobility.hpp"
#include "oracles.hpp"

using namespace avh;
using namespace avh::mobility;
using cohort::SensingEvent;
using cohort::SensingKind;

namespace {

constexpr double kMetersPerDegree = kEarthRadiusM * std::numbers::pi / 180.0;
const Instant t0 = from_unix(1'709'546'400);  // 2024-03-04T10:00:00Z

Instant at(int minutes) { return t0 + std::chrono::minutes{minutes}; }

GeoPoint offset(double lat, double lon, double north_m, double east_m, Instant t = {}) {
  return {lat + north_m / kMetersPerDegree, lon + east_m / (kMetersPerDegree * std::cos(lat * std::numbers::pi / 180.0)), t};
}

std::vector<GeoPoint> blob(std::mt19937_64& rng, double lat, double lon, int n, double radius_m) {
  std::uniform_real_distribution<double> u(-radius_m, radius_m);
  std::vector<GeoPoint> pts;
  for (int i = 0; i < n; ++i) pts.push_back(offset(lat, lon, u(rng), u(rng)));
  return pts;
}

SensingEvent event(SensingKind kind, Instant t, double value = 0.0, cohort::LatLon pos = {}) {
  return {"P1", t, kind, pos, value};
}

}  // namespace

TEST_SUITE("mobility") {

TEST_CASE("haversine reference values") {
  CHECK(haversine(12.5, 40.0, 12.5, 40.0) == 0.0);
  CHECK(haversine(0.0, 0.0, 0.0, 180.0) == doctest::Approx(std::numbers::pi * kEarthRadiusM).epsilon(1e-12));
  CHECK(haversine(0.0, 0.0, 0.0, 1.0) == doctest::Approx(111'195.0).epsilon(1e-5));
  CHECK(haversine(0.0, 0.0, 0.0, 1.0) == doctest::Approx(oracle::law_of_cosines_m(0, 0, 0, 1)).epsilon(1e-9));
}

TEST_CASE("haversine agrees with the law of cosines, is symmetric and obeys the triangle inequality") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> lat(-89.0, 89.0), lon(-180.0, 180.0);
  for (int i = 0; i < 500; ++i) {
    const double a1 = lat(rng), o1 = lon(rng), a2 = lat(rng), o2 = lon(rng), a3 = lat(rng), o3 = lon(rng);
    const double ab = haversine(a1, o1, a2, o2), ba = haversine(a2, o2, a1, o1);
    CHECK(ab >= 0.0);
    CHECK(ab == doctest::Approx(ba).epsilon(1e-12));
    CHECK(ab == doctest::Approx(oracle::law_of_cosines_m(a1, o1, a2, o2)).epsilon(1e-6));
    const double ac = haversine(a1, o1, a3, o3), bc = haversine(a2, o2, a3, o3);
    CHECK(ac <= (ab + bc) * (1.0 + 1e-6));
  }
}

TEST_CASE("dbscan small cases") {
  std::mt19937_64 rng(1);
  SUBCASE("one dense blob") {
    const auto pts = blob(rng, 51.5, -0.1, 10, 20.0);
    const auto labels = dbscan(pts, 100.0, 5);
    CHECK(std::all_of(labels.begin(), labels.end(), [](int l) { return l == 0; }));
  }
  SUBCASE("distant points are noise") {
    std::vector<GeoPoint> pts{{0, 0, {}}, {0, 1, {}}, {1, 0, {}}};
    const auto labels = dbscan(pts, 100.0, 2);
    CHECK(std::all_of(labels.begin(), labels.end(), [](int l) { return l == kNoise; }));
  }
  SUBCASE("two blobs one kilometre apart") {
    auto pts = blob(rng, 48.85, 2.35, 20, 30.0);
    const auto far = offset(48.85, 2.35, 0.0, 1000.0);
    const auto second = blob(rng, far.lat_deg, far.lon_deg, 20, 30.0);
    pts.insert(pts.end(), second.begin(), second.end());
    const auto labels = dbscan(pts, 100.0, 5);
    CHECK(labels == oracle::dbscan(pts, 100.0, 5));
    CHECK(std::count(labels.begin(), labels.end(), 0) == 20);
    CHECK(std::count(labels.begin(), labels.end(), 1) == 20);
  }
}

TEST_CASE("dbscan equals the reachability oracle on random instances") {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 100; ++trial) {
    std::uniform_int_distribution<int> count(1, 200), blobs(1, 6), min_samples(1, 8);
    std::uniform_real_distribution<double> spread(-800.0, 800.0), radius(10.0, 150.0), eps(30.0, 150.0);
    const int n = count(rng), k = blobs(rng);
    std::vector<GeoPoint> centres;
    for (int c = 0; c < k; ++c) centres.push_back(offset(37.0, -122.0, spread(rng), spread(rng)));
    std::vector<GeoPoint> pts;
    for (int i = 0; i < n; ++i) {
      const auto& centre = centres[static_cast<std::size_t>(i % k)];
      const double r = radius(rng);
      std::uniform_real_distribution<double> jitter(-r, r);
      pts.push_back(offset(centre.lat_deg, centre.lon_deg, jitter(rng), jitter(rng)));
    }
    const double e = eps(rng);
    const int m = min_samples(rng);
    CAPTURE(trial);
    CHECK(dbscan(pts, e, m) == oracle::dbscan(pts, e, m));
  }
}

TEST_CASE("significant locations keep dwell of at least 30 minutes") {
  auto track_at = [](std::vector<int> minutes) {
    std::vector<GeoPoint> pts;
    for (int m : minutes) pts.push_back({40.0, -73.0, at(m)});
    return pts;
  };
  SUBCASE("seven fixes over an hour") {
    const auto locs = significant_locations(track_at({0, 10, 20, 30, 40, 50, 60}));
    REQUIRE(locs.size() == 1);
    CHECK(locs[0].dwell_minutes == 60.0);
    CHECK(locs[0].member_count == 7);
    CHECK(locs[0].center.lat_deg == doctest::Approx(40.0));
  }
  SUBCASE("seven fixes over ten minutes") {
    CHECK(significant_locations(track_at({0, 1, 2, 4, 6, 8, 10})).empty());
  }
  SUBCASE("two visits are summed") {
    std::vector<GeoPoint> pts;
    for (int m = 0; m <= 40; m += 10) pts.push_back({40.0, -73.0, at(m)});
    pts.push_back({40.05, -73.0, at(60)});
    for (int m = 80; m <= 105; m += 5) pts.push_back({40.0, -73.0, at(m)});
    const auto locs = significant_locations(pts);
    REQUIRE(locs.size() == 1);
    CHECK(locs[0].dwell_minutes == 65.0);
  }
}

TEST_CASE("hourly window aggregation") {
  const Instant ema = at(24 * 60);
  SUBCASE("no events") {
    const auto w = hourly_window({}, "P1", ema);
    CHECK(w.values.isZero());
    CHECK(w.values.rows() == 7);
    CHECK(w.values.cols() == 24);
  }
  SUBCASE("three unlocks in one hour") {
    std::vector<SensingEvent> ev{event(SensingKind::screen_unlock, at(5 * 60 + 1)),
                                 event(SensingKind::screen_lock, at(5 * 60 + 2)),
                                 event(SensingKind::screen_unlock, at(5 * 60 + 10)),
                                 event(SensingKind::screen_lock, at(5 * 60 + 11)),
                                 event(SensingKind::screen_unlock, at(5 * 60 + 30)),
                                 event(SensingKind::screen_lock, at(5 * 60 + 32))};
    const auto w = hourly_window(ev, "P1", ema);
    Eigen::RowVectorXd expected = Eigen::RowVectorXd::Zero(24);
    expected[5] = 3.0;
    CHECK(w.row(Stream::n_unlocks) == expected);
    CHECK(w.values(static_cast<int>(Stream::unlock_duration_s), 5) == 240.0);
  }
  SUBCASE("unlock span straddling an hour boundary is split") {
    std::vector<SensingEvent> ev{event(SensingKind::screen_unlock, at(2 * 60 + 50)),
                                 event(SensingKind::screen_lock, at(3 * 60 + 5))};
    const auto w = hourly_window(ev, "P1", ema);
    CHECK(w.values(static_cast<int>(Stream::unlock_duration_s), 2) == 600.0);
    CHECK(w.values(static_cast<int>(Stream::unlock_duration_s), 3) == 300.0);
    CHECK(w.row(Stream::unlock_duration_s).sum() == 900.0);
  }
  SUBCASE("amplitude mean and conversations") {
    std::vector<SensingEvent> ev{event(SensingKind::audio_amplitude, at(23 * 60 + 1), 10.0),
                                 event(SensingKind::audio_amplitude, at(23 * 60 + 2), 30.0),
                                 event(SensingKind::conversation, at(7 * 60), 120.0),
                                 event(SensingKind::conversation, at(7 * 60 + 30), 60.0),
                                 event(SensingKind::conversation, ema, 999.0)};
    const auto w = hourly_window(ev, "P1", ema);
    CHECK(w.values(static_cast<int>(Stream::audio_amplitude_mean), 23) == 20.0);
    CHECK(w.values(static_cast<int>(Stream::conversation_duration_s), 7) == 180.0);
    CHECK(w.values(static_cast<int>(Stream::n_conversations), 7) == 2.0);
    CHECK(w.row(Stream::n_conversations).sum() == 2.0);
  }
  SUBCASE("places and distance between significant locations") {
    std::vector<SensingEvent> ev;
    for (int m = 60; m <= 120; m += 10) ev.push_back(event(SensingKind::gps, at(m), 0, {40.0, -73.0}));
    for (int m = 300; m <= 360; m += 10) ev.push_back(event(SensingKind::gps, at(m), 0, {40.0, -72.99}));
    const auto w = hourly_window(ev, "P1", ema);
    CHECK(w.values(static_cast<int>(Stream::places_visited), 1) == 1.0);
    CHECK(w.values(static_cast<int>(Stream::places_visited), 5) == 1.0);
    CHECK(w.values(static_cast<int>(Stream::distance_travelled_m), 5) ==
          doctest::Approx(haversine(40.0, -73.0, 40.0, -72.99)));
  }
  SUBCASE("missing timestamp is rejected") {
    CHECK_THROWS_AS(hourly_window({}, "P1", Instant{}), InvalidArgument);
  }
}

TEST_CASE("hourly window is insensitive to event order and other participants") {
  const auto c = cohort::generate_synthetic_cohort({.n_participants = 2, .n_days = 3, .seed = 9});
  auto shuffled = c.events;
  std::mt19937_64 rng(5);
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  int checked = 0;
  for (const auto& e : c.emas) {
    const auto a = hourly_window(c.events, e.participant_id, e.timestamp);
    const auto b = hourly_window(shuffled, e.participant_id, e.timestamp);
    CHECK(a.values == b.values);
    CHECK(a.values.allFinite());
    CHECK((a.values.array() >= 0.0).all());
    ++checked;
  }
  CHECK(checked > 0);
}

}
