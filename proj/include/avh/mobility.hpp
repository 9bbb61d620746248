#pragma once

#include <Eigen/Dense>
#include <array>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "avh/cohort.hpp"
#include "avh/time.hpp"

namespace avh::mobility {

inline constexpr double kEarthRadiusM = 6'371'000.0;

struct GeoPoint {
  double lat_deg = 0.0;
  double lon_deg = 0.0;
  Instant timestamp{};
};

/// Great-circle distance in meters (haversine form).
template <typename Scalar>
Scalar haversine(Scalar lat1_deg, Scalar lon1_deg, Scalar lat2_deg, Scalar lon2_deg) {
  using std::asin;
  using std::cos;
  using std::min;
  using std::sin;
  using std::sqrt;
  const Scalar rad = Scalar(EIGEN_PI) / Scalar(180);
  const Scalar dphi = (lat2_deg - lat1_deg) * rad;
  const Scalar dlambda = (lon2_deg - lon1_deg) * rad;
  const Scalar s1 = sin(dphi / 2);
  const Scalar s2 = sin(dlambda / 2);
  const Scalar a = s1 * s1 + cos(lat1_deg * rad) * cos(lat2_deg * rad) * s2 * s2;
  return Scalar(2 * kEarthRadiusM) * asin(min(Scalar(1), sqrt(a)));
}

inline double haversine(const GeoPoint& a, const GeoPoint& b) {
  return haversine(a.lat_deg, a.lon_deg, b.lat_deg, b.lon_deg);
}

inline constexpr int kNoise = -1;

/// DBSCAN with haversine distance. A point is core when at least `min_samples`
/// points (itself included) lie within `eps_m`. Points are visited in input
/// order; a new cluster starts at the first unvisited core point and is expanded
/// breadth-first before the next one starts, so a border point reachable from
/// several clusters joins the earliest. Returns one label per point, kNoise for
/// noise, clusters numbered 0, 1, ... in creation order.
std::vector<int> dbscan(std::span<const GeoPoint> points, double eps_m, int min_samples);

struct SignificantLocation {
  int cluster = 0;
  cohort::LatLon center;
  double dwell_minutes = 0.0;
  int member_count = 0;
};

struct MobilityConfig {
  double eps_m = 100.0;
  int min_samples = 5;
  double min_dwell_minutes = 30.0;
  /// false: places_visited counts first entries per hour; true: the window-level
  /// count of significant places is replicated into every hour.
  bool places_per_window = false;
};

/// Clusters a time-sorted track and keeps clusters whose dwell (sum over maximal
/// runs of consecutive member fixes of last minus first timestamp) reaches the
/// configured minimum. Ordered by cluster label.
std::vector<SignificantLocation> significant_locations(std::span<const GeoPoint> track,
                                                       const MobilityConfig& config = {});

enum class Stream {
  places_visited = 0,
  distance_travelled_m,
  unlock_duration_s,
  n_unlocks,
  audio_amplitude_mean,
  conversation_duration_s,
  n_conversations,
};

inline constexpr int kStreams = 7;
inline constexpr int kHours = 24;

std::string_view stream_name(Stream s);

using WindowMatrix = Eigen::Matrix<double, kStreams, kHours, Eigen::RowMajor>;

/// Seven hourly feature streams over the 24 h preceding an EMA; column 0 is the
/// oldest hour.
struct SensingWindow {
  WindowMatrix values = WindowMatrix::Zero();
  Instant ema_timestamp{};
  std::string participant_id;

  auto row(Stream s) const { return values.row(static_cast<int>(s)); }
};

/// Aggregates the participant's events into a SensingWindow ending at
/// `ema_timestamp`. Events of other participants and outside the window are
/// ignored (a screen unlock up to one hour before the window still contributes
/// the part of its span inside the window). Input order does not matter.
SensingWindow hourly_window(std::span<const cohort::SensingEvent> events, std::string_view participant_id,
                            Instant ema_timestamp, const MobilityConfig& config = {});

}  // namespace avh::mobility
