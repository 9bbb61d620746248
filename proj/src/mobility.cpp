#include "avh/mobility.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <map>

#include "avh/error.hpp"

namespace avh::mobility {

std::string_view stream_name(Stream s) {
  switch (s) {
    case Stream::places_visited: return "places_visited";
    case Stream::distance_travelled_m: return "distance_travelled_m";
    case Stream::unlock_duration_s: return "unlock_duration_s";
    case Stream::n_unlocks: return "n_unlocks";
    case Stream::audio_amplitude_mean: return "audio_amplitude_mean";
    case Stream::conversation_duration_s: return "conversation_duration_s";
    case Stream::n_conversations: return "n_conversations";
  }
  return "?";
}

std::vector<int> dbscan(std::span<const GeoPoint> points, double eps_m, int min_samples) {
  if (!(eps_m > 0.0)) throw InvalidArgument("dbscan: eps must be positive");
  if (min_samples < 1) throw InvalidArgument("dbscan: min_samples must be >= 1");
  const std::size_t n = points.size();

  std::vector<std::vector<std::size_t>> neighbours(n);
  for (std::size_t i = 0; i < n; ++i) {
    neighbours[i].push_back(i);
    for (std::size_t j = i + 1; j < n; ++j) {
      if (haversine(points[i], points[j]) <= eps_m) {
        neighbours[i].push_back(j);
        neighbours[j].push_back(i);
      }
    }
  }
  for (auto& list : neighbours) std::sort(list.begin(), list.end());
  auto is_core = [&](std::size_t i) { return neighbours[i].size() >= static_cast<std::size_t>(min_samples); };

  std::vector<int> label(n, kNoise);
  std::vector<bool> visited(n, false);
  int next_cluster = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (visited[i] || !is_core(i)) continue;
    const int cluster = next_cluster++;
    std::deque<std::size_t> frontier{i};
    visited[i] = true;
    label[i] = cluster;
    while (!frontier.empty()) {
      const auto p = frontier.front();
      frontier.pop_front();
      if (!is_core(p)) continue;
      for (auto q : neighbours[p]) {
        if (label[q] == kNoise) label[q] = cluster;
        if (!visited[q]) {
          visited[q] = true;
          frontier.push_back(q);
        }
      }
    }
  }
  return label;
}

namespace {

struct Run {
  int cluster;
  std::size_t first;
  std::size_t last;
};

/// Maximal runs of consecutive fixes sharing a non-noise label.
std::vector<Run> member_runs(const std::vector<int>& labels) {
  std::vector<Run> runs;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == kNoise) continue;
    if (!runs.empty() && runs.back().cluster == labels[i] && runs.back().last + 1 == i) {
      runs.back().last = i;
    } else {
      runs.push_back({labels[i], i, i});
    }
  }
  return runs;
}

std::vector<SignificantLocation> locations_from(std::span<const GeoPoint> track, const std::vector<int>& labels,
                                                const std::vector<Run>& runs, const MobilityConfig& config) {
  std::map<int, SignificantLocation> acc;
  for (std::size_t i = 0; i < track.size(); ++i) {
    if (labels[i] == kNoise) continue;
    auto& loc = acc[labels[i]];
    loc.cluster = labels[i];
    loc.center.lat_deg += track[i].lat_deg;
    loc.center.lon_deg += track[i].lon_deg;
    ++loc.member_count;
  }
  for (const auto& run : runs) {
    const auto span = track[run.last].timestamp - track[run.first].timestamp;
    acc[run.cluster].dwell_minutes += static_cast<double>(span.count()) / 60.0;
  }
  std::vector<SignificantLocation> out;
  for (auto& [cluster, loc] : acc) {
    loc.center.lat_deg /= loc.member_count;
    loc.center.lon_deg /= loc.member_count;
    if (loc.dwell_minutes >= config.min_dwell_minutes) out.push_back(loc);
  }
  return out;
}

}  // namespace

std::vector<SignificantLocation> significant_locations(std::span<const GeoPoint> track, const MobilityConfig& config) {
  const auto labels = dbscan(track, config.eps_m, config.min_samples);
  return locations_from(track, labels, member_runs(labels), config);
}

SensingWindow hourly_window(std::span<const cohort::SensingEvent> events, std::string_view participant_id,
                            Instant ema_timestamp, const MobilityConfig& config) {
  using cohort::SensingKind;
  if (ema_timestamp == Instant{}) throw InvalidArgument("hourly_window: missing EMA timestamp");

  SensingWindow window;
  window.ema_timestamp = ema_timestamp;
  window.participant_id = std::string(participant_id);

  const Instant start = ema_timestamp - std::chrono::hours{24};
  const Instant lookback = start - std::chrono::hours{1};

  std::vector<const cohort::SensingEvent*> selected;
  for (const auto& e : events) {
    if (e.participant_id != participant_id || e.timestamp >= ema_timestamp || e.timestamp < lookback) continue;
    selected.push_back(&e);
  }
  // Total order so that duplicated timestamps cannot depend on input order.
  std::sort(selected.begin(), selected.end(), [](const auto* a, const auto* b) {
    if (a->timestamp != b->timestamp) return a->timestamp < b->timestamp;
    if (a->kind != b->kind) return a->kind < b->kind;
    if (a->value != b->value) return a->value < b->value;
    if (a->position.lat_deg != b->position.lat_deg) return a->position.lat_deg < b->position.lat_deg;
    return a->position.lon_deg < b->position.lon_deg;
  });

  auto bucket_of = [&](Instant t) {
    return static_cast<int>((t - start).count() / 3600);
  };
  auto& v = window.values;
  std::array<int, kHours> amplitude_count{};
  std::vector<GeoPoint> track;
  std::optional<Instant> open_unlock;

  auto add_span = [&](Instant from, Instant to) {
    from = std::max(from, start);
    to = std::min(to, ema_timestamp);
    for (Instant t = from; t < to;) {
      const int h = bucket_of(t);
      const Instant bucket_end = start + std::chrono::hours{h + 1};
      const Instant stop = std::min(bucket_end, to);
      v(static_cast<int>(Stream::unlock_duration_s), h) += static_cast<double>((stop - t).count());
      t = stop;
    }
  };

  for (const auto* e : selected) {
    const bool inside = e->timestamp >= start;
    switch (e->kind) {
      case SensingKind::screen_unlock:
        if (!open_unlock) open_unlock = e->timestamp;
        if (inside) v(static_cast<int>(Stream::n_unlocks), bucket_of(e->timestamp)) += 1.0;
        break;
      case SensingKind::screen_lock:
        if (open_unlock) {
          add_span(*open_unlock, e->timestamp);
          open_unlock.reset();
        }
        break;
      case SensingKind::gps:
        if (inside) track.push_back({e->position.lat_deg, e->position.lon_deg, e->timestamp});
        break;
      case SensingKind::audio_amplitude:
        if (inside) {
          const int h = bucket_of(e->timestamp);
          v(static_cast<int>(Stream::audio_amplitude_mean), h) += e->value;
          ++amplitude_count[h];
        }
        break;
      case SensingKind::conversation:
        if (inside) {
          const int h = bucket_of(e->timestamp);
          v(static_cast<int>(Stream::conversation_duration_s), h) += e->value;
          v(static_cast<int>(Stream::n_conversations), h) += 1.0;
        }
        break;
    }
  }
  if (open_unlock) add_span(*open_unlock, ema_timestamp);
  for (int h = 0; h < kHours; ++h)
    if (amplitude_count[h] > 0) v(static_cast<int>(Stream::audio_amplitude_mean), h) /= amplitude_count[h];

  if (!track.empty()) {
    const auto labels = dbscan(track, config.eps_m, config.min_samples);
    const auto runs = member_runs(labels);
    const auto places = locations_from(track, labels, runs, config);
    std::map<int, const SignificantLocation*> significant;
    for (const auto& p : places) significant[p.cluster] = &p;

    // Visits: runs at significant places with consecutive repeats of the same
    // place merged.
    struct Visit {
      int cluster;
      Instant entered;
    };
    std::vector<Visit> visits;
    for (const auto& run : runs) {
      if (!significant.count(run.cluster)) continue;
      if (!visits.empty() && visits.back().cluster == run.cluster) continue;
      visits.push_back({run.cluster, track[run.first].timestamp});
    }

    if (config.places_per_window) {
      v.row(static_cast<int>(Stream::places_visited)).setConstant(static_cast<double>(places.size()));
    } else {
      std::map<int, Instant> first_entry;
      for (const auto& visit : visits) first_entry.emplace(visit.cluster, visit.entered);
      for (const auto& [cluster, t] : first_entry) v(static_cast<int>(Stream::places_visited), bucket_of(t)) += 1.0;
    }
    for (std::size_t k = 1; k < visits.size(); ++k) {
      const auto& a = significant.at(visits[k - 1].cluster)->center;
      const auto& b = significant.at(visits[k].cluster)->center;
      v(static_cast<int>(Stream::distance_travelled_m), bucket_of(visits[k].entered)) +=
          haversine(a.lat_deg, a.lon_deg, b.lat_deg, b.lon_deg);
    }
  }
  return window;
}

}  // namespace avh::mobility
