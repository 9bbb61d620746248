#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <map>
#include <numbers>
#include <numeric>
#include <random>

#include "avh/cohort.hpp"
#include "avh/error.hpp"
#include "avh/mobility.hpp"
#include "avh/seed.hpp"
#include "avh/spectrogram.hpp"
#include "avh/text.hpp"

namespace avh::cohort {

namespace {

using Rng = std::mt19937_64;

constexpr std::array<int, 7> kTimezones = {-480, -300, -240, 0, 60, 120, 330};
constexpr std::array<LatLon, 7> kCities = {{{37.77, -122.42},
                                             {40.71, -74.01},
                                             {42.36, -71.06},
                                             {51.51, -0.13},
                                             {48.86, 2.35},
                                             {52.52, 13.40},
                                             {19.08, 72.88}}};

const std::array<const char*, 12> kIntense = {"screaming", "threatening", "hate", "kill",   "worthless", "loud",
                                               "shouting", "attack",      "evil", "punish", "danger",    "die"};
const std::array<const char*, 12> kCalm = {"gentle", "quiet", "kind",    "whisper", "calm",   "friendly",
                                           "soft",   "safe",  "helpful", "comfort", "smiled", "peaceful"};
const std::array<const char*, 24> kFiller = {"the",   "voice", "said",  "i",     "was",  "at",   "home",  "it",
                                             "told",  "me",    "they",  "again", "today", "then", "heard", "when",
                                             "about", "my",    "room",  "felt",  "were", "there", "this", "and"};

struct QuestionModel {
  std::array<double, 4> weights;     // trait, text, sensing, voice
  std::array<double, 4> prevalence;  // target class shares
};

constexpr std::array<QuestionModel, 4> kQuestionModels = {{
    {{0.35, 0.70, 0.60, 0.20}, {0.20, 0.24, 0.29, 0.27}},
    {{0.30, 0.35, 0.55, 0.60}, {0.14, 0.38, 0.30, 0.18}},
    {{0.45, 0.50, 0.60, 0.15}, {0.41, 0.27, 0.19, 0.13}},
    {{0.40, 0.55, 0.55, 0.30}, {0.28, 0.26, 0.24, 0.22}},
}};
constexpr double kLabelNoise = 0.35;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Instant parse_date(const std::string& date) {
  int y = 0;
  unsigned m = 0, d = 0;
  const char* p = date.data();
  const char* end = p + date.size();
  auto r1 = std::from_chars(p, end, y);
  if (r1.ec != std::errc{} || r1.ptr == end || *r1.ptr != '-') throw InvalidArgument("bad start_date '" + date + "'");
  auto r2 = std::from_chars(r1.ptr + 1, end, m);
  if (r2.ec != std::errc{} || r2.ptr == end || *r2.ptr != '-') throw InvalidArgument("bad start_date '" + date + "'");
  auto r3 = std::from_chars(r2.ptr + 1, end, d);
  if (r3.ec != std::errc{} || r3.ptr != end) throw InvalidArgument("bad start_date '" + date + "'");
  const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
  if (!ymd.ok()) throw InvalidArgument("bad start_date '" + date + "'");
  return std::chrono::sys_days{ymd};
}

LatLon offset_m(LatLon p, double north_m, double east_m) {
  constexpr double kMetersPerDegree = 111195.0;
  const double coslat = std::cos(p.lat_deg * std::numbers::pi / 180.0);
  return {p.lat_deg + north_m / kMetersPerDegree, p.lon_deg + east_m / (kMetersPerDegree * coslat)};
}

struct Person {
  Participant info;
  double trait = 0.0;
  double hearing_logit = 0.0;
  int wake_hour = 7;
  int sleep_hour = 23;
  LatLon home, work;
  std::vector<LatLon> places;
};

struct Stay {
  int begin_min = 0;  // local minutes from midnight
  int end_min = 0;
  LatLon where;
};

struct Span {
  std::int64_t begin = 0;  // unix seconds
  std::int64_t end = 0;
};

void simulate_sensing(const Person& p, const SynthConfig& cfg, Instant start, Rng& rng,
                      std::vector<SensingEvent>& out) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const std::int64_t offset_s = static_cast<std::int64_t>(p.info.timezone_offset_minutes) * 60;
  const std::int64_t start_s = to_unix(start);
  double z = 0.0;
  auto emit = [&](std::int64_t t, SensingKind kind, LatLon pos = {}, double value = 0.0) {
    out.push_back({p.info.id, from_unix(t), kind, pos, value});
  };

  for (int day = -1; day < cfg.n_days; ++day) {
    z = 0.6 * z + 0.8 * normal(rng);
    const std::int64_t midnight = start_s + static_cast<std::int64_t>(day) * 86400 - offset_s;
    const int weekday = static_cast<int>(
        std::chrono::weekday{std::chrono::sys_days{std::chrono::floor<std::chrono::days>(start)} +
                             std::chrono::days{day}}
            .c_encoding());
    const bool workday = weekday >= 1 && weekday <= 5 && unit(rng) < 0.8;

    // Where the participant is, minute by minute.
    std::vector<Stay> itinerary;
    int cursor = 0;
    auto stay = [&](int until, LatLon where) {
      until = std::clamp(until, cursor, 1440);
      if (until > cursor) itinerary.push_back({cursor, until, where});
      cursor = until;
    };
    if (workday) {
      stay((p.wake_hour + 2) * 60 + static_cast<int>(unit(rng) * 30), p.home);
      stay(cursor + 480 + static_cast<int>(unit(rng) * 60), p.work);
    }
    stay(18 * 60 + static_cast<int>(unit(rng) * 30), p.home);
    std::poisson_distribution<int> outings(0.6 * std::exp(0.6 * z));
    for (int k = outings(rng); k > 0 && cursor < (p.sleep_hour - 1) * 60; --k) {
      const auto& place = p.places[static_cast<std::size_t>(unit(rng) * p.places.size()) % p.places.size()];
      stay(cursor + 40 + static_cast<int>(unit(rng) * 60), place);
      stay(cursor + 10 + static_cast<int>(unit(rng) * 20), p.home);
    }
    stay(1440, p.home);

    for (int minute = 0; minute < 1440; minute += cfg.gps_interval_minutes) {
      const auto it = std::find_if(itinerary.begin(), itinerary.end(),
                                   [&](const Stay& s) { return minute >= s.begin_min && minute < s.end_min; });
      const LatLon fix = offset_m(it->where, 15.0 * normal(rng), 15.0 * normal(rng));
      emit(midnight + minute * 60, SensingKind::gps, fix);
    }

    std::vector<Span> talks;
    for (int hour = 0; hour < 24; ++hour) {
      const bool awake = hour >= p.wake_hour && hour < p.sleep_hour;
      const double active = awake ? sigmoid(0.5 + 1.2 * z) : sigmoid(-2.5 + 1.5 * z);
      const std::int64_t h0 = midnight + hour * 3600;

      if (unit(rng) < active) {
        std::poisson_distribution<int> extra(2.0 * std::exp(0.3 * z));
        const int sessions = 1 + extra(rng);
        std::vector<std::int64_t> starts(static_cast<std::size_t>(sessions));
        for (auto& s : starts) s = h0 + static_cast<std::int64_t>(unit(rng) * 3540);
        std::sort(starts.begin(), starts.end());
        for (std::size_t i = 0; i < starts.size(); ++i) {
          auto len = static_cast<std::int64_t>(30.0 + 570.0 * unit(rng) * unit(rng));
          if (i + 1 < starts.size()) len = std::min(len, starts[i + 1] - starts[i] - 1);
          if (len < 1) continue;
          emit(starts[i], SensingKind::screen_unlock);
          emit(starts[i] + len, SensingKind::screen_lock);
        }
      }

      if (unit(rng) < active * (awake ? 0.9 : 0.5)) {
        std::poisson_distribution<int> extra(0.5);
        const int n = 1 + extra(rng);
        std::int64_t t = h0;
        for (int i = 0; i < n; ++i) {
          t += static_cast<std::int64_t>(unit(rng) * 900);
          if (t >= h0 + 3600) break;
          const double seconds = std::round(60.0 + 840.0 * unit(rng));
          emit(t, SensingKind::conversation, {}, seconds);
          talks.push_back({t, t + static_cast<std::int64_t>(seconds)});
          t += static_cast<std::int64_t>(seconds);
        }
      }
    }

    for (int minute = 0; minute < 1440; minute += cfg.amplitude_interval_minutes) {
      const int hour = minute / 60;
      const bool awake = hour >= p.wake_hour && hour < p.sleep_hour;
      const std::int64_t t = midnight + minute * 60;
      double level = awake ? 0.04 * std::exp(0.25 * z + 0.3 * normal(rng)) : 0.01 * std::exp(0.3 * normal(rng));
      if (std::any_of(talks.begin(), talks.end(), [&](const Span& s) { return t >= s.begin && t < s.end; }))
        level += 0.2;
      emit(t, SensingKind::audio_amplitude, {}, std::round(level * 1e4) / 1e4);
    }
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const SensingEvent& a, const SensingEvent& b) { return a.timestamp < b.timestamp; });
}

std::vector<std::vector<std::string>> write_transcript(double text_latent, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> sentences(1, 3);
  std::uniform_int_distribution<int> words(4, 9);
  const double intense = sigmoid(2.5 * text_latent);
  std::vector<std::vector<std::string>> transcript(static_cast<std::size_t>(sentences(rng)));
  for (auto& sentence : transcript) {
    const int n = words(rng);
    for (int i = 0; i < n; ++i) {
      const auto pick = [&](const auto& vocab) { return vocab[static_cast<std::size_t>(unit(rng) * vocab.size()) % vocab.size()]; };
      if (unit(rng) < 0.5) {
        sentence.emplace_back(unit(rng) < intense ? pick(kIntense) : pick(kCalm));
      } else {
        sentence.emplace_back(pick(kFiller));
      }
    }
  }
  return transcript;
}

/// Fraction of hours with any phone or conversation activity in the window.
double activity_fraction(const mobility::SensingWindow& w) {
  using mobility::Stream;
  double total = 0.0;
  for (auto s : {Stream::unlock_duration_s, Stream::n_unlocks, Stream::conversation_duration_s,
                 Stream::n_conversations})
    total += static_cast<double>((w.row(s).array() > 0.0).count()) / mobility::kHours;
  return total / 4.0;
}

std::vector<double> standardize(std::vector<double> v) {
  if (v.empty()) return v;
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  const double sd = std::sqrt(var / static_cast<double>(v.size()));
  for (double& x : v) x = sd > 0.0 ? (x - mean) / sd : 0.0;
  return v;
}

}  // namespace

std::vector<float> render_voice(const VoiceRecipe& r) {
  constexpr int kRate = 16000;
  if (!(r.seconds > 0.0) || !(r.f0_hz > 0.0) || !(r.amplitude >= 0.0))
    throw InvalidArgument("render_voice: invalid recipe");
  const auto n = static_cast<std::size_t>(std::llround(r.seconds * kRate));
  std::vector<float> noise(n);
  spectrogram::fill_standard_normal<float>(derive_seed(r.seed, "voice-noise"), 0, noise);
  std::vector<float> out(n);
  double phase = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / kRate;
    const double f = r.f0_hz * (1.0 + 0.02 * std::sin(2.0 * std::numbers::pi * 5.0 * t));
    phase += 2.0 * std::numbers::pi * f / kRate;
    double s = 0.0;
    for (int k = 1; k <= 6; ++k) s += std::sin(k * phase) / k;
    out[i] = static_cast<float>(r.amplitude * (s + 0.05 * noise[i]));
  }
  return out;
}

Cohort generate_synthetic_cohort(const SynthConfig& cfg) {
  if (cfg.n_participants < 1 || cfg.n_days < 1) throw InvalidArgument("synth: participants and days must be >= 1");
  if (cfg.gps_interval_minutes < 1 || cfg.amplitude_interval_minutes < 1)
    throw InvalidArgument("synth: sampling intervals must be >= 1 minute");
  if (!(cfg.compliance >= 0.0 && cfg.compliance <= 1.0)) throw InvalidArgument("synth: compliance must lie in [0, 1]");
  const Instant start = parse_date(cfg.start_date);

  Cohort cohort;
  std::vector<Person> people;
  for (int i = 0; i < cfg.n_participants; ++i) {
    Rng rng(derive_seed(cfg.seed, "synth-person", static_cast<std::uint64_t>(i)));
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Person p;
    char id[16];
    std::snprintf(id, sizeof id, "P%03d", i + 1);
    p.info.id = id;
    const auto city = static_cast<std::size_t>(unit(rng) * kTimezones.size()) % kTimezones.size();
    p.info.timezone_offset_minutes = kTimezones[city];
    p.trait = normal(rng);
    p.hearing_logit = -0.35 + 0.8 * normal(rng);
    p.wake_hour = 6 + static_cast<int>(unit(rng) * 3);
    p.sleep_hour = 22 + static_cast<int>(unit(rng) * 2);
    p.home = offset_m(kCities[city], 3000.0 * normal(rng), 3000.0 * normal(rng));
    p.work = offset_m(p.home, 2000.0 + 3000.0 * unit(rng), 2000.0 * normal(rng));
    for (int k = 0; k < 3; ++k) p.places.push_back(offset_m(p.home, 1500.0 * normal(rng), 1500.0 * normal(rng)));
    cohort.participants.push_back(p.info);
    people.push_back(std::move(p));
  }

  // Sensing streams, grouped per participant for window extraction.
  std::vector<std::vector<SensingEvent>> streams(people.size());
  for (std::size_t i = 0; i < people.size(); ++i) {
    Rng rng(derive_seed(cfg.seed, "synth-sensing", i));
    simulate_sensing(people[i], cfg, start, rng, streams[i]);
  }

  // EMA prompts and answers.
  struct Pending {
    std::size_t person;
    std::size_t ema;
  };
  std::vector<Pending> hearing;
  for (std::size_t i = 0; i < people.size(); ++i) {
    const auto& p = people[i];
    Rng rng(derive_seed(cfg.seed, "synth-ema", i));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const std::int64_t offset_s = static_cast<std::int64_t>(p.info.timezone_offset_minutes) * 60;
    for (int day = 0; day < cfg.n_days; ++day) {
      const std::int64_t midnight = to_unix(start) + static_cast<std::int64_t>(day) * 86400 - offset_s;
      for (const auto& window : kPromptWindows) {
        const bool prompted = unit(rng) < cfg.compliance;
        const bool self = !prompted && unit(rng) < 0.08;
        const auto span = static_cast<double>((window[1] - window[0]) * 3600);
        const auto t = midnight + window[0] * 3600 + static_cast<std::int64_t>(unit(rng) * span);
        const bool hears = unit(rng) < sigmoid(p.hearing_logit);
        if (!prompted && !self) continue;
        EmaResponse r;
        r.participant_id = p.info.id;
        r.timestamp = from_unix(t);
        r.hearing = hears;
        r.self_initiated = self;
        if (hears) hearing.push_back({i, cohort.emas.size()});
        cohort.emas.push_back(std::move(r));
      }
    }
  }

  // Latents for every hearing EMA, then ordinals by rank-quantization.
  const std::size_t n = hearing.size();
  std::vector<double> text_latent(n), voice_latent(n), activity(n);
  std::vector<std::array<double, 4>> noise(n);
  text::StubEncoder encoder(derive_seed(cfg.seed, "synth-encoder"));
  for (std::size_t k = 0; k < n; ++k) {
    const auto& [i, e] = hearing[k];
    const auto& ema = cohort.emas[e];
    Rng rng(derive_seed(cfg.seed, "synth-diary", i, static_cast<std::uint64_t>(to_unix(ema.timestamp))));
    std::normal_distribution<double> normal(0.0, 1.0);
    text_latent[k] = 0.4 * people[i].trait + std::sqrt(1.0 - 0.16) * normal(rng);
    voice_latent[k] = normal(rng);
    for (auto& x : noise[k]) x = normal(rng);

    auto stack = encoder.encode(write_transcript(text_latent[k], rng));
    stack.participant_id = ema.participant_id;
    stack.ema_timestamp = ema.timestamp;
    cohort.diaries.push_back(std::move(stack));

    DiaryAudio audio;
    audio.participant_id = ema.participant_id;
    audio.ema_timestamp = ema.timestamp;
    audio.recipe = VoiceRecipe{2.0, std::round(140.0 * std::exp(0.25 * people[i].trait + 0.03 * normal(rng)) * 100) / 100,
                               std::round(0.1 * std::exp(0.5 * voice_latent[k]) * 1e4) / 1e4, derive_seed(cfg.seed, "synth-voice", k)};
    cohort.audio.push_back(std::move(audio));

    const auto window = mobility::hourly_window(streams[i], ema.participant_id, ema.timestamp);
    activity[k] = activity_fraction(window);
  }
  const auto v = standardize(activity);
  const auto u = standardize(text_latent);
  const auto w = standardize(voice_latent);

  std::vector<ValenceAnswers> answers(n);
  for (std::size_t q = 0; q < kQuestions.size(); ++q) {
    const auto& model = kQuestionModels[q];
    std::vector<double> score(n);
    for (std::size_t k = 0; k < n; ++k) {
      const double t = people[hearing[k].person].trait;
      score[k] = model.weights[0] * t + model.weights[1] * u[k] + model.weights[2] * v[k] + model.weights[3] * w[k] +
                 kLabelNoise * noise[k][q];
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return score[a] < score[b]; });
    double cumulative = 0.0;
    std::size_t pos = 0;
    for (int c = 0; c < kNumClasses; ++c) {
      cumulative += model.prevalence[static_cast<std::size_t>(c)];
      const auto stop = c + 1 == kNumClasses ? n : static_cast<std::size_t>(std::llround(cumulative * static_cast<double>(n)));
      for (; pos < stop; ++pos) answers[order[pos]].ordinals[q] = c;
    }
  }
  for (std::size_t k = 0; k < n; ++k) cohort.emas[hearing[k].ema].answers = answers[k];

  // Stub stacks at the archive's f32 precision so a saved cohort reloads exactly.
  std::map<const LayerStack*, std::shared_ptr<const LayerStack>> rounded;
  for (auto& d : cohort.diaries)
    for (auto& sentence : d.sentences)
      for (auto& token : sentence) {
        auto& r = rounded[token.layers.get()];
        if (!r) r = std::make_shared<LayerStack>(token.layers->cast<float>().cast<double>());
        token.layers = r;
      }

  for (auto& s : streams) {
    cohort.events.insert(cohort.events.end(), std::make_move_iterator(s.begin()), std::make_move_iterator(s.end()));
    std::vector<SensingEvent>().swap(s);
  }
  return cohort;
}

}  // namespace avh::cohort
