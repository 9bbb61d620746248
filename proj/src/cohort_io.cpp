#include <charconv>
#include <cstring>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include "avh/cohort.hpp"
#include "avh/error.hpp"
#include "avh/seed.hpp"

namespace avh::cohort {

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    fields.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  for (auto& f : fields) {
    while (!f.empty() && (f.front() == ' ' || f.front() == '\t')) f.remove_prefix(1);
    while (!f.empty() && (f.back() == ' ' || f.back() == '\t')) f.remove_suffix(1);
  }
  return fields;
}

std::optional<double> parse_real(std::string_view s) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

std::optional<int> parse_int(std::string_view s) {
  int v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

std::string format_real(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

/// Calls fn(line_number, fields) for every data line.
template <typename Fn>
void for_each_record(std::istream& in, Fn&& fn) {
  std::string line;
  std::size_t number = 0;
  bool first_data = true;
  while (std::getline(in, line)) {
    ++number;
    std::string_view view(line);
    if (!view.empty() && view.back() == '\r') view.remove_suffix(1);
    if (view.empty() || view.front() == '#') continue;
    auto fields = split_fields(view);
    if (first_data && fields[0] == "participant_id") {
      first_data = false;
      continue;
    }
    first_data = false;
    fn(number, fields);
  }
}

Instant require_time(std::size_t line, std::string_view s) {
  auto t = parse_rfc3339(s);
  if (!t) throw ParseError(line, "malformed timestamp '" + std::string(s) + "'");
  return *t;
}

void require_id(std::size_t line, std::string_view s) {
  if (s.empty()) throw ParseError(line, "empty participant_id");
}

}  // namespace

std::string_view kind_name(SensingKind kind) {
  switch (kind) {
    case SensingKind::gps: return "gps";
    case SensingKind::screen_unlock: return "screen_unlock";
    case SensingKind::screen_lock: return "screen_lock";
    case SensingKind::audio_amplitude: return "audio_amplitude";
    case SensingKind::conversation: return "conversation";
  }
  return "?";
}

std::optional<SensingKind> kind_from_name(std::string_view name) {
  for (auto k : {SensingKind::gps, SensingKind::screen_unlock, SensingKind::screen_lock,
                 SensingKind::audio_amplitude, SensingKind::conversation})
    if (kind_name(k) == name) return k;
  return std::nullopt;
}

std::string_view question_name(Question q) {
  switch (q) {
    case Question::negativeness: return "negativeness";
    case Question::loudness: return "loudness";
    case Question::control: return "control";
    case Question::power: return "power";
  }
  return "?";
}

std::optional<Question> question_from_name(std::string_view name) {
  for (auto q : kQuestions)
    if (question_name(q) == name) return q;
  return std::nullopt;
}

std::string_view ordinal_label(Question q, int ordinal) {
  const bool alt = q == Question::control || q == Question::power;
  switch (ordinal) {
    case 0: return "Not at all";
    case 1: return "A little";
    case 2: return alt ? "Moderate" : "Moderately";
    case 3: return alt ? "A lot" : "Extremely";
  }
  throw InvalidArgument("ordinal out of range: " + std::to_string(ordinal));
}

const Participant* Cohort::find_participant(std::string_view id) const {
  for (const auto& p : participants)
    if (p.id == id) return &p;
  return nullptr;
}

void validate(const Cohort& cohort) {
  std::set<std::string_view> ids;
  for (const auto& p : cohort.participants) {
    if (p.id.empty()) throw InvalidArgument("participant with empty id");
    if (!ids.insert(p.id).second) throw InvalidArgument("duplicate participant id '" + p.id + "'");
    if (p.timezone_offset_minutes < -720 || p.timezone_offset_minutes > 840)
      throw InvalidArgument("participant '" + p.id + "': timezone offset out of range");
  }
  auto resolve = [&](const std::string& id, const std::string& what) {
    if (!ids.count(id)) throw InvalidArgument(what + " references unknown participant '" + id + "'");
  };
  for (std::size_t i = 0; i < cohort.events.size(); ++i) {
    const auto& e = cohort.events[i];
    const auto where = "sensing event #" + std::to_string(i) + " (" + format_rfc3339(e.timestamp) + ")";
    resolve(e.participant_id, where);
    if (e.kind == SensingKind::gps &&
        (std::abs(e.position.lat_deg) > 90.0 || std::abs(e.position.lon_deg) > 180.0))
      throw InvalidArgument(where + ": coordinate out of range");
    if (!(e.value >= 0.0) || !std::isfinite(e.value)) throw InvalidArgument(where + ": negative or non-finite value");
  }
  for (std::size_t i = 0; i < cohort.emas.size(); ++i) {
    const auto& r = cohort.emas[i];
    const auto where = "EMA #" + std::to_string(i) + " (" + format_rfc3339(r.timestamp) + ")";
    resolve(r.participant_id, where);
    if (r.hearing != r.answers.has_value())
      throw InvalidArgument(where + ": answers must be present exactly when hearing is true");
    if (r.answers)
      for (int o : r.answers->ordinals)
        if (o < 0 || o > 3) throw InvalidArgument(where + ": ordinal out of range");
  }
  std::set<std::pair<std::string_view, std::int64_t>> seen;
  for (std::size_t i = 0; i < cohort.diaries.size(); ++i) {
    const auto& d = cohort.diaries[i];
    const auto where = "diary #" + std::to_string(i) + " (" + format_rfc3339(d.ema_timestamp) + ")";
    resolve(d.participant_id, where);
    if (!seen.insert({d.participant_id, to_unix(d.ema_timestamp)}).second)
      throw InvalidArgument(where + ": more than one diary for participant '" + d.participant_id + "' at this EMA");
    for (const auto& s : d.sentences)
      for (const auto& t : s)
        if (!t.layers || t.layers->rows() != kEncoderLayers || t.layers->cols() != kEncoderWidth)
          throw InvalidArgument(where + ": token '" + t.text + "' is not 12x768");
  }
  for (std::size_t i = 0; i < cohort.audio.size(); ++i)
    resolve(cohort.audio[i].participant_id, "diary audio #" + std::to_string(i));
}

// --- sensing ---------------------------------------------------------------

std::vector<SensingEvent> parse_sensing_log(std::istream& in) {
  std::vector<SensingEvent> events;
  for_each_record(in, [&](std::size_t line, const std::vector<std::string_view>& f) {
    if (f.size() < 3) throw ParseError(line, "expected at least 3 fields, got " + std::to_string(f.size()));
    SensingEvent e;
    require_id(line, f[0]);
    e.participant_id = std::string(f[0]);
    e.timestamp = require_time(line, f[1]);
    const auto kind = kind_from_name(f[2]);
    if (!kind) throw ParseError(line, "unknown kind '" + std::string(f[2]) + "'");
    e.kind = *kind;
    auto expect_fields = [&](std::size_t n) {
      if (f.size() != n)
        throw ParseError(line, std::string(f[2]) + " expects " + std::to_string(n - 3) + " payload field(s)");
    };
    switch (e.kind) {
      case SensingKind::gps: {
        expect_fields(5);
        const auto lat = parse_real(f[3]);
        const auto lon = parse_real(f[4]);
        if (!lat || !lon) throw ParseError(line, "malformed coordinate");
        if (*lat < -90.0 || *lat > 90.0)
          throw ParseError(line, "latitude " + std::string(f[3]) + " outside [-90, 90]");
        if (*lon < -180.0 || *lon > 180.0)
          throw ParseError(line, "longitude " + std::string(f[4]) + " outside [-180, 180]");
        e.position = {*lat, *lon};
        break;
      }
      case SensingKind::screen_unlock:
      case SensingKind::screen_lock:
        expect_fields(3);
        break;
      case SensingKind::audio_amplitude:
      case SensingKind::conversation: {
        expect_fields(4);
        const auto v = parse_real(f[3]);
        if (!v) throw ParseError(line, "malformed payload '" + std::string(f[3]) + "'");
        if (*v < 0.0) throw ParseError(line, std::string(f[2]) + " payload must be >= 0");
        e.value = *v;
        break;
      }
    }
    events.push_back(std::move(e));
  });
  return events;
}

void write_sensing_log(std::ostream& out, const std::vector<SensingEvent>& events) {
  out << "participant_id,timestamp,kind,payload\n";
  for (const auto& e : events) {
    out << e.participant_id << ',' << format_rfc3339(e.timestamp) << ',' << kind_name(e.kind);
    switch (e.kind) {
      case SensingKind::gps:
        out << ',' << format_real(e.position.lat_deg) << ',' << format_real(e.position.lon_deg);
        break;
      case SensingKind::audio_amplitude:
      case SensingKind::conversation:
        out << ',' << format_real(e.value);
        break;
      default:
        break;
    }
    out << '\n';
  }
}

// --- EMA -------------------------------------------------------------------

std::vector<EmaResponse> parse_ema_log(std::istream& in) {
  std::vector<EmaResponse> out;
  for_each_record(in, [&](std::size_t line, const std::vector<std::string_view>& f) {
    if (f.size() != 7 && f.size() != 8)
      throw ParseError(line, "expected 7 or 8 fields, got " + std::to_string(f.size()));
    EmaResponse r;
    require_id(line, f[0]);
    r.participant_id = std::string(f[0]);
    r.timestamp = require_time(line, f[1]);
    if (f[2] == "1") {
      r.hearing = true;
    } else if (f[2] == "0") {
      r.hearing = false;
    } else {
      throw ParseError(line, "hearing must be 0 or 1, got '" + std::string(f[2]) + "'");
    }
    const bool any_answer = !f[3].empty() || !f[4].empty() || !f[5].empty() || !f[6].empty();
    if (!r.hearing) {
      if (any_answer) throw ParseError(line, "answers present although hearing = 0");
    } else {
      ValenceAnswers a;
      for (std::size_t q = 0; q < 4; ++q) {
        const auto name = question_name(kQuestions[q]);
        if (f[3 + q].empty()) throw ParseError(line, std::string("missing answer for ") + std::string(name));
        const auto v = parse_int(f[3 + q]);
        if (!v) throw ParseError(line, "malformed " + std::string(name) + " '" + std::string(f[3 + q]) + "'");
        if (*v < 0 || *v > 3)
          throw ParseError(line, std::string(name) + " = " + std::to_string(*v) + " outside 0..3");
        a.ordinals[q] = *v;
      }
      r.answers = a;
    }
    if (f.size() == 8 && !f[7].empty()) {
      if (f[7] == "self") {
        r.self_initiated = true;
      } else if (f[7] != "prompted") {
        throw ParseError(line, "unknown source '" + std::string(f[7]) + "'");
      }
    }
    out.push_back(std::move(r));
  });
  return out;
}

void write_ema_log(std::ostream& out, const std::vector<EmaResponse>& emas) {
  out << "participant_id,timestamp,hearing,negativeness,loudness,control,power,source\n";
  for (const auto& r : emas) {
    out << r.participant_id << ',' << format_rfc3339(r.timestamp) << ',' << (r.hearing ? 1 : 0);
    for (std::size_t q = 0; q < 4; ++q) {
      out << ',';
      if (r.answers) out << r.answers->ordinals[q];
    }
    out << ',' << (r.self_initiated ? "self" : "prompted") << '\n';
  }
}

// --- participants ----------------------------------------------------------

std::vector<Participant> parse_participants(std::istream& in) {
  std::vector<Participant> out;
  for_each_record(in, [&](std::size_t line, const std::vector<std::string_view>& f) {
    if (f.size() != 2) throw ParseError(line, "expected 2 fields");
    require_id(line, f[0]);
    const auto tz = parse_int(f[1]);
    if (!tz) throw ParseError(line, "malformed timezone offset '" + std::string(f[1]) + "'");
    if (*tz < -720 || *tz > 840) throw ParseError(line, "timezone offset outside [-720, 840]");
    out.push_back({std::string(f[0]), *tz});
  });
  return out;
}

void write_participants(std::ostream& out, const std::vector<Participant>& participants) {
  out << "participant_id,timezone_offset_minutes\n";
  for (const auto& p : participants) out << p.id << ',' << p.timezone_offset_minutes << '\n';
}

// --- directories -----------------------------------------------------------

namespace {

std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + p.string());
  return out;
}

std::ifstream open_in(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open " + p.string());
  return in;
}

template <typename Parse>
auto parse_file(const std::filesystem::path& p, Parse&& parse) {
  auto in = open_in(p);
  try {
    return parse(in);
  } catch (const ParseError& e) {
    throw ParseError(e.line(), p.filename().string() + ": " + e.cause());
  }
}

}  // namespace

void save_cohort(const std::filesystem::path& dir, const Cohort& cohort) {
  std::filesystem::create_directories(dir);
  {
    auto out = open_out(dir / CohortFiles::participants);
    write_participants(out, cohort.participants);
  }
  {
    auto out = open_out(dir / CohortFiles::sensing);
    write_sensing_log(out, cohort.events);
    if (!out) throw IoError("failed writing sensing log");
  }
  {
    auto out = open_out(dir / CohortFiles::ema);
    write_ema_log(out, cohort.emas);
  }
  save_diaries(dir / CohortFiles::diaries, cohort.diaries, cohort.audio);
}

Cohort load_cohort(const std::filesystem::path& dir) {
  Cohort c;
  c.participants = parse_file(dir / CohortFiles::participants, [](std::istream& in) { return parse_participants(in); });
  c.events = parse_file(dir / CohortFiles::sensing, [](std::istream& in) { return parse_sensing_log(in); });
  c.emas = parse_file(dir / CohortFiles::ema, [](std::istream& in) { return parse_ema_log(in); });
  load_diaries(dir / CohortFiles::diaries, c.diaries, c.audio);
  validate(c);
  return c;
}

std::uint64_t cohort_digest(const Cohort& cohort) {
  std::ostringstream os;
  write_participants(os, cohort.participants);
  write_sensing_log(os, cohort.events);
  write_ema_log(os, cohort.emas);
  std::uint64_t h = fnv1a(os.str());
  for (const auto& d : cohort.diaries) {
    h = fnv1a(d.participant_id, h);
    h = mix64(h ^ static_cast<std::uint64_t>(to_unix(d.ema_timestamp)));
    for (const auto& s : d.sentences) {
      for (const auto& t : s) {
        h = fnv1a(t.text, h);
        const auto& m = *t.layers;
        for (Eigen::Index i = 0; i < m.size(); i += 97) {
          const float v = static_cast<float>(m.data()[i]);
          std::uint32_t bits;
          std::memcpy(&bits, &v, sizeof bits);
          h = mix64(h ^ bits);
        }
      }
      h = mix64(h ^ 0x5e);
    }
  }
  for (const auto& a : cohort.audio) {
    h = fnv1a(a.participant_id, h);
    h = mix64(h ^ static_cast<std::uint64_t>(to_unix(a.ema_timestamp)));
    if (a.recipe) {
      h = fnv1a(format_real(a.recipe->seconds) + format_real(a.recipe->f0_hz) + format_real(a.recipe->amplitude), h);
      h = mix64(h ^ a.recipe->seed);
    }
    for (float v : a.samples) {
      std::uint32_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      h = mix64(h ^ bits);
    }
  }
  return h;
}

}  // namespace avh::cohort
