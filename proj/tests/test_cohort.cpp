#include <doctest.h>

#include <algorithm>
#include <map>
#include <sstream>

#include "avh/cohort.hpp"
#include "avh/error.hpp"

using namespace avh;
using namespace avh::cohort;

namespace {

std::vector<SensingEvent> sensing(const std::string& text) {
  std::istringstream in(text);
  return parse_sensing_log(in);
}

std::vector<EmaResponse> emas(const std::string& text) {
  std::istringstream in(text);
  return parse_ema_log(in);
}

template <typename F>
ParseError parse_failure(F&& f) {
  try {
    f();
  } catch (const ParseError& e) {
    return e;
  }
  FAIL("expected a parse error");
  return ParseError(0, "");
}

const Cohort& reference_cohort() {
  static const Cohort c = generate_synthetic_cohort({.n_participants = 40, .n_days = 30, .seed = 7});
  return c;
}

}  // namespace

TEST_SUITE("cohort") {

TEST_CASE("empty sensing stream parses to nothing") {
  CHECK(sensing("").empty());
  CHECK(emas("").empty());
}

TEST_CASE("latitude out of range names the line") {
  const auto e = parse_failure([] {
    sensing("P001,2024-03-04T10:00:00Z,gps,45.0,7.0\nP001,2024-03-04T10:10:00Z,gps,91.0,7.0\n");
  });
  CHECK(e.line() == 2);
  CHECK(e.cause().find("latitude") != std::string::npos);
  CHECK(e.cause().find("[-90, 90]") != std::string::npos);
}

TEST_CASE("other sensing errors carry their cause") {
  CHECK(parse_failure([] { sensing("P001,2024-03-04T10:00:00Z,teleport\n"); }).cause().find("unknown kind") !=
        std::string::npos);
  CHECK(parse_failure([] { sensing("P001,yesterday,screen_unlock\n"); }).cause().find("timestamp") != std::string::npos);
  CHECK(parse_failure([] { sensing("P001,2024-03-04T10:00:00Z,gps,1.0,181.0\n"); }).cause().find("longitude") !=
        std::string::npos);
  CHECK(parse_failure([] { sensing("P001,2024-03-04T10:00:00Z,conversation,-3\n"); }).line() == 1);
}

TEST_CASE("gps record round-trips") {
  const auto first = sensing("P007,2024-03-04T10:00:00Z,gps,40.7128,-74.006\n");
  REQUIRE(first.size() == 1);
  CHECK(first[0].kind == SensingKind::gps);
  CHECK(first[0].position.lat_deg == doctest::Approx(40.7128));
  std::ostringstream out;
  write_sensing_log(out, first);
  CHECK(sensing(out.str()) == first);
}

TEST_CASE("every sensing kind round-trips") {
  const std::string text =
      "P1,2024-03-04T10:00:00Z,screen_unlock\n"
      "P1,2024-03-04T10:05:30Z,screen_lock\n"
      "P1,2024-03-04T10:06:00Z,audio_amplitude,812.5\n"
      "P1,2024-03-04T10:07:00Z,conversation,95\n";
  const auto events = sensing(text);
  REQUIRE(events.size() == 4);
  std::ostringstream out;
  write_sensing_log(out, events);
  CHECK(sensing(out.str()) == events);
}

TEST_CASE("hearing row maps all four ordinals") {
  const auto rows = emas("P001,2024-03-04T09:30:00Z,1,3,3,1,3\n");
  REQUIRE(rows.size() == 1);
  REQUIRE(rows[0].answers);
  CHECK(rows[0].answers->ordinals == std::array<int, 4>{3, 3, 1, 3});
  CHECK((*rows[0].answers)[Question::control] == 1);
}

TEST_CASE("answers without hearing are rejected") {
  const auto e = parse_failure([] { emas("P001,2024-03-04T09:30:00Z,0,1,2,0,1\n"); });
  CHECK(e.line() == 1);
  const auto ok = emas("P001,2024-03-04T09:30:00Z,0,,,,\n");
  REQUIRE(ok.size() == 1);
  CHECK_FALSE(ok[0].hearing);
  CHECK_FALSE(ok[0].answers);
}

TEST_CASE("ordinal out of range is rejected") {
  const auto e = parse_failure([] { emas("P001,2024-03-04T09:30:00Z,1,2,5,0,1\n"); });
  CHECK(e.cause().find("loudness") != std::string::npos);
}

TEST_CASE("self-initiated flag round-trips") {
  const auto rows = emas("P001,2024-03-04T09:30:00Z,1,0,1,2,3,self\nP001,2024-03-04T13:00:00Z,0,,,,,prompted\n");
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].self_initiated);
  CHECK_FALSE(rows[1].self_initiated);
  std::ostringstream out;
  write_ema_log(out, rows);
  CHECK(emas(out.str()) == rows);
}

TEST_CASE("ordinal labels share one scale") {
  CHECK(ordinal_label(Question::negativeness, 0) == "Not at all");
  CHECK(ordinal_label(Question::control, 2) == "Moderate");
  CHECK(ordinal_label(Question::power, 3) == "A lot");
  CHECK(ordinal_label(Question::loudness, 3) == "Extremely");
}

TEST_CASE("validation reports the dangling record") {
  Cohort c;
  c.participants = {{"P001", 0}};
  c.emas.push_back({"P404", from_unix(1'700'000'000), false, std::nullopt, false});
  try {
    validate(c);
    FAIL("expected rejection");
  } catch (const InvalidArgument& e) {
    CHECK(std::string(e.what()).find("P404") != std::string::npos);
  }
  c.emas[0].participant_id = "P001";
  CHECK_NOTHROW(validate(c));
  c.participants.push_back({"P002", 900});
  CHECK_THROWS_AS(validate(c), InvalidArgument);
}

TEST_CASE("synthetic generation is seeded") {
  const SynthConfig cfg{.n_participants = 3, .n_days = 4, .seed = 11};
  const auto a = generate_synthetic_cohort(cfg);
  const auto b = generate_synthetic_cohort(cfg);
  CHECK(cohort_digest(a) == cohort_digest(b));
  auto other = cfg;
  other.seed = 12;
  CHECK(cohort_digest(generate_synthetic_cohort(other)) != cohort_digest(a));
  CHECK_NOTHROW(validate(a));
}

TEST_CASE("every EMA falls inside a prompt window") {
  const auto& c = reference_cohort();
  REQUIRE(!c.emas.empty());
  for (const auto& e : c.emas) {
    const auto* p = c.find_participant(e.participant_id);
    REQUIRE(p);
    const auto local = to_unix(e.timestamp) + 60 * p->timezone_offset_minutes;
    const auto minute_of_day = ((local % 86400) + 86400) % 86400 / 60;
    const bool inside = std::any_of(kPromptWindows.begin(), kPromptWindows.end(), [&](const auto& w) {
      return minute_of_day >= w[0] * 60 && minute_of_day < w[1] * 60;
    });
    CHECK(inside);
  }
}

TEST_CASE("majority prevalence per question is moderate") {
  const auto& c = reference_cohort();
  for (auto q : kQuestions) {
    std::array<int, 4> counts{};
    int n = 0;
    for (const auto& e : c.emas)
      if (e.answers) {
        ++counts[static_cast<std::size_t>((*e.answers)[q])];
        ++n;
      }
    REQUIRE(n > 0);
    const double majority = static_cast<double>(*std::max_element(counts.begin(), counts.end())) / n;
    CAPTURE(question_name(q));
    CHECK(majority > 0.25);
    CHECK(majority < 0.6);
  }
}

TEST_CASE("answers present exactly when hearing and each diary has a stack") {
  const auto& c = reference_cohort();
  std::map<std::pair<std::string, std::int64_t>, int> diaries;
  for (const auto& d : c.diaries) ++diaries[{d.participant_id, to_unix(d.ema_timestamp)}];
  for (const auto& e : c.emas) {
    CHECK(e.hearing == e.answers.has_value());
    if (e.hearing) CHECK(diaries[{e.participant_id, to_unix(e.timestamp)}] == 1);
  }
}

TEST_CASE("cohort directory round-trips") {
  const auto c = generate_synthetic_cohort({.n_participants = 2, .n_days = 3, .seed = 5});
  const auto dir = std::filesystem::temp_directory_path() / "avh_cohort_roundtrip";
  std::filesystem::remove_all(dir);
  save_cohort(dir, c);
  const auto back = load_cohort(dir);
  CHECK(cohort_digest(back) == cohort_digest(c));
  CHECK(back.events == c.events);
  CHECK(back.emas == c.emas);
  REQUIRE(back.diaries.size() == c.diaries.size());
  for (std::size_t i = 0; i < c.diaries.size(); ++i) {
    REQUIRE(back.diaries[i].sentences.size() == c.diaries[i].sentences.size());
    for (std::size_t s = 0; s < c.diaries[i].sentences.size(); ++s)
      for (std::size_t t = 0; t < c.diaries[i].sentences[s].size(); ++t)
        CHECK(*back.diaries[i].sentences[s][t].layers == *c.diaries[i].sentences[s][t].layers);
  }
  std::filesystem::remove_all(dir);
}

}
