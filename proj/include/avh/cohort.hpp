#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "avh/time.hpp"

namespace avh::cohort {

struct Participant {
  std::string id;
  int timezone_offset_minutes = 0;  // local = UTC + offset, in [-720, 840]
};

enum class SensingKind { gps, screen_unlock, screen_lock, audio_amplitude, conversation };

std::string_view kind_name(SensingKind kind);
std::optional<SensingKind> kind_from_name(std::string_view name);

struct LatLon {
  double lat_deg = 0.0;
  double lon_deg = 0.0;

  bool operator==(const LatLon&) const = default;
};

/// One sensing log record. `position` is meaningful for gps only; `value` is the
/// amplitude (audio_amplitude) or the duration in seconds (conversation).
struct SensingEvent {
  std::string participant_id;
  Instant timestamp;
  SensingKind kind = SensingKind::gps;
  LatLon position;
  double value = 0.0;

  bool operator==(const SensingEvent&) const = default;
};

enum class Question { negativeness = 0, loudness = 1, control = 2, power = 3 };
inline constexpr std::array<Question, 4> kQuestions = {Question::negativeness, Question::loudness,
                                                       Question::control, Question::power};
inline constexpr int kNumClasses = 4;

std::string_view question_name(Question q);
std::optional<Question> question_from_name(std::string_view name);

/// Ordinal answers, 0 = "Not at all", 1 = "A little", 2 = "Moderately"/"Moderate",
/// 3 = "Extremely"/"A lot"; shared by all four questions.
struct ValenceAnswers {
  std::array<int, 4> ordinals{};

  int operator[](Question q) const { return ordinals[static_cast<std::size_t>(q)]; }
  bool operator==(const ValenceAnswers&) const = default;
};

std::string_view ordinal_label(Question q, int ordinal);

struct EmaResponse {
  std::string participant_id;
  Instant timestamp;
  bool hearing = false;
  std::optional<ValenceAnswers> answers;  // present iff hearing
  bool self_initiated = false;

  bool operator==(const EmaResponse&) const = default;
};

inline constexpr int kEncoderLayers = 12;
inline constexpr int kEncoderWidth = 768;

/// kEncoderLayers x kEncoderWidth encoder outputs for one token.
using LayerStack = Eigen::MatrixXd;

struct DiaryToken {
  std::string text;
  std::shared_ptr<const LayerStack> layers;
};

using Sentence = std::vector<DiaryToken>;

struct DiaryTokenStack {
  std::string participant_id;
  Instant ema_timestamp;
  std::vector<Sentence> sentences;
};

/// Recipe for a synthetic diary recording: a harmonic voice-like tone plus noise,
/// rendered at 16 kHz.
struct VoiceRecipe {
  double seconds = 2.0;
  double f0_hz = 140.0;
  double amplitude = 0.1;
  std::uint64_t seed = 0;

  bool operator==(const VoiceRecipe&) const = default;
};

/// Renders a recipe at 16 kHz: six harmonics of f0 with 1/k amplitudes and a
/// slow vibrato, plus white noise at 5% of the amplitude.
std::vector<float> render_voice(const VoiceRecipe& recipe);

/// Audio attached to a diary: either decoded samples or a synthesis recipe.
struct DiaryAudio {
  std::string participant_id;
  Instant ema_timestamp;
  std::optional<VoiceRecipe> recipe;
  std::vector<float> samples;
  int sample_rate_hz = 16000;
};

struct Cohort {
  std::vector<Participant> participants;
  std::vector<SensingEvent> events;
  std::vector<EmaResponse> emas;
  std::vector<DiaryTokenStack> diaries;
  std::vector<DiaryAudio> audio;

  const Participant* find_participant(std::string_view id) const;
};

/// Throws InvalidArgument naming the offending record (dangling participant ids,
/// duplicate participants, duplicate diaries, invariant violations).
void validate(const Cohort& cohort);

// ---------------------------------------------------------------------------
// Line-delimited logs
//
// Sensing log, one record per line:
//   participant_id,timestamp,kind[,payload...]
//     gps              -> lat,lon (degrees)
//     screen_unlock    -> (none)
//     screen_lock      -> (none)
//     audio_amplitude  -> amplitude (>= 0)
//     conversation     -> duration_seconds (>= 0)
// EMA log:
//   participant_id,timestamp,hearing,negativeness,loudness,control,power[,source]
//   with empty answer fields when hearing = 0; source is "prompted" or "self".
// Participants:
//   participant_id,timezone_offset_minutes
// Blank lines, lines starting with '#', and a header line whose first field is
// "participant_id" are skipped.
// ---------------------------------------------------------------------------

std::vector<SensingEvent> parse_sensing_log(std::istream& in);
void write_sensing_log(std::ostream& out, const std::vector<SensingEvent>& events);

std::vector<EmaResponse> parse_ema_log(std::istream& in);
void write_ema_log(std::ostream& out, const std::vector<EmaResponse>& emas);

std::vector<Participant> parse_participants(std::istream& in);
void write_participants(std::ostream& out, const std::vector<Participant>& participants);

/// Diary token stacks (and their audio) as a tensor archive; see diary_io.cpp.
void save_diaries(const std::filesystem::path& manifest, const std::vector<DiaryTokenStack>& diaries,
                  const std::vector<DiaryAudio>& audio);
void load_diaries(const std::filesystem::path& manifest, std::vector<DiaryTokenStack>& diaries,
                  std::vector<DiaryAudio>& audio);

/// File names inside a cohort directory.
struct CohortFiles {
  static constexpr const char* participants = "participants.csv";
  static constexpr const char* sensing = "sensing.csv";
  static constexpr const char* ema = "ema.csv";
  static constexpr const char* diaries = "diaries.json";
};

void save_cohort(const std::filesystem::path& dir, const Cohort& cohort);
Cohort load_cohort(const std::filesystem::path& dir);

/// Stable digest of the serialized cohort.
std::uint64_t cohort_digest(const Cohort& cohort);

// ---------------------------------------------------------------------------
// Synthetic cohorts
// ---------------------------------------------------------------------------

struct SynthConfig {
  int n_participants = 40;
  int n_days = 30;
  std::uint64_t seed = 7;
  int gps_interval_minutes = 10;
  int amplitude_interval_minutes = 1;
  double compliance = 0.6;          // probability a prompt window is answered
  std::string start_date = "2024-03-04";
};

/// Prompt windows in participant-local hours: [9,11), [12,14), [15,17), [18,20).
inline constexpr std::array<std::array<int, 2>, 4> kPromptWindows = {{{9, 11}, {12, 14}, {15, 17}, {18, 20}}};

/// Seeded synthetic cohort with planted signal. Each participant has a hidden
/// trait and a daily restlessness process that drives phone use, conversations,
/// ambient amplitude and evening outings. Every hearing EMA carries a diary whose
/// tokens lean toward an intense or calm vocabulary and whose voice pitch follows
/// the trait. Ordinals are quantized from a noisy mix of the trait, the diary
/// latents and the activity observed in the preceding 24 h.
Cohort generate_synthetic_cohort(const SynthConfig& config);

}  // namespace avh::cohort
