#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "avh/cohort.hpp"
#include "avh/embedder.hpp"
#include "avh/metrics.hpp"
#include "avh/mobility.hpp"
#include "avh/nn.hpp"
#include "avh/rocket.hpp"
#include "avh/spectrogram.hpp"
#include "avh/tensor_archive.hpp"

namespace avh::harness {

using cohort::Question;
using FloatMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic>;

inline constexpr int kAudioWidth = 128;
inline constexpr int kTextWidth = 768;
inline constexpr int kSensingWidth = mobility::kStreams * 128;
inline constexpr int kTransferWidth = 32;

/// Basis row for an ordinal in 0..3; throws InvalidArgument otherwise.
Eigen::RowVector4f one_hot(int ordinal);

/// One labeled EMA (a hearing response with answers).
struct Instance {
  std::string participant_id;
  Instant ema_timestamp;
  cohort::ValenceAnswers answers;
};

/// Hearing EMAs with answers, ordered by participant id then timestamp.
std::vector<Instance> labeled_instances(const cohort::Cohort& cohort);

enum class Split { train = 0, validation = 1, test = 2 };
std::string_view split_name(Split s);
std::optional<Split> split_from_name(std::string_view name);

/// Participants with fewer instances keep all of them in train.
inline constexpr std::size_t kMinSplitSize = 5;

/// Per participant, instances sorted by timestamp: the first floor(0.6 n) go to
/// train, the next floor(0.2 n) to validation, the rest to test.
struct SplitAssignment {
  std::vector<Split> of;  // indexed like the instance list
  std::map<std::string, std::array<std::vector<std::size_t>, 3>> per_participant;

  /// Instance indices of one split in ascending index order.
  std::vector<std::size_t> indices(Split s) const;
  /// Digest of (participant, timestamp, split) over all instances.
  std::uint64_t membership_hash(const std::vector<Instance>& instances) const;
};

/// Throws InvalidArgument when a participant has two instances with one timestamp.
SplitAssignment temporal_split(const std::vector<Instance>& instances);

// ---------------------------------------------------------------------------
// Featurization
// ---------------------------------------------------------------------------

enum class FeatureMode { audio_text, sensing_vggish, sensing_rocket, overall };
std::string_view mode_name(FeatureMode m);  // "audio-text", "sensing-vggish", ...
std::optional<FeatureMode> mode_from_name(std::string_view name);

struct FeatureConfig {
  std::uint64_t seed = 7;
  spectrogram::TransformConfig transform;  // its seed field is ignored; see sonify_seed
  spectrogram::LogMelConfig log_mel;
  embedder::EmbedderConfig embedder{.width_divisor = 8};
  mobility::MobilityConfig mobility;
  rocket::KernelConfig kernels;
  unsigned threads = 1;

  nlohmann::json to_json() const;
  static FeatureConfig from_json(const nlohmann::json& j);
  /// Digest of to_json() without the thread count.
  std::uint64_t digest() const;
};

/// Waveform seed of one sensing stream: derive_seed(seed, "sonify", fnv1a(id), unix time, stream).
std::uint64_t sonify_seed(std::uint64_t master, std::string_view participant_id, Instant ema, int stream);

/// Random-init embedder weights for a config: seed derive_seed(seed, "embedder").
embedder::EmbedderWeights<float> default_embedder(const FeatureConfig& cfg);

/// Feature blocks, one row per instance; a block not computed is empty.
struct FeatureSet {
  std::vector<Instance> instances;
  FloatMatrix audio;           // n x 128
  FloatMatrix text;            // n x 768
  FloatMatrix sensing_vggish;  // n x 896, stream-major
  FloatMatrix sensing_rocket;  // n x 896, stream-major
};

/// The 7 x 24 window preceding each instance.
std::vector<mobility::SensingWindow> sensing_windows(const cohort::Cohort& cohort, const std::vector<Instance>& instances,
                                                     const mobility::MobilityConfig& cfg, unsigned threads = 1);

/// 128-wide averaged embedding of a sonified 24-point series.
Eigen::VectorXf sonified_embedding(const Eigen::Ref<const Eigen::RowVectorXd>& series, std::uint64_t seed,
                                   const FeatureConfig& cfg, const embedder::EmbedderWeights<float>& weights);

/// 128-wide averaged embedding of a diary recording.
Eigen::VectorXf diary_embedding(const cohort::DiaryAudio& audio, const FeatureConfig& cfg,
                                const embedder::EmbedderWeights<float>& weights);

/// Computes the blocks a mode needs. `sensing_weights` defaults to `diary_weights`.
void featurize(const cohort::Cohort& cohort, FeatureMode mode, const FeatureConfig& cfg,
               const embedder::EmbedderWeights<float>& diary_weights, FeatureSet& out,
               const embedder::EmbedderWeights<float>* sensing_weights = nullptr);

/// Blocks required by a mode.
std::vector<std::string> required_blocks(FeatureMode mode);

/// audio_text = [audio | text] (896); sensing = 896; overall = [audio | text |
/// sensing_vggish] (1792). `sensing` picks the sensing block for overall.
FloatMatrix assemble_features(const FeatureSet& set, FeatureMode mode, FeatureMode sensing = FeatureMode::sensing_vggish);

/// Archive of the blocks present in `set`; metadata carries the cache key
/// (cohort digest, mode, config digest) and the instance list.
TensorArchive features_to_archive(const FeatureSet& set, std::uint64_t cohort_digest, FeatureMode mode,
                                  const FeatureConfig& cfg);
FeatureSet features_from_archive(const TensorArchive& archive);

// ---------------------------------------------------------------------------
// Models and evaluation
// ---------------------------------------------------------------------------

enum class ModelKind { audio_text, sensing, hybrid, overall };
enum class SensingSource { vggish, rocket };

std::string_view kind_name(ModelKind k);
std::optional<ModelKind> kind_from_name(std::string_view name);
std::string_view source_name(SensingSource s);

/// "audio_text", "sensing_vggish", "hybrid_rocket", ...
std::string model_name(ModelKind kind, SensingSource source);

/// Architecture of each model kind with `seed` for initialization.
nn::ModelSpec table_spec(ModelKind kind, std::uint64_t seed);
/// Batch size and epoch count of each model kind.
nn::TrainConfig table_train_config(ModelKind kind, std::uint64_t seed);

struct ExperimentConfig {
  std::uint64_t seed = 7;
  double learning_rate = 1e-3;
  std::optional<int> epochs;      // overrides every kind when set
  std::optional<int> batch_size;  // likewise
  std::vector<SensingSource> sources{SensingSource::vggish, SensingSource::rocket};
  std::vector<Question> questions{cohort::kQuestions.begin(), cohort::kQuestions.end()};
  unsigned threads = 1;

  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
  nn::TrainConfig train_config(ModelKind kind, std::string_view model, Question q) const;
  std::uint64_t init_seed(std::string_view model, Question q) const;
};

/// Features and one-hot targets of one split for one question.
nn::Dataset<float> make_dataset(const FloatMatrix& features, const std::vector<Instance>& instances,
                                const std::vector<std::size_t>& rows, Question q);

std::vector<int> ordinals(const std::vector<Instance>& instances, const std::vector<std::size_t>& rows, Question q);

struct Evaluation {
  metrics::F1Scores scores;
  metrics::Confusion top1_confusion = metrics::Confusion::Zero();
  std::size_t n = 0;
};

Evaluation evaluate(const nn::Model<float>& model, const FloatMatrix& features, const std::vector<int>& truth);

/// Constant predictor at the modal class (ties to the lower index); the second
/// most frequent class fills its top-2 slot.
Evaluation chance_baseline(const std::vector<int>& test_ordinals);

/// Eval-mode output of the first 32-wide layer of each parent, concatenated (n x 64).
FloatMatrix transfer_features(const nn::Model<float>& audio_text, const FloatMatrix& audio_text_features,
                              const nn::Model<float>& sensing, const FloatMatrix& sensing_features);

struct ModelRun {
  std::string model;
  Question question = Question::negativeness;
  nn::Checkpoint<float> checkpoint;
  std::vector<nn::EpochRecord> history;
  Evaluation test;
};

/// Trains one model on `features` (already assembled for its kind; 64-wide
/// transfer features for hybrid) and evaluates it on the test split.
ModelRun run_model(ModelKind kind, std::string_view model, Question q, const FloatMatrix& features,
                   const std::vector<Instance>& instances, const SplitAssignment& split, const ExperimentConfig& cfg);

/// Hybrid run; throws DependencyError unless both parent checkpoints are given.
ModelRun run_hybrid(SensingSource source, Question q, const nn::Model<float>* audio_text, const FloatMatrix& audio_text_features,
                    const nn::Model<float>* sensing, const FloatMatrix& sensing_features,
                    const std::vector<Instance>& instances, const SplitAssignment& split, const ExperimentConfig& cfg);

struct DependencyError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct ReportEntry {
  std::string model;
  Question question = Question::negativeness;
  Evaluation test;
  int best_epoch = 0;
  std::size_t n_train = 0;
  std::size_t n_validation = 0;
};

struct Report {
  nlohmann::json config;
  std::uint64_t seed = 0;
  std::uint64_t split_hash = 0;
  std::map<Question, Evaluation> chance;
  std::vector<ReportEntry> entries;
};

ReportEntry to_entry(const ModelRun& run, const SplitAssignment& split);

nlohmann::json to_json(const Evaluation& e);
/// {"config", "seed", "split_hash", "questions": {q: {"chance": ..., "models": {name: ...}}}}
nlohmann::json to_json(const Report& report);

/// Writes the report as indented JSON with sorted keys; throws IoError.
void emit_report(const Report& report, const std::filesystem::path& path);

/// Runs every model kind for every configured question and source, hybrid after
/// its parents, and collects the report.
Report run_experiment(const FeatureSet& features, const ExperimentConfig& cfg,
                      std::map<std::string, ModelRun>* runs = nullptr);

}  // namespace avh::harness
