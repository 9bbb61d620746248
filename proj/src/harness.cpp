#include "avh/harness.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <tuple>

#include "avh/error.hpp"
#include "avh/parallel.hpp"
#include "avh/seed.hpp"
#include "avh/text.hpp"

namespace avh::harness {

Eigen::RowVector4f one_hot(int ordinal) {
  if (ordinal < 0 || ordinal >= cohort::kNumClasses)
    throw InvalidArgument("one_hot: ordinal " + std::to_string(ordinal) + " outside 0..3");
  Eigen::RowVector4f v = Eigen::RowVector4f::Zero();
  v[ordinal] = 1.0f;
  return v;
}

std::vector<Instance> labeled_instances(const cohort::Cohort& cohort) {
  std::vector<Instance> out;
  for (const auto& e : cohort.emas)
    if (e.hearing && e.answers) out.push_back({e.participant_id, e.timestamp, *e.answers});
  std::stable_sort(out.begin(), out.end(), [](const Instance& a, const Instance& b) {
    return std::tie(a.participant_id, a.ema_timestamp) < std::tie(b.participant_id, b.ema_timestamp);
  });
  return out;
}

std::string_view split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::validation: return "validation";
    case Split::test: return "test";
  }
  return "train";
}

std::optional<Split> split_from_name(std::string_view name) {
  for (auto s : {Split::train, Split::validation, Split::test})
    if (split_name(s) == name) return s;
  return std::nullopt;
}

std::vector<std::size_t> SplitAssignment::indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < of.size(); ++i)
    if (of[i] == s) out.push_back(i);
  return out;
}

std::uint64_t SplitAssignment::membership_hash(const std::vector<Instance>& instances) const {
  std::vector<std::tuple<std::string, std::int64_t, int>> rows;
  for (std::size_t i = 0; i < instances.size(); ++i)
    rows.emplace_back(instances[i].participant_id, to_unix(instances[i].ema_timestamp), static_cast<int>(of[i]));
  std::sort(rows.begin(), rows.end());
  std::uint64_t h = fnv1a("split");
  for (const auto& [id, t, s] : rows) {
    h = mix64(h ^ fnv1a(id));
    h = mix64(h ^ static_cast<std::uint64_t>(t));
    h = mix64(h ^ static_cast<std::uint64_t>(s));
  }
  return h;
}

SplitAssignment temporal_split(const std::vector<Instance>& instances) {
  SplitAssignment a;
  a.of.assign(instances.size(), Split::train);
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < instances.size(); ++i) groups[instances[i].participant_id].push_back(i);
  for (auto& [id, rows] : groups) {
    std::sort(rows.begin(), rows.end(), [&](std::size_t x, std::size_t y) {
      return instances[x].ema_timestamp < instances[y].ema_timestamp;
    });
    for (std::size_t k = 1; k < rows.size(); ++k)
      if (instances[rows[k]].ema_timestamp == instances[rows[k - 1]].ema_timestamp)
        throw InvalidArgument("temporal_split: participant " + id + " has two instances at " +
                              format_rfc3339(instances[rows[k]].ema_timestamp));
    const std::size_t n = rows.size();
    const std::size_t n_train = n < kMinSplitSize ? n : n * 6 / 10;
    const std::size_t n_val = n < kMinSplitSize ? 0 : n * 2 / 10;
    auto& lists = a.per_participant[id];
    for (std::size_t k = 0; k < n; ++k) {
      const Split s = k < n_train ? Split::train : k < n_train + n_val ? Split::validation : Split::test;
      a.of[rows[k]] = s;
      lists[static_cast<std::size_t>(s)].push_back(rows[k]);
    }
  }
  return a;
}

// ---------------------------------------------------------------------------
// Featurization
// ---------------------------------------------------------------------------

std::string_view mode_name(FeatureMode m) {
  switch (m) {
    case FeatureMode::audio_text: return "audio-text";
    case FeatureMode::sensing_vggish: return "sensing-vggish";
    case FeatureMode::sensing_rocket: return "sensing-rocket";
    case FeatureMode::overall: return "overall";
  }
  return "overall";
}

std::optional<FeatureMode> mode_from_name(std::string_view name) {
  for (auto m : {FeatureMode::audio_text, FeatureMode::sensing_vggish, FeatureMode::sensing_rocket, FeatureMode::overall})
    if (mode_name(m) == name) return m;
  return std::nullopt;
}

nlohmann::json FeatureConfig::to_json() const {
  return {{"seed", seed},
          {"transform",
           {{"epsilon", transform.epsilon},
            {"sample_rate_hz", transform.sample_rate_hz},
            {"sigma2_floor", transform.sigma2_floor}}},
          {"log_mel",
           {{"window_seconds", log_mel.window_seconds},
            {"hop_seconds", log_mel.hop_seconds},
            {"mel_bands", log_mel.mel_bands},
            {"lower_edge_hz", log_mel.lower_edge_hz},
            {"upper_edge_hz", log_mel.upper_edge_hz},
            {"log_offset", log_mel.log_offset}}},
          {"embedder",
           {{"conv_channels", embedder.conv_channels},
            {"fc_sizes", embedder.fc_sizes},
            {"width_divisor", embedder.width_divisor}}},
          {"mobility",
           {{"eps_m", mobility.eps_m},
            {"min_samples", mobility.min_samples},
            {"min_dwell_minutes", mobility.min_dwell_minutes},
            {"places_per_window", mobility.places_per_window}}},
          {"kernels",
           {{"n_kernels", kernels.n_kernels}, {"lengths", kernels.lengths}, {"per_stream", kernels.per_stream}}},
          {"threads", threads}};
}

FeatureConfig FeatureConfig::from_json(const nlohmann::json& j) {
  FeatureConfig c;
  try {
    c.seed = j.value("seed", c.seed);
    if (j.contains("transform")) {
      const auto& t = j["transform"];
      c.transform.epsilon = t.value("epsilon", c.transform.epsilon);
      c.transform.sample_rate_hz = t.value("sample_rate_hz", c.transform.sample_rate_hz);
      c.transform.sigma2_floor = t.value("sigma2_floor", c.transform.sigma2_floor);
    }
    if (j.contains("log_mel")) {
      const auto& l = j["log_mel"];
      c.log_mel.window_seconds = l.value("window_seconds", c.log_mel.window_seconds);
      c.log_mel.hop_seconds = l.value("hop_seconds", c.log_mel.hop_seconds);
      c.log_mel.mel_bands = l.value("mel_bands", c.log_mel.mel_bands);
      c.log_mel.lower_edge_hz = l.value("lower_edge_hz", c.log_mel.lower_edge_hz);
      c.log_mel.upper_edge_hz = l.value("upper_edge_hz", c.log_mel.upper_edge_hz);
      c.log_mel.log_offset = l.value("log_offset", c.log_mel.log_offset);
    }
    if (j.contains("embedder")) {
      const auto& e = j["embedder"];
      c.embedder.conv_channels = e.value("conv_channels", c.embedder.conv_channels);
      c.embedder.fc_sizes = e.value("fc_sizes", c.embedder.fc_sizes);
      c.embedder.width_divisor = e.value("width_divisor", c.embedder.width_divisor);
    }
    if (j.contains("mobility")) {
      const auto& m = j["mobility"];
      c.mobility.eps_m = m.value("eps_m", c.mobility.eps_m);
      c.mobility.min_samples = m.value("min_samples", c.mobility.min_samples);
      c.mobility.min_dwell_minutes = m.value("min_dwell_minutes", c.mobility.min_dwell_minutes);
      c.mobility.places_per_window = m.value("places_per_window", c.mobility.places_per_window);
    }
    if (j.contains("kernels")) {
      const auto& k = j["kernels"];
      c.kernels.n_kernels = k.value("n_kernels", c.kernels.n_kernels);
      c.kernels.lengths = k.value("lengths", c.kernels.lengths);
      c.kernels.per_stream = k.value("per_stream", c.kernels.per_stream);
    }
    c.threads = j.value("threads", c.threads);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("malformed feature config: ") + e.what());
  }
  c.embedder.validate();
  return c;
}

std::uint64_t FeatureConfig::digest() const {
  auto j = to_json();
  j.erase("threads");
  return fnv1a(j.dump());
}

std::uint64_t sonify_seed(std::uint64_t master, std::string_view participant_id, Instant ema, int stream) {
  return derive_seed(master, "sonify", fnv1a(participant_id), static_cast<std::uint64_t>(to_unix(ema)),
                     static_cast<std::uint64_t>(stream));
}

embedder::EmbedderWeights<float> default_embedder(const FeatureConfig& cfg) {
  auto e = cfg.embedder;
  e.seed = derive_seed(cfg.seed, "embedder");
  return embedder::random_weights<float>(e);
}

namespace {

using EventSpan = std::span<const cohort::SensingEvent>;

bool event_less(const cohort::SensingEvent& a, const cohort::SensingEvent& b) {
  return std::tie(a.participant_id, a.timestamp) < std::tie(b.participant_id, b.timestamp);
}

/// Events ordered by (participant, time); borrows the cohort's vector when it is
/// already in that order.
struct EventIndex {
  std::vector<cohort::SensingEvent> owned;
  EventSpan all;
  std::map<std::string, EventSpan, std::less<>> by_participant;

  explicit EventIndex(const std::vector<cohort::SensingEvent>& events) {
    if (std::is_sorted(events.begin(), events.end(), event_less)) {
      all = events;
    } else {
      owned = events;
      std::stable_sort(owned.begin(), owned.end(), event_less);
      all = owned;
    }
    std::size_t begin = 0;
    for (std::size_t i = 1; i <= all.size(); ++i) {
      if (i == all.size() || all[i].participant_id != all[begin].participant_id) {
        by_participant.emplace(all[begin].participant_id, all.subspan(begin, i - begin));
        begin = i;
      }
    }
  }

  /// Events in [ema - 25 h, ema); the extra hour lets an earlier unlock close inside the window.
  EventSpan slice(std::string_view id, Instant ema) const {
    const auto it = by_participant.find(id);
    if (it == by_participant.end()) return {};
    const auto span = it->second;
    const auto lo = std::lower_bound(span.begin(), span.end(), ema - std::chrono::hours(25),
                                     [](const cohort::SensingEvent& e, Instant t) { return e.timestamp < t; });
    const auto hi = std::lower_bound(lo, span.end(), ema,
                                     [](const cohort::SensingEvent& e, Instant t) { return e.timestamp < t; });
    return span.subspan(static_cast<std::size_t>(lo - span.begin()), static_cast<std::size_t>(hi - lo));
  }
};

std::string instance_label(const Instance& i) { return i.participant_id + "@" + format_rfc3339(i.ema_timestamp); }

template <typename T>
std::map<std::pair<std::string, std::int64_t>, const T*> index_by_ema(const std::vector<T>& items) {
  std::map<std::pair<std::string, std::int64_t>, const T*> m;
  for (const auto& x : items) m[{x.participant_id, to_unix(x.ema_timestamp)}] = &x;
  return m;
}

Eigen::VectorXf embed_waveform(const spectrogram::Waveform<float>& w16k, const FeatureConfig& cfg,
                               const embedder::EmbedderWeights<float>& weights) {
  const auto patches = spectrogram::patchify(spectrogram::log_mel(w16k, cfg.log_mel));
  return embedder::embed_average(patches, weights);
}

}  // namespace

std::vector<mobility::SensingWindow> sensing_windows(const cohort::Cohort& cohort, const std::vector<Instance>& instances,
                                                     const mobility::MobilityConfig& cfg, unsigned threads) {
  const EventIndex index(cohort.events);
  std::vector<mobility::SensingWindow> out(instances.size());
  parallel_for(instances.size(), threads, [&](std::size_t i) {
    const auto& inst = instances[i];
    out[i] = mobility::hourly_window(index.slice(inst.participant_id, inst.ema_timestamp), inst.participant_id,
                                     inst.ema_timestamp, cfg);
  });
  return out;
}

Eigen::VectorXf sonified_embedding(const Eigen::Ref<const Eigen::RowVectorXd>& series, std::uint64_t seed,
                                   const FeatureConfig& cfg, const embedder::EmbedderWeights<float>& weights) {
  auto transform = cfg.transform;
  transform.seed = seed;
  const auto normalized = spectrogram::normalize_series<float>(series);
  const auto wave = spectrogram::synthesize_waveform(normalized, transform);
  return embed_waveform(spectrogram::resample_16k(wave), cfg, weights);
}

Eigen::VectorXf diary_embedding(const cohort::DiaryAudio& audio, const FeatureConfig& cfg,
                                const embedder::EmbedderWeights<float>& weights) {
  spectrogram::Waveform<float> w;
  if (audio.recipe) {
    const auto samples = cohort::render_voice(*audio.recipe);
    w.samples = Eigen::Map<const Eigen::VectorXf>(samples.data(), static_cast<Eigen::Index>(samples.size()));
    w.sample_rate_hz = 16000;
  } else {
    w.samples = Eigen::Map<const Eigen::VectorXf>(audio.samples.data(), static_cast<Eigen::Index>(audio.samples.size()));
    w.sample_rate_hz = audio.sample_rate_hz;
  }
  if (w.sample_rate_hz != cfg.log_mel.sample_rate_hz) w = spectrogram::resample_16k(w);
  return embed_waveform(w, cfg, weights);
}

std::vector<std::string> required_blocks(FeatureMode mode) {
  switch (mode) {
    case FeatureMode::audio_text: return {"audio", "text"};
    case FeatureMode::sensing_vggish: return {"sensing_vggish"};
    case FeatureMode::sensing_rocket: return {"sensing_rocket"};
    case FeatureMode::overall: return {"audio", "text", "sensing_vggish"};
  }
  return {};
}

void featurize(const cohort::Cohort& cohort, FeatureMode mode, const FeatureConfig& cfg,
               const embedder::EmbedderWeights<float>& diary_weights, FeatureSet& out,
               const embedder::EmbedderWeights<float>* sensing_weights) {
  if (out.instances.empty()) out.instances = labeled_instances(cohort);
  const auto& instances = out.instances;
  const auto n = static_cast<Eigen::Index>(instances.size());
  const auto blocks = required_blocks(mode);
  const auto needs = [&](std::string_view b) { return std::find(blocks.begin(), blocks.end(), b) != blocks.end(); };
  if (!sensing_weights) sensing_weights = &diary_weights;
  if (diary_weights.config.embedding_width() != kAudioWidth || sensing_weights->config.embedding_width() != kAudioWidth)
    throw InvalidArgument("featurize: embedder must produce 128-wide embeddings");

  if (needs("audio") && out.audio.rows() != n) {
    const auto audio = index_by_ema(cohort.audio);
    out.audio.resize(n, kAudioWidth);
    parallel_for(instances.size(), cfg.threads, [&](std::size_t i) {
      const auto it = audio.find({instances[i].participant_id, to_unix(instances[i].ema_timestamp)});
      if (it == audio.end()) throw InvalidArgument("missing diary audio for " + instance_label(instances[i]));
      out.audio.row(static_cast<Eigen::Index>(i)) = diary_embedding(*it->second, cfg, diary_weights).transpose();
    });
  }
  if (needs("text") && out.text.rows() != n) {
    const auto diaries = index_by_ema(cohort.diaries);
    out.text.resize(n, kTextWidth);
    for (std::size_t i = 0; i < instances.size(); ++i) {
      const auto it = diaries.find({instances[i].participant_id, to_unix(instances[i].ema_timestamp)});
      if (it == diaries.end()) throw InvalidArgument("missing diary transcript for " + instance_label(instances[i]));
      out.text.row(static_cast<Eigen::Index>(i)) = text::transcript_vector(*it->second).cast<float>().transpose();
    }
  }
  const bool vggish = needs("sensing_vggish") && out.sensing_vggish.rows() != n;
  const bool rocket = needs("sensing_rocket") && out.sensing_rocket.rows() != n;
  if (!vggish && !rocket) return;

  const auto windows = sensing_windows(cohort, instances, cfg.mobility, cfg.threads);
  if (rocket) {
    const auto kernels = rocket::sample_kernel_sets(derive_seed(cfg.seed, "rocket"), cfg.kernels);
    if (2 * cfg.kernels.n_kernels * mobility::kStreams != kSensingWidth)
      throw InvalidArgument("featurize: 64 kernels per stream are needed for a 896-wide sensing block");
    out.sensing_rocket.resize(n, kSensingWidth);
    parallel_for(instances.size(), cfg.threads, [&](std::size_t i) {
      const Eigen::MatrixXd f = rocket::rocket_features(windows[i], kernels);
      for (int s = 0; s < mobility::kStreams; ++s)
        out.sensing_rocket.block(static_cast<Eigen::Index>(i), s * 128, 1, 128) = f.row(s).cast<float>();
    });
  }
  if (vggish) {
    out.sensing_vggish.resize(n, kSensingWidth);
    const std::size_t units = instances.size() * mobility::kStreams;
    parallel_for(units, cfg.threads, [&](std::size_t u) {
      const std::size_t i = u / mobility::kStreams;
      const int s = static_cast<int>(u % mobility::kStreams);
      const auto seed = sonify_seed(cfg.seed, instances[i].participant_id, instances[i].ema_timestamp, s);
      out.sensing_vggish.block(static_cast<Eigen::Index>(i), s * 128, 1, 128) =
          sonified_embedding(windows[i].values.row(s), seed, cfg, *sensing_weights).transpose();
    });
  }
}

FloatMatrix assemble_features(const FeatureSet& set, FeatureMode mode, FeatureMode sensing) {
  const auto n = static_cast<Eigen::Index>(set.instances.size());
  auto block = [&](const FloatMatrix& m, std::string_view name, Eigen::Index width) -> const FloatMatrix& {
    if (m.rows() != n || m.cols() != width) {
      const std::string who = n > 0 ? instance_label(set.instances[static_cast<std::size_t>(std::min(m.rows(), n - 1))]) : "";
      throw InvalidArgument("missing feature block '" + std::string(name) + "'" + (who.empty() ? "" : " for " + who));
    }
    return m;
  };
  auto sensing_block = [&](FeatureMode m) -> const FloatMatrix& {
    return m == FeatureMode::sensing_rocket ? block(set.sensing_rocket, "sensing_rocket", kSensingWidth)
                                            : block(set.sensing_vggish, "sensing_vggish", kSensingWidth);
  };
  switch (mode) {
    case FeatureMode::audio_text: {
      FloatMatrix x(n, kAudioWidth + kTextWidth);
      x << block(set.audio, "audio", kAudioWidth), block(set.text, "text", kTextWidth);
      return x;
    }
    case FeatureMode::sensing_vggish:
    case FeatureMode::sensing_rocket: return sensing_block(mode);
    case FeatureMode::overall: {
      FloatMatrix x(n, kAudioWidth + kTextWidth + kSensingWidth);
      x << block(set.audio, "audio", kAudioWidth), block(set.text, "text", kTextWidth), sensing_block(sensing);
      return x;
    }
  }
  throw InvalidArgument("assemble_features: unknown mode");
}

TensorArchive features_to_archive(const FeatureSet& set, std::uint64_t cohort_digest, FeatureMode mode,
                                  const FeatureConfig& cfg) {
  TensorArchive a;
  const auto n = static_cast<Eigen::Index>(set.instances.size());
  if (set.audio.rows() == n && n > 0) a.put_matrix("audio", set.audio);
  if (set.text.rows() == n && n > 0) a.put_matrix("text", set.text);
  if (set.sensing_vggish.rows() == n && n > 0) a.put_matrix("sensing_vggish", set.sensing_vggish);
  if (set.sensing_rocket.rows() == n && n > 0) a.put_matrix("sensing_rocket", set.sensing_rocket);
  nlohmann::json instances = nlohmann::json::array();
  for (const auto& i : set.instances)
    instances.push_back({{"participant_id", i.participant_id},
                         {"timestamp", format_rfc3339(i.ema_timestamp)},
                         {"answers", i.answers.ordinals}});
  auto& meta = a.metadata();
  meta["kind"] = "features";
  meta["cohort_digest"] = cohort_digest;
  meta["mode"] = mode_name(mode);
  meta["config_digest"] = cfg.digest();
  meta["config"] = cfg.to_json();
  meta["instances"] = std::move(instances);
  return a;
}

FeatureSet features_from_archive(const TensorArchive& a) {
  FeatureSet set;
  try {
    for (const auto& j : a.metadata().at("instances")) {
      const auto t = parse_rfc3339(j.at("timestamp").get<std::string>());
      if (!t) throw ArchiveError("feature archive: malformed instance timestamp");
      set.instances.push_back(
          {j.at("participant_id").get<std::string>(), *t, {j.at("answers").get<std::array<int, 4>>()}});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ArchiveError(std::string("corrupt feature manifest: ") + e.what());
  }
  const auto n = static_cast<std::int64_t>(set.instances.size());
  auto load = [&](const char* name, FloatMatrix& m, std::int64_t width) {
    if (!a.contains(name)) return;
    a.expect(name, {n, width});
    m = a.matrix<float>(name);
  };
  load("audio", set.audio, kAudioWidth);
  load("text", set.text, kTextWidth);
  load("sensing_vggish", set.sensing_vggish, kSensingWidth);
  load("sensing_rocket", set.sensing_rocket, kSensingWidth);
  return set;
}

// ---------------------------------------------------------------------------
// Models
// ---------------------------------------------------------------------------

std::string_view kind_name(ModelKind k) {
  switch (k) {
    case ModelKind::audio_text: return "audio_text";
    case ModelKind::sensing: return "sensing";
    case ModelKind::hybrid: return "hybrid";
    case ModelKind::overall: return "overall";
  }
  return "overall";
}

std::optional<ModelKind> kind_from_name(std::string_view name) {
  for (auto k : {ModelKind::audio_text, ModelKind::sensing, ModelKind::hybrid, ModelKind::overall})
    if (kind_name(k) == name) return k;
  if (name == "audio-text") return ModelKind::audio_text;
  return std::nullopt;
}

std::string_view source_name(SensingSource s) { return s == SensingSource::vggish ? "vggish" : "rocket"; }

std::string model_name(ModelKind kind, SensingSource source) {
  if (kind == ModelKind::audio_text) return "audio_text";
  return std::string(kind_name(kind)) + "_" + std::string(source_name(source));
}

nn::ModelSpec table_spec(ModelKind kind, std::uint64_t seed) {
  using nn::Activation;
  nn::ModelSpec s;
  s.seed = seed;
  s.loss = nn::LossKind::per_class_sigmoid_cross_entropy;
  auto layer = [](int width, Activation a, double dropout, bool bn = true) { return nn::LayerSpec{width, a, dropout, bn}; };
  const auto relu = Activation::relu;
  const auto tanh = Activation::tanh;
  switch (kind) {
    case ModelKind::audio_text:
      s.input_width = kAudioWidth + kTextWidth;
      s.input = {0.6, true};
      s.layers = {layer(512, relu, 0.4), layer(128, relu, 0.2), layer(32, relu, 0.0), layer(16, relu, 0.0),
                  layer(8, relu, 0.0), layer(4, Activation::sigmoid, 0.0, false)};
      break;
    case ModelKind::sensing:
      s.input_width = kSensingWidth;
      s.input = {0.5, true};
      s.layers = {layer(512, tanh, 0.2), layer(128, tanh, 0.2), layer(32, tanh, 0.0), layer(16, tanh, 0.0),
                  layer(4, Activation::sigmoid, 0.0, false)};
      break;
    case ModelKind::hybrid:
      s.input_width = 2 * kTransferWidth;
      s.input = {0.5, true};
      s.layers = {layer(32, tanh, 0.3), layer(16, relu, 0.2), layer(4, Activation::softmax, 0.0, false)};
      s.loss = nn::LossKind::softmax_cross_entropy;
      break;
    case ModelKind::overall:
      s.input_width = kAudioWidth + kTextWidth + kSensingWidth;
      s.input = {0.6, true};
      s.layers = {layer(896, relu, 0.5), layer(596, relu, 0.2), layer(128, relu, 0.3), layer(32, relu, 0.1),
                  layer(16, relu, 0.0),  layer(8, relu, 0.0),   layer(4, Activation::sigmoid, 0.0, false)};
      break;
  }
  s.validate();
  return s;
}

nn::TrainConfig table_train_config(ModelKind kind, std::uint64_t seed) {
  nn::TrainConfig c;
  c.seed = seed;
  switch (kind) {
    case ModelKind::audio_text: c.batch_size = 64, c.epochs = 80; break;
    case ModelKind::sensing: c.batch_size = 42, c.epochs = 120; break;
    case ModelKind::hybrid: c.batch_size = 32, c.epochs = 50; break;
    case ModelKind::overall: c.batch_size = 64, c.epochs = 150; break;
  }
  return c;
}

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json sources_json = nlohmann::json::array();
  for (auto s : sources) sources_json.push_back(source_name(s));
  nlohmann::json questions_json = nlohmann::json::array();
  for (auto q : questions) questions_json.push_back(cohort::question_name(q));
  nlohmann::json j = {{"seed", seed},
                      {"learning_rate", learning_rate},
                      {"sources", sources_json},
                      {"questions", questions_json}};
  j["epochs"] = epochs ? nlohmann::json(*epochs) : nlohmann::json(nullptr);
  j["batch_size"] = batch_size ? nlohmann::json(*batch_size) : nlohmann::json(nullptr);
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  try {
    c.seed = j.value("seed", c.seed);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    if (j.contains("epochs") && !j["epochs"].is_null()) c.epochs = j["epochs"].get<int>();
    if (j.contains("batch_size") && !j["batch_size"].is_null()) c.batch_size = j["batch_size"].get<int>();
    if (j.contains("sources")) {
      c.sources.clear();
      for (const auto& s : j["sources"]) {
        const auto name = s.get<std::string>();
        if (name == "vggish") c.sources.push_back(SensingSource::vggish);
        else if (name == "rocket") c.sources.push_back(SensingSource::rocket);
        else throw InvalidArgument("unknown sensing source '" + name + "'");
      }
    }
    if (j.contains("questions")) {
      c.questions.clear();
      for (const auto& q : j["questions"]) {
        const auto parsed = cohort::question_from_name(q.get<std::string>());
        if (!parsed) throw InvalidArgument("unknown question '" + q.get<std::string>() + "'");
        c.questions.push_back(*parsed);
      }
    }
    c.threads = j.value("threads", c.threads);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("malformed experiment config: ") + e.what());
  }
  return c;
}

std::uint64_t ExperimentConfig::init_seed(std::string_view model, Question q) const {
  return derive_seed(seed, "model-init", fnv1a(model), static_cast<std::uint64_t>(q));
}

nn::TrainConfig ExperimentConfig::train_config(ModelKind kind, std::string_view model, Question q) const {
  auto c = table_train_config(kind, derive_seed(seed, "train", fnv1a(model), static_cast<std::uint64_t>(q)));
  c.learning_rate = learning_rate;
  if (epochs) c.epochs = *epochs;
  if (batch_size) c.batch_size = *batch_size;
  return c;
}

std::vector<int> ordinals(const std::vector<Instance>& instances, const std::vector<std::size_t>& rows, Question q) {
  std::vector<int> out;
  out.reserve(rows.size());
  for (auto r : rows) out.push_back(instances[r].answers[q]);
  return out;
}

nn::Dataset<float> make_dataset(const FloatMatrix& features, const std::vector<Instance>& instances,
                                const std::vector<std::size_t>& rows, Question q) {
  nn::Dataset<float> d;
  d.features.resize(static_cast<Eigen::Index>(rows.size()), features.cols());
  d.targets.resize(static_cast<Eigen::Index>(rows.size()), cohort::kNumClasses);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    d.features.row(static_cast<Eigen::Index>(k)) = features.row(static_cast<Eigen::Index>(rows[k]));
    d.targets.row(static_cast<Eigen::Index>(k)) = one_hot(instances[rows[k]].answers[q]);
  }
  return d;
}

Evaluation evaluate(const nn::Model<float>& model, const FloatMatrix& features, const std::vector<int>& truth) {
  Evaluation e;
  e.n = truth.size();
  if (truth.empty()) throw InvalidArgument("evaluate: empty split");
  const auto p = nn::class_distribution(model, features);
  e.scores = metrics::f1_scores(p, truth);
  e.top1_confusion = metrics::confusion(truth, metrics::top1_predictions(p));
  return e;
}

Evaluation chance_baseline(const std::vector<int>& test) {
  if (test.empty()) throw InvalidArgument("chance_baseline: empty test set");
  std::array<long, cohort::kNumClasses> counts{};
  for (int t : test) {
    if (t < 0 || t >= cohort::kNumClasses) throw InvalidArgument("chance_baseline: ordinal out of range");
    ++counts[static_cast<std::size_t>(t)];
  }
  std::array<int, cohort::kNumClasses> order{0, 1, 2, 3};
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return counts[a] > counts[b]; });
  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(test.size()), cohort::kNumClasses);
  p.col(order[0]).setConstant(0.6);
  p.col(order[1]).setConstant(0.4);
  Evaluation e;
  e.n = test.size();
  e.scores = metrics::f1_scores(p, test);
  e.top1_confusion = metrics::confusion(test, metrics::top1_predictions(p));
  return e;
}

FloatMatrix transfer_features(const nn::Model<float>& audio_text, const FloatMatrix& audio_text_features,
                              const nn::Model<float>& sensing, const FloatMatrix& sensing_features) {
  auto layer_of = [](const nn::Model<float>& m) {
    const auto l = nn::find_layer_of_width(m.spec(), kTransferWidth);
    if (!l) throw InvalidArgument("transfer_features: parent model has no 32-wide layer");
    return *l;
  };
  if (audio_text_features.rows() != sensing_features.rows())
    throw InvalidArgument("transfer_features: parents see different instance counts");
  FloatMatrix x(audio_text_features.rows(), 2 * kTransferWidth);
  x << nn::extract_activations(audio_text, audio_text_features, layer_of(audio_text)),
      nn::extract_activations(sensing, sensing_features, layer_of(sensing));
  return x;
}

ModelRun run_model(ModelKind kind, std::string_view model, Question q, const FloatMatrix& features,
                   const std::vector<Instance>& instances, const SplitAssignment& split, const ExperimentConfig& cfg) {
  const auto spec = table_spec(kind, cfg.init_seed(model, q));
  if (features.cols() != spec.input_width)
    throw InvalidArgument("run_model: " + std::string(model) + " expects width " + std::to_string(spec.input_width) +
                          ", got " + std::to_string(features.cols()));
  const auto train_rows = split.indices(Split::train);
  const auto val_rows = split.indices(Split::validation);
  const auto test_rows = split.indices(Split::test);
  const auto train_set = make_dataset(features, instances, train_rows, q);
  const auto val_set = make_dataset(features, instances, val_rows, q);
  auto result = nn::train(nn::Model<float>(spec), train_set, val_rows.empty() ? nullptr : &val_set,
                          cfg.train_config(kind, model, q));
  ModelRun run;
  run.model = std::string(model);
  run.question = q;
  run.history = std::move(result.history);
  run.checkpoint = std::move(result.checkpoint);
  const FloatMatrix test_x = features(test_rows, Eigen::all);
  run.test = evaluate(run.checkpoint.model, test_x, ordinals(instances, test_rows, q));
  return run;
}

ModelRun run_hybrid(SensingSource source, Question q, const nn::Model<float>* audio_text,
                    const FloatMatrix& audio_text_features, const nn::Model<float>* sensing,
                    const FloatMatrix& sensing_features, const std::vector<Instance>& instances,
                    const SplitAssignment& split, const ExperimentConfig& cfg) {
  const std::string name = model_name(ModelKind::hybrid, source);
  if (!audio_text || !sensing)
    throw DependencyError(name + " needs trained audio_text and " + model_name(ModelKind::sensing, source) +
                          " checkpoints for " + std::string(cohort::question_name(q)));
  const auto x = transfer_features(*audio_text, audio_text_features, *sensing, sensing_features);
  return run_model(ModelKind::hybrid, name, q, x, instances, split, cfg);
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

ReportEntry to_entry(const ModelRun& run, const SplitAssignment& split) {
  ReportEntry e;
  e.model = run.model;
  e.question = run.question;
  e.test = run.test;
  e.best_epoch = run.checkpoint.epoch;
  e.n_train = split.indices(Split::train).size();
  e.n_validation = split.indices(Split::validation).size();
  return e;
}

nlohmann::json to_json(const Evaluation& e) {
  nlohmann::json confusion = nlohmann::json::array();
  for (int r = 0; r < metrics::kClasses; ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (int c = 0; c < metrics::kClasses; ++c) row.push_back(e.top1_confusion(r, c));
    confusion.push_back(row);
  }
  return {{"top1", {{"micro", e.scores.top1.micro}, {"macro", e.scores.top1.macro}}},
          {"top2", {{"micro", e.scores.top2.micro}, {"macro", e.scores.top2.macro}}},
          {"top1_confusion", confusion},
          {"n", e.n}};
}

nlohmann::json to_json(const Report& report) {
  nlohmann::json questions = nlohmann::json::object();
  for (const auto& [q, chance] : report.chance) questions[std::string(cohort::question_name(q))]["chance"] = to_json(chance);
  for (const auto& e : report.entries) {
    auto j = to_json(e.test);
    j["best_epoch"] = e.best_epoch;
    j["n_train"] = e.n_train;
    j["n_validation"] = e.n_validation;
    questions[std::string(cohort::question_name(e.question))]["models"][e.model] = std::move(j);
  }
  return {{"config", report.config},
          {"seed", report.seed},
          {"split_hash", report.split_hash},
          {"questions", std::move(questions)}};
}

void emit_report(const Report& report, const std::filesystem::path& path) {
  if (report.entries.empty() && report.chance.empty()) throw InvalidArgument("emit_report: nothing to report");
  const auto text = to_json(report).dump(2) + "\n";
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write report to " + path.string());
  out << text;
  if (!out) throw IoError("failed writing report to " + path.string());
}

Report run_experiment(const FeatureSet& features, const ExperimentConfig& cfg, std::map<std::string, ModelRun>* runs) {
  const auto& instances = features.instances;
  const auto split = temporal_split(instances);
  const auto test_rows = split.indices(Split::test);

  Report report;
  report.seed = cfg.seed;
  report.split_hash = split.membership_hash(instances);
  report.config = cfg.to_json();
  for (auto q : cfg.questions) report.chance[q] = chance_baseline(ordinals(instances, test_rows, q));

  const FloatMatrix audio_text = assemble_features(features, FeatureMode::audio_text);
  std::map<SensingSource, FloatMatrix> sensing;
  for (auto s : cfg.sources)
    sensing[s] = assemble_features(features, s == SensingSource::vggish ? FeatureMode::sensing_vggish
                                                                        : FeatureMode::sensing_rocket);

  std::vector<ModelRun> done(cfg.questions.size() * (1 + 3 * cfg.sources.size()));
  parallel_for(cfg.questions.size(), cfg.threads, [&](std::size_t qi) {
    const Question q = cfg.questions[qi];
    std::size_t slot = qi * (1 + 3 * cfg.sources.size());
    auto& at = done[slot++] = run_model(ModelKind::audio_text, "audio_text", q, audio_text, instances, split, cfg);
    for (auto s : cfg.sources) {
      auto& sens = done[slot++] =
          run_model(ModelKind::sensing, model_name(ModelKind::sensing, s), q, sensing.at(s), instances, split, cfg);
      done[slot++] = run_hybrid(s, q, &at.checkpoint.model, audio_text, &sens.checkpoint.model, sensing.at(s),
                                instances, split, cfg);
      FloatMatrix overall(audio_text.rows(), audio_text.cols() + sensing.at(s).cols());
      overall << audio_text, sensing.at(s);
      done[slot++] =
          run_model(ModelKind::overall, model_name(ModelKind::overall, s), q, overall, instances, split, cfg);
    }
  });

  for (auto& run : done) {
    report.entries.push_back(to_entry(run, split));
    if (runs) {
      const std::string key = run.model + "/" + std::string(cohort::question_name(run.question));
      runs->emplace(key, std::move(run));
    }
  }
  return report;
}

}  // namespace avh::harness
