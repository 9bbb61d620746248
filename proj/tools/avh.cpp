// avh: synthetic cohort generation, featurization, training, evaluation and
// reporting over one workspace directory.
//
// Workspace layout (all relative to --out):
//   cohort/                     participants.csv, sensing.csv, ema.csv, diaries.json/.bin
//   features/<mode>.json        feature archives (audio-text, sensing-vggish, sensing-rocket)
//   checkpoints/<model>/<q>.json
//   report.json
//
// Exit codes: 0 success, 1 runtime or I/O failure, 2 usage error.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "avh/cohort.hpp"
#include "avh/error.hpp"
#include "avh/harness.hpp"

namespace fs = std::filesystem;
using namespace avh;
using harness::FeatureMode;
using harness::ModelKind;
using harness::SensingSource;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string out;
  std::string config;
  std::uint64_t seed = 7;
  unsigned threads = 1;
  bool force = false;

  // synth
  int participants = 40;
  int days = 30;

  // featurize
  std::string mode = "all";
  bool random_init = false;
  std::string weights;
  std::string sensing_weights;
  int kernels = 64;
  int width_divisor = 8;
  double epsilon = 0.1;
  int sample_rate = 44100;
  double dbscan_eps = 100.0;
  int dbscan_min_samples = 5;

  // train / evaluate / report
  std::string model;
  std::string sensing = "vggish";
  std::string question = "all";
  std::string split = "test";
  int epochs = 0;
  int batch_size = 0;
  double learning_rate = 1e-3;
};

nlohmann::json read_config(const Options& o) {
  if (o.config.empty()) return nlohmann::json::object();
  std::ifstream in(o.config);
  if (!in) throw IoError("cannot read config " + o.config);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw UsageError("config " + o.config + " is not valid JSON: " + e.what());
  }
}

fs::path workspace(const Options& o) {
  if (o.out.empty()) throw UsageError("--out is required");
  return fs::path(o.out);
}

fs::path feature_path(const fs::path& ws, FeatureMode m) { return ws / "features" / (std::string(harness::mode_name(m)) + ".json"); }
fs::path checkpoint_path(const fs::path& ws, const std::string& model, cohort::Question q) {
  return ws / "checkpoints" / model / (std::string(cohort::question_name(q)) + ".json");
}

void guard(const fs::path& p, bool force) {
  if (fs::exists(p) && !force) throw IoError(p.string() + " already exists; pass --force to overwrite");
}

std::vector<cohort::Question> questions(const Options& o) {
  if (o.question == "all") return {cohort::kQuestions.begin(), cohort::kQuestions.end()};
  const auto q = cohort::question_from_name(o.question);
  if (!q) throw UsageError("unknown question '" + o.question + "'");
  return {*q};
}

SensingSource sensing_source(const Options& o) {
  if (o.sensing == "vggish") return SensingSource::vggish;
  if (o.sensing == "rocket") return SensingSource::rocket;
  throw UsageError("--sensing must be vggish or rocket");
}

/// True when `flag` was given on the subcommand or one of its parents.
bool flag_given(const CLI::App& cmd, const std::string& flag) {
  for (auto* a = &cmd; a != nullptr; a = a->get_parent())
    if (const auto* opt = a->get_option_no_throw(flag); opt && opt->count() > 0) return true;
  return false;
}

harness::FeatureConfig feature_config(const Options& o, const CLI::App& cmd, const nlohmann::json& file) {
  auto c = harness::FeatureConfig::from_json(file.value("features", nlohmann::json::object()));
  c.seed = file.value("seed", c.seed);
  c.threads = file.value("threads", c.threads);
  auto given = [&](const char* flag) { return flag_given(cmd, flag); };
  if (given("--seed")) c.seed = o.seed;
  if (given("--threads")) c.threads = o.threads;
  if (given("--kernels")) c.kernels.n_kernels = o.kernels;
  if (given("--width-divisor") || !file.contains("features")) c.embedder.width_divisor = o.width_divisor;
  if (given("--epsilon")) c.transform.epsilon = o.epsilon;
  if (given("--sample-rate")) c.transform.sample_rate_hz = o.sample_rate;
  if (given("--dbscan-eps")) c.mobility.eps_m = o.dbscan_eps;
  if (given("--dbscan-min-samples")) c.mobility.min_samples = o.dbscan_min_samples;
  c.embedder.validate();
  return c;
}

harness::ExperimentConfig experiment_config(const Options& o, const CLI::App& cmd, const nlohmann::json& file) {
  auto c = harness::ExperimentConfig::from_json(file.value("experiment", nlohmann::json::object()));
  c.seed = file.value("seed", c.seed);
  c.threads = file.value("threads", c.threads);
  auto given = [&](const char* flag) { return flag_given(cmd, flag); };
  if (given("--seed")) c.seed = o.seed;
  if (given("--threads")) c.threads = o.threads;
  if (given("--epochs")) c.epochs = o.epochs;
  if (given("--batch-size")) c.batch_size = o.batch_size;
  if (given("--lr")) c.learning_rate = o.learning_rate;
  if (c.epochs && *c.epochs < 1) throw UsageError("--epochs must be >= 1");
  if (c.batch_size && *c.batch_size < 1) throw UsageError("--batch-size must be >= 1");
  return c;
}

/// Merges every feature archive present in the workspace.
harness::FeatureSet load_features(const fs::path& ws, std::uint64_t* cohort_digest = nullptr) {
  harness::FeatureSet set;
  std::optional<std::uint64_t> digest;
  bool any = false;
  for (auto m : {FeatureMode::audio_text, FeatureMode::sensing_vggish, FeatureMode::sensing_rocket, FeatureMode::overall}) {
    const auto path = feature_path(ws, m);
    if (!fs::exists(path)) continue;
    const auto archive = load_archive(path);
    const auto d = archive.metadata().at("cohort_digest").get<std::uint64_t>();
    if (digest && *digest != d) throw IoError(path.string() + " was built from a different cohort; rerun featurize");
    digest = d;
    auto part = harness::features_from_archive(archive);
    if (!any) {
      set.instances = part.instances;
    } else if (part.instances.size() != set.instances.size()) {
      throw IoError(path.string() + " covers a different instance list; rerun featurize");
    }
    any = true;
    if (part.audio.size()) set.audio = std::move(part.audio);
    if (part.text.size()) set.text = std::move(part.text);
    if (part.sensing_vggish.size()) set.sensing_vggish = std::move(part.sensing_vggish);
    if (part.sensing_rocket.size()) set.sensing_rocket = std::move(part.sensing_rocket);
  }
  if (!any) throw IoError("no feature archives under " + (ws / "features").string() + "; run `avh featurize` first");
  if (cohort_digest) *cohort_digest = *digest;
  return set;
}

nn::Checkpoint<float> load_parent(const fs::path& ws, const std::string& model, cohort::Question q) {
  const auto path = checkpoint_path(ws, model, q);
  if (!fs::exists(path))
    throw harness::DependencyError("missing checkpoint " + path.string() + "; run `avh train --model " +
                                   (model == "audio_text" ? std::string("audio-text") : "sensing --sensing " + model.substr(8)) +
                                   "` before training the hybrid model");
  return nn::load_checkpoint<float>(path);
}

struct Prepared {
  harness::FeatureSet features;
  harness::SplitAssignment split;
  std::uint64_t cohort_digest = 0;
};

Prepared prepare(const fs::path& ws) {
  Prepared p;
  p.features = load_features(ws, &p.cohort_digest);
  p.split = harness::temporal_split(p.features.instances);
  return p;
}

/// Input matrix of a non-hybrid model kind.
harness::FloatMatrix inputs_for(const harness::FeatureSet& f, ModelKind kind, SensingSource s) {
  const auto sensing = s == SensingSource::vggish ? FeatureMode::sensing_vggish : FeatureMode::sensing_rocket;
  switch (kind) {
    case ModelKind::audio_text: return harness::assemble_features(f, FeatureMode::audio_text);
    case ModelKind::sensing: return harness::assemble_features(f, sensing);
    case ModelKind::overall: return harness::assemble_features(f, FeatureMode::overall, sensing);
    case ModelKind::hybrid: break;
  }
  throw InvalidArgument("hybrid inputs come from parent checkpoints");
}

harness::FloatMatrix hybrid_inputs(const fs::path& ws, const harness::FeatureSet& f, SensingSource s, cohort::Question q) {
  const auto at = load_parent(ws, "audio_text", q);
  const auto sens = load_parent(ws, harness::model_name(ModelKind::sensing, s), q);
  return harness::transfer_features(at.model, inputs_for(f, ModelKind::audio_text, s), sens.model,
                                    inputs_for(f, ModelKind::sensing, s));
}

harness::FloatMatrix model_inputs(const fs::path& ws, const harness::FeatureSet& f, ModelKind kind, SensingSource s,
                                  cohort::Question q) {
  return kind == ModelKind::hybrid ? hybrid_inputs(ws, f, s, q) : inputs_for(f, kind, s);
}

ModelKind parse_kind(const std::string& name) {
  const auto k = harness::kind_from_name(name);
  if (!k) throw UsageError("--model must be one of audio-text, sensing, hybrid, overall");
  return *k;
}

// ---------------------------------------------------------------------------

int cmd_synth(const Options& o, const CLI::App& cmd) {
  const auto ws = workspace(o);
  const auto file = read_config(o);
  cohort::SynthConfig cfg;
  const auto synth = file.value("synth", nlohmann::json::object());
  cfg.n_participants = synth.value("participants", cfg.n_participants);
  cfg.n_days = synth.value("days", cfg.n_days);
  cfg.compliance = synth.value("compliance", cfg.compliance);
  cfg.gps_interval_minutes = synth.value("gps_interval_minutes", cfg.gps_interval_minutes);
  cfg.amplitude_interval_minutes = synth.value("amplitude_interval_minutes", cfg.amplitude_interval_minutes);
  cfg.seed = file.value("seed", cfg.seed);
  if (flag_given(cmd, "--participants")) cfg.n_participants = o.participants;
  if (flag_given(cmd, "--days")) cfg.n_days = o.days;
  if (flag_given(cmd, "--seed")) cfg.seed = o.seed;
  if (cfg.n_participants < 1 || cfg.n_days < 1) throw UsageError("--participants and --days must be >= 1");

  const auto dir = ws / "cohort";
  guard(dir / cohort::CohortFiles::ema, o.force);
  const auto c = cohort::generate_synthetic_cohort(cfg);
  cohort::save_cohort(dir, c);
  std::size_t labeled = 0;
  for (const auto& e : c.emas) labeled += e.answers.has_value();
  std::cout << "wrote " << dir.string() << ": " << c.participants.size() << " participants, " << c.events.size()
            << " sensing events, " << c.emas.size() << " EMAs (" << labeled << " with answers)\n";
  return 0;
}

int cmd_featurize(const Options& o, const CLI::App& cmd) {
  const auto ws = workspace(o);
  const auto file = read_config(o);
  const auto cfg = feature_config(o, cmd, file);

  std::vector<FeatureMode> modes;
  if (o.mode == "all") {
    modes = {FeatureMode::audio_text, FeatureMode::sensing_vggish, FeatureMode::sensing_rocket};
  } else {
    const auto m = harness::mode_from_name(o.mode);
    if (!m) throw UsageError("--mode must be audio-text, sensing-vggish, sensing-rocket, overall or all");
    modes = {*m};
  }
  const bool needs_embedder = std::any_of(modes.begin(), modes.end(), [](FeatureMode m) { return m != FeatureMode::sensing_rocket; });
  if (needs_embedder && !o.random_init && o.weights.empty())
    throw UsageError("an embedder weight archive is required: pass --weights <manifest> or --random-init");
  for (auto m : modes) guard(feature_path(ws, m), o.force);

  std::optional<embedder::EmbedderWeights<float>> diary, sensing;
  if (needs_embedder) {
    if (o.random_init) {
      diary = harness::default_embedder(cfg);
    } else {
      if (!fs::exists(o.weights)) throw IoError("weights file " + o.weights + " not found");
      diary = embedder::load_weight_archive<float>(o.weights, cfg.embedder);
    }
    if (!o.sensing_weights.empty()) {
      if (!fs::exists(o.sensing_weights)) throw IoError("weights file " + o.sensing_weights + " not found");
      sensing = embedder::load_weight_archive<float>(o.sensing_weights, cfg.embedder);
    }
  }
  const auto c = cohort::load_cohort(ws / "cohort");
  const auto digest = cohort::cohort_digest(c);
  fs::create_directories(ws / "features");
  for (auto m : modes) {
    harness::FeatureSet set;
    const embedder::EmbedderWeights<float> none;
    harness::featurize(c, m, cfg, diary ? *diary : none, set, sensing ? &*sensing : nullptr);
    save_archive(harness::features_to_archive(set, digest, m, cfg), feature_path(ws, m));
    std::cout << "wrote " << feature_path(ws, m).string() << ": " << set.instances.size() << " instances, width "
              << harness::assemble_features(set, m).cols() << "\n";
  }
  return 0;
}

int cmd_train(const Options& o, const CLI::App& cmd) {
  const auto ws = workspace(o);
  if (o.model.empty()) throw UsageError("--model is required");
  const auto kind = parse_kind(o.model);
  const auto source = sensing_source(o);
  const auto file = read_config(o);
  const auto cfg = experiment_config(o, cmd, file);
  const auto name = harness::model_name(kind, source);
  const auto qs = questions(o);
  for (auto q : qs) guard(checkpoint_path(ws, name, q), o.force);

  auto p = prepare(ws);
  for (auto q : qs) {
    const auto x = model_inputs(ws, p.features, kind, source, q);
    auto run = harness::run_model(kind, name, q, x, p.features.instances, p.split, cfg);
    auto archive = nn::to_archive(run.checkpoint);
    nlohmann::json history = nlohmann::json::array();
    for (const auto& h : run.history)
      history.push_back({{"epoch", h.epoch},
                         {"train_loss", h.train_loss},
                         {"validation_top1", std::isnan(h.validation_top1) ? nlohmann::json(nullptr)
                                                                           : nlohmann::json(h.validation_top1)}});
    archive.metadata()["model"] = name;
    archive.metadata()["question"] = cohort::question_name(q);
    archive.metadata()["history"] = std::move(history);
    archive.metadata()["split_hash"] = p.split.membership_hash(p.features.instances);
    archive.metadata()["experiment"] = cfg.to_json();
    fs::create_directories(checkpoint_path(ws, name, q).parent_path());
    save_archive(archive, checkpoint_path(ws, name, q));
    std::printf("%-16s %-13s best epoch %3d  validation top-1 %.4f\n", name.c_str(),
                std::string(cohort::question_name(q)).c_str(), run.checkpoint.epoch,
                run.history[static_cast<std::size_t>(run.checkpoint.epoch - 1)].validation_top1);
  }
  return 0;
}

/// Scores of every checkpoint found for the given questions on one split.
std::map<std::string, std::map<cohort::Question, harness::Evaluation>> evaluate_all(const fs::path& ws, const Prepared& p,
                                                                                   harness::Split split,
                                                                                   const std::vector<cohort::Question>& qs,
                                                                                   const std::string& only) {
  std::map<std::string, std::map<cohort::Question, harness::Evaluation>> out;
  const auto rows = p.split.indices(split);
  if (rows.empty()) throw IoError(std::string("the ") + std::string(harness::split_name(split)) + " split is empty");
  for (auto kind : {ModelKind::audio_text, ModelKind::sensing, ModelKind::hybrid, ModelKind::overall}) {
    for (auto source : {SensingSource::vggish, SensingSource::rocket}) {
      if (kind == ModelKind::audio_text && source == SensingSource::rocket) continue;
      const auto name = harness::model_name(kind, source);
      if (!only.empty() && name != only && std::string(harness::kind_name(kind)) != only) continue;
      for (auto q : qs) {
        const auto path = checkpoint_path(ws, name, q);
        if (!fs::exists(path)) continue;
        const auto ckpt = nn::load_checkpoint<float>(path);
        const harness::FloatMatrix x = model_inputs(ws, p.features, kind, source, q)(rows, Eigen::all);
        out[name][q] = harness::evaluate(ckpt.model, x, harness::ordinals(p.features.instances, rows, q));
      }
    }
  }
  return out;
}

int cmd_evaluate(const Options& o, const CLI::App&) {
  const auto ws = workspace(o);
  const auto split = harness::split_from_name(o.split);
  if (!split) throw UsageError("--split must be train, validation or test");
  const auto qs = questions(o);
  std::string only;
  if (!o.model.empty()) {
    const auto kind = parse_kind(o.model);
    only = kind == ModelKind::audio_text ? "audio_text" : std::string(harness::kind_name(kind));
  }
  const auto p = prepare(ws);
  const auto results = evaluate_all(ws, p, *split, qs, only);
  if (results.empty()) throw IoError("no checkpoints under " + (ws / "checkpoints").string() + "; run `avh train` first");
  const auto rows = p.split.indices(*split);
  for (auto q : qs) {
    const auto chance = harness::chance_baseline(harness::ordinals(p.features.instances, rows, q));
    std::printf("%s (%s split, n = %zu)\n", std::string(cohort::question_name(q)).c_str(), o.split.c_str(), rows.size());
    std::printf("  %-16s %9s %9s %9s %9s\n", "model", "top1-mic", "top1-mac", "top2-mic", "top2-mac");
    auto line = [](const std::string& name, const harness::Evaluation& e) {
      std::printf("  %-16s %9.4f %9.4f %9.4f %9.4f\n", name.c_str(), e.scores.top1.micro, e.scores.top1.macro,
                  e.scores.top2.micro, e.scores.top2.macro);
    };
    line("chance", chance);
    for (const auto& [name, by_q] : results)
      if (auto it = by_q.find(q); it != by_q.end()) line(name, it->second);
  }
  return 0;
}

int cmd_report(const Options& o, const CLI::App&) {
  const auto ws = workspace(o);
  const auto path = ws / "report.json";
  guard(path, o.force);
  const auto qs = questions(o);
  const auto p = prepare(ws);
  const auto results = evaluate_all(ws, p, harness::Split::test, qs, "");
  if (results.empty()) throw IoError("no checkpoints under " + (ws / "checkpoints").string() + "; run `avh train` first");

  harness::Report report;
  report.split_hash = p.split.membership_hash(p.features.instances);
  const auto test_rows = p.split.indices(harness::Split::test);
  for (auto q : qs) report.chance[q] = harness::chance_baseline(harness::ordinals(p.features.instances, test_rows, q));
  nlohmann::json experiment;
  for (const auto& [name, by_q] : results) {
    for (const auto& [q, eval] : by_q) {
      const auto archive = load_archive(checkpoint_path(ws, name, q));
      harness::ReportEntry e;
      e.model = name;
      e.question = q;
      e.test = eval;
      e.best_epoch = archive.metadata().at("epoch").get<int>();
      e.n_train = p.split.indices(harness::Split::train).size();
      e.n_validation = p.split.indices(harness::Split::validation).size();
      report.entries.push_back(e);
      if (experiment.is_null()) experiment = archive.metadata().value("experiment", nlohmann::json::object());
    }
  }
  report.seed = experiment.value("seed", std::uint64_t{0});
  report.config = {{"experiment", experiment}, {"cohort_digest", p.cohort_digest}};
  harness::emit_report(report, path);
  std::cout << "wrote " << path.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Auditory verbal hallucination valence pipeline"};
  app.require_subcommand(1);
  app.fallthrough();
  Options o;
  app.add_option("--out", o.out, "Workspace directory");
  app.add_option("--config", o.config, "JSON config merged under explicit flags");
  app.add_option("--seed", o.seed, "Master seed");
  app.add_option("--threads", o.threads, "Worker thread cap")->check(CLI::Range(1u, 1024u));
  app.add_flag("--force", o.force, "Overwrite existing outputs");

  auto* synth = app.add_subcommand("synth", "Generate a synthetic cohort");
  synth->add_option("--participants", o.participants);
  synth->add_option("--days", o.days);

  auto* featurize = app.add_subcommand("featurize", "Compute feature archives");
  featurize->add_option("--mode", o.mode, "audio-text | sensing-vggish | sensing-rocket | overall | all");
  featurize->add_flag("--random-init", o.random_init, "Use seeded random embedder weights");
  featurize->add_option("--weights", o.weights, "Embedder weight archive manifest");
  featurize->add_option("--sensing-weights", o.sensing_weights, "Separate embedder weights for sensing series");
  featurize->add_option("--kernels", o.kernels, "Random kernels per stream");
  featurize->add_option("--width-divisor", o.width_divisor, "Embedder width divisor");
  featurize->add_option("--epsilon", o.epsilon, "Sonification variance scale");
  featurize->add_option("--sample-rate", o.sample_rate, "Sonification sample rate");
  featurize->add_option("--dbscan-eps", o.dbscan_eps, "DBSCAN radius in meters");
  featurize->add_option("--dbscan-min-samples", o.dbscan_min_samples, "DBSCAN core size");

  auto* train = app.add_subcommand("train", "Train one model kind");
  train->add_option("--model", o.model, "audio-text | sensing | hybrid | overall");
  train->add_option("--sensing", o.sensing, "vggish | rocket");
  train->add_option("--question", o.question, "negativeness | loudness | control | power | all");
  train->add_option("--epochs", o.epochs);
  train->add_option("--batch-size", o.batch_size);
  train->add_option("--lr", o.learning_rate);

  auto* evaluate = app.add_subcommand("evaluate", "Print top-1/top-2 F1 tables");
  evaluate->add_option("--split", o.split, "train | validation | test");
  evaluate->add_option("--model", o.model);
  evaluate->add_option("--question", o.question);

  auto* report = app.add_subcommand("report", "Write report.json from all checkpoints");
  report->add_option("--question", o.question);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (synth->parsed()) return cmd_synth(o, *synth);
    if (featurize->parsed()) return cmd_featurize(o, *featurize);
    if (train->parsed()) return cmd_train(o, *train);
    if (evaluate->parsed()) return cmd_evaluate(o, *evaluate);
    if (report->parsed()) return cmd_report(o, *report);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const harness::DependencyError& e) {
    std::cerr << "dependency error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
