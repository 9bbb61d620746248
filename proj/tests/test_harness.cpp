#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "avh/harness.hpp"
#include "avh/seed.hpp"

using namespace avh;
using namespace avh::harness;

namespace {

std::vector<Instance> make_instances(const std::vector<std::pair<std::string, int>>& counts, std::mt19937_64& rng) {
  std::vector<Instance> out;
  std::uniform_int_distribution<int> ordinal(0, 3);
  for (const auto& [id, n] : counts)
    for (int k = 0; k < n; ++k)
      out.push_back({id, from_unix(1'600'000'000 + 3600 * k), {{ordinal(rng), ordinal(rng), ordinal(rng), ordinal(rng)}}});
  return out;
}

FeatureSet random_features(const std::vector<Instance>& instances, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> g;
  const auto n = static_cast<Eigen::Index>(instances.size());
  FeatureSet set;
  set.instances = instances;
  auto fill = [&](FloatMatrix& m, int width) {
    m.resize(n, width);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  };
  fill(set.audio, kAudioWidth);
  fill(set.text, kTextWidth);
  fill(set.sensing_vggish, kSensingWidth);
  fill(set.sensing_rocket, kSensingWidth);
  // plant a little signal so training has something to find
  for (Eigen::Index i = 0; i < n; ++i)
    for (auto q : cohort::kQuestions) {
      const float a = static_cast<float>(instances[static_cast<std::size_t>(i)].answers[q]);
      set.audio(i, static_cast<int>(q)) += a;
      set.sensing_vggish(i, static_cast<int>(q)) += a;
      set.sensing_rocket(i, static_cast<int>(q)) += a;
    }
  return set;
}

}  // namespace

TEST_SUITE("harness") {

TEST_CASE("one-hot targets") {
  CHECK(one_hot(0) == Eigen::RowVector4f(1, 0, 0, 0));
  CHECK(one_hot(3) == Eigen::RowVector4f(0, 0, 0, 1));
  CHECK_THROWS_AS(one_hot(4), InvalidArgument);
  CHECK_THROWS_AS(one_hot(-1), InvalidArgument);
}

TEST_CASE("temporal split sizes") {
  std::mt19937_64 rng(1);
  const auto inst = make_instances({{"a", 10}, {"b", 1}, {"c", 4}, {"d", 5}, {"e", 33}}, rng);
  const auto s = temporal_split(inst);
  auto sizes = [&](const std::string& id) {
    const auto& l = s.per_participant.at(id);
    return std::array<std::size_t, 3>{l[0].size(), l[1].size(), l[2].size()};
  };
  CHECK(sizes("a") == std::array<std::size_t, 3>{6, 2, 2});
  CHECK(sizes("b") == std::array<std::size_t, 3>{1, 0, 0});
  CHECK(sizes("c") == std::array<std::size_t, 3>{4, 0, 0});
  CHECK(sizes("d") == std::array<std::size_t, 3>{3, 1, 1});
  CHECK(sizes("e") == std::array<std::size_t, 3>{19, 6, 8});
  CHECK(s.indices(Split::train).size() + s.indices(Split::validation).size() + s.indices(Split::test).size() ==
        inst.size());
}

TEST_CASE("temporal split is chronological and ignores input order") {
  std::mt19937_64 rng(2);
  auto inst = make_instances({{"p1", 17}, {"p2", 23}, {"p3", 8}}, rng);
  const auto s = temporal_split(inst);
  for (const auto& [id, lists] : s.per_participant) {
    auto latest = [&](int k) {
      std::int64_t t = INT64_MIN;
      for (auto r : lists[static_cast<std::size_t>(k)]) t = std::max(t, to_unix(inst[r].ema_timestamp));
      return t;
    };
    auto earliest = [&](int k) {
      std::int64_t t = INT64_MAX;
      for (auto r : lists[static_cast<std::size_t>(k)]) t = std::min(t, to_unix(inst[r].ema_timestamp));
      return t;
    };
    CHECK(latest(0) < earliest(1));
    CHECK(latest(1) < earliest(2));
  }
  const auto h = s.membership_hash(inst);
  std::shuffle(inst.begin(), inst.end(), rng);
  CHECK(temporal_split(inst).membership_hash(inst) == h);
}

TEST_CASE("duplicate timestamps within a participant are rejected") {
  std::mt19937_64 rng(3);
  auto inst = make_instances({{"p", 6}}, rng);
  inst[4].ema_timestamp = inst[2].ema_timestamp;
  CHECK_THROWS_AS(temporal_split(inst), InvalidArgument);
  inst[4].participant_id = "q";
  CHECK_NOTHROW(temporal_split(inst));
}

TEST_CASE("table architectures") {
  CHECK(table_spec(ModelKind::audio_text, 1).input_width == 896);
  CHECK(table_spec(ModelKind::sensing, 1).input_width == 896);
  CHECK(table_spec(ModelKind::hybrid, 1).input_width == 64);
  CHECK(table_spec(ModelKind::overall, 1).input_width == 1792);
  CHECK(table_spec(ModelKind::hybrid, 1).loss == nn::LossKind::softmax_cross_entropy);
  CHECK(table_train_config(ModelKind::sensing, 1).batch_size == 42);
  CHECK(table_train_config(ModelKind::overall, 1).epochs == 150);
}

TEST_CASE("assembled feature widths") {
  std::mt19937_64 rng(4);
  const auto set = random_features(make_instances({{"p", 7}}, rng), 4);
  CHECK(assemble_features(set, FeatureMode::audio_text).cols() == 896);
  CHECK(assemble_features(set, FeatureMode::sensing_vggish).cols() == 896);
  CHECK(assemble_features(set, FeatureMode::sensing_rocket).cols() == 896);
  const auto overall = assemble_features(set, FeatureMode::overall, FeatureMode::sensing_rocket);
  CHECK(overall.cols() == 1792);
  CHECK(overall.rightCols(896) == set.sensing_rocket);
  FeatureSet partial = set;
  partial.text.resize(0, 0);
  CHECK_THROWS_AS(assemble_features(partial, FeatureMode::audio_text), InvalidArgument);
}

TEST_CASE("hybrid input comes from the parents' 32-wide layers") {
  std::mt19937_64 rng(5);
  const auto inst = make_instances({{"p", 12}}, rng);
  const auto set = random_features(inst, 5);
  const nn::Model<float> at(table_spec(ModelKind::audio_text, 1));
  const nn::Model<float> sens(table_spec(ModelKind::sensing, 2));
  const auto xa = assemble_features(set, FeatureMode::audio_text);
  const auto xs = assemble_features(set, FeatureMode::sensing_vggish);
  const auto t = transfer_features(at, xa, sens, xs);
  CHECK(t.rows() == 12);
  CHECK(t.cols() == 64);
  const auto split = temporal_split(inst);
  const ExperimentConfig cfg{.epochs = 1};
  CHECK_THROWS_AS(run_hybrid(SensingSource::vggish, Question::control, nullptr, xa, &sens, xs, inst, split, cfg),
                  DependencyError);
  CHECK_THROWS_AS(run_hybrid(SensingSource::vggish, Question::control, &at, xa, nullptr, xs, inst, split, cfg),
                  DependencyError);
}

TEST_CASE("featurize on a tiny cohort") {
  const auto c = cohort::generate_synthetic_cohort({.n_participants = 2, .n_days = 3, .seed = 9});
  FeatureConfig cfg;
  cfg.embedder.width_divisor = 64;
  const auto w = default_embedder(cfg);
  FeatureSet set;
  featurize(c, FeatureMode::audio_text, cfg, w, set);
  featurize(c, FeatureMode::sensing_rocket, cfg, w, set);
  REQUIRE(!set.instances.empty());
  const auto n = static_cast<Eigen::Index>(set.instances.size());
  CHECK(set.audio.rows() == n);
  CHECK(set.text.cols() == 768);
  CHECK(set.sensing_rocket.cols() == 896);
  CHECK(set.sensing_vggish.rows() == 0);
  CHECK(set.audio.allFinite());
  CHECK(set.sensing_rocket.allFinite());

  FeatureSet again;
  featurize(c, FeatureMode::sensing_rocket, cfg, w, again);
  CHECK(again.sensing_rocket == set.sensing_rocket);

  const auto dir = std::filesystem::temp_directory_path() / "avh_feature_roundtrip";
  std::filesystem::create_directories(dir);
  save_archive(features_to_archive(set, 42, FeatureMode::overall, cfg), dir / "features.json");
  const auto back = features_from_archive(load_archive(dir / "features.json"));
  CHECK(back.instances.size() == set.instances.size());
  CHECK(back.audio == set.audio);
  CHECK(back.text == set.text);
  CHECK(back.sensing_rocket == set.sensing_rocket);
  CHECK(back.sensing_vggish.rows() == 0);
  std::filesystem::remove_all(dir);
}

TEST_CASE("sonify seeds differ by participant, time and stream") {
  const auto t = from_unix(1'600'000'000);
  std::set<std::uint64_t> seeds;
  for (const char* id : {"a", "b"})
    for (int h = 0; h < 3; ++h)
      for (int s = 0; s < 7; ++s) seeds.insert(sonify_seed(7, id, t + std::chrono::hours(h), s));
  CHECK(seeds.size() == 42);
  CHECK(sonify_seed(7, "a", t, 0) != sonify_seed(8, "a", t, 0));
}

TEST_CASE("chance baseline takes the modal class") {
  const auto e = chance_baseline({2, 2, 1, 0, 2, 1});
  CHECK(e.scores.top1.micro == doctest::Approx(0.5));
  CHECK(e.scores.top2.micro == doctest::Approx(5.0 / 6.0));
  CHECK_THROWS_AS(chance_baseline({}), InvalidArgument);
}

TEST_CASE("experiment report is reproducible") {
  std::mt19937_64 rng(6);
  const auto inst = make_instances({{"p1", 12}, {"p2", 10}, {"p3", 9}}, rng);
  const auto set = random_features(inst, 6);
  const ExperimentConfig cfg{.epochs = 2, .questions = {Question::loudness, Question::power}};
  const auto a = run_experiment(set, cfg);
  const auto b = run_experiment(set, cfg);
  CHECK(to_json(a).dump() == to_json(b).dump());
  CHECK(a.entries.size() == 2 * 7);
  std::set<std::string> names;
  for (const auto& e : a.entries) {
    names.insert(e.model);
    CHECK(e.test.scores.top2.micro >= e.test.scores.top1.micro);
    CHECK(e.test.n == 8);
  }
  CHECK(names == std::set<std::string>{"audio_text", "sensing_vggish", "sensing_rocket", "hybrid_vggish",
                                       "hybrid_rocket", "overall_vggish", "overall_rocket"});
  CHECK(a.split_hash == temporal_split(inst).membership_hash(inst));

  const auto dir = std::filesystem::temp_directory_path() / "avh_report";
  std::filesystem::create_directories(dir);
  emit_report(a, dir / "a.json");
  emit_report(b, dir / "b.json");
  auto slurp = [](const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  CHECK(slurp(dir / "a.json") == slurp(dir / "b.json"));
  std::filesystem::remove_all(dir);
}

}  // TEST_SUITE
