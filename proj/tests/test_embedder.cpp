#include <doctest.h>

#include <filesystem>
#include <random>

#include "avh/embedder.hpp"
#include "oracles.hpp"

using namespace avh;
using namespace avh::embedder;

namespace {

spectrogram::Patch<float> random_patch(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> n(-2.0f, 1.5f);
  spectrogram::Patch<float> p(96, 64);
  for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = n(rng);
  return p;
}

EmbedderConfig small(int divisor = 8, std::uint64_t seed = 3) {
  EmbedderConfig c;
  c.width_divisor = divisor;
  c.seed = seed;
  return c;
}

}  // namespace

TEST_SUITE("embedder") {

TEST_CASE("convolution and pooling match the sliding-window oracle") {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    const int C = 1 + trial % 3, O = 1 + trial % 4;
    std::vector<Eigen::MatrixXd> planes(static_cast<std::size_t>(C), Eigen::MatrixXd(8, 8));
    FeatureMap<double> map;
    map.height = 8;
    map.width = 8;
    map.data.resize(C, 64);
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) map.data(c, y * 8 + x) = planes[static_cast<std::size_t>(c)](y, x) = n(rng);
    ConvLayer<double> layer{Eigen::MatrixXd(O, C * 9), Eigen::VectorXd(O)};
    for (Eigen::Index i = 0; i < layer.weight.size(); ++i) layer.weight.data()[i] = n(rng);
    for (auto& b : layer.bias) b = n(rng);

    const auto got = conv3x3_same(map, layer);
    const auto want = oracle::conv3x3(planes, layer.weight, layer.bias);
    REQUIRE(got.height == 8);
    REQUIRE(got.width == 8);
    const auto pooled = max_pool2x2(got);
    for (int o = 0; o < O; ++o) {
      const auto& w = want[static_cast<std::size_t>(o)];
      const auto wp = oracle::max_pool2x2(oracle::plane(got.data, o, 8, 8));
      for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) CHECK(std::abs(got.data(o, y * 8 + x) - w(y, x)) <= 1e-9);
      for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) CHECK(pooled.data(o, y * 4 + x) == wp(y, x));
    }
  }
}

TEST_CASE("shape relations under width divisors") {
  for (int d : {1, 8, 64}) {
    const auto cfg = small(d);
    CAPTURE(d);
    CHECK(cfg.embedding_width() == 128);
    CHECK(cfg.flatten_width() == 6 * 4 * (512 / d));
    const auto tensors = expected_tensors(cfg);
    CHECK(tensors.size() == 18);
    CHECK(tensors.front().second == std::vector<std::int64_t>{64 / d, 1, 3, 3});
  }
  CHECK(small(1).flatten_width() == 12288);
}

TEST_CASE("embedding width and determinism") {
  const auto w = random_weights<float>(small());
  const auto p = random_patch(1);
  const auto a = embed_patch(p, w);
  CHECK(a.size() == 128);
  CHECK(a.allFinite());
  CHECK(embed_patch(p, w) == a);
  CHECK(embed_patch(p, random_weights<float>(small())) == a);
  CHECK(embed_patch(p, random_weights<float>(small(8, 4))) != a);
  CHECK_THROWS_AS(embed_patch(spectrogram::Patch<float>(spectrogram::Patch<float>::Zero(95, 64)), w), InvalidArgument);
}

TEST_CASE("zero weights give a zero embedding") {
  const auto w = zero_weights<float>(small());
  CHECK(embed_patch(random_patch(2), w).isZero());
}

TEST_CASE("averaging over patches") {
  const auto w = random_weights<float>(small());
  spectrogram::LogMelPatchSet<float> one;
  one.patches = {random_patch(5)};
  CHECK(embed_average(one, w) == embed_patch(one.patches[0], w));

  spectrogram::LogMelPatchSet<float> many;
  many.patches = {random_patch(6), random_patch(7), random_patch(8)};
  const auto fwd = embed_average(many, w);
  std::swap(many.patches[0], many.patches[2]);
  CHECK((embed_average(many, w) - fwd).cwiseAbs().maxCoeff() < 1e-5f);

  CHECK_THROWS_AS(embed_average(spectrogram::LogMelPatchSet<float>{}, w), InvalidArgument);
}

TEST_CASE("opposite embeddings average to zero") {
  // With a linear final layer, negating the last weights and bias negates the
  // embedding; stacking both networks' embeddings gives e and -e.
  auto w = random_weights<double>(small(16));
  auto neg = w;
  neg.fc.back().weight *= -1.0;
  neg.fc.back().bias *= -1.0;
  spectrogram::Patch<double> p = random_patch(9).cast<double>();
  const auto e = embed_patch(p, w);
  const auto minus = embed_patch(p, neg);
  CHECK(((e + minus) / 2.0).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("weight archives round-trip and are shape checked") {
  const auto cfg = small();
  const auto w = random_weights<float>(cfg);
  const auto dir = std::filesystem::temp_directory_path() / "avh_embedder_archive";
  std::filesystem::create_directories(dir);
  save_archive(to_archive(w), dir / "w.json");
  const auto back = load_weight_archive<float>(dir / "w.json", cfg);
  for (std::size_t i = 0; i < w.conv.size(); ++i) {
    CHECK(back.conv[i].weight == w.conv[i].weight);
    CHECK(back.conv[i].bias == w.conv[i].bias);
  }
  for (std::size_t i = 0; i < w.fc.size(); ++i) CHECK(back.fc[i].weight == w.fc[i].weight);

  auto missing = to_archive(w);
  TensorArchive pruned;
  for (const auto& [name, t] : missing.tensors())
    if (name != "conv1.weight") pruned.put(name, t);
  try {
    from_archive<float>(pruned, cfg);
    FAIL("expected a missing-tensor error");
  } catch (const ArchiveError& e) {
    CHECK(std::string(e.what()).find("conv1.weight") != std::string::npos);
  }

  auto wrong = to_archive(w);
  TensorArchive five;
  for (const auto& [name, t] : wrong.tensors()) {
    if (name == "conv1.weight") {
      Tensor k{{t.shape[0], 1, 5, 5}, std::vector<float>(static_cast<std::size_t>(t.shape[0] * 25), 0.0f)};
      five.put(name, k);
    } else {
      five.put(name, t);
    }
  }
  try {
    from_archive<float>(five, cfg);
    FAIL("expected a shape error");
  } catch (const ArchiveError& e) {
    const std::string what = e.what();
    CHECK(what.find("conv1.weight") != std::string::npos);
    CHECK(what.find("3") != std::string::npos);
    CHECK(what.find("5") != std::string::npos);
  }
  std::filesystem::remove_all(dir);
}

}
