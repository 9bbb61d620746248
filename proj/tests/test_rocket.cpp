#include <doctest.h>

#include <random>

#include "avh/rocket.hpp"
#include "oracles.hpp"

using namespace avh;
using namespace avh::rocket;

TEST_SUITE("rocket") {

TEST_CASE("hand dot product") {
  RandomKernel k{{1.0, 1.0, 1.0}, 0.0, 1, false};
  const auto out = apply_kernel(Eigen::Vector3d(1, 2, 3), k);
  REQUIRE(out.size() == 1);
  CHECK(out[0] == 6.0);
}

TEST_CASE("zero weights give the bias everywhere") {
  RandomKernel k{std::vector<double>(9, 0.0), 0.37, 2, true};
  const auto out = apply_kernel(Eigen::VectorXd::LinSpaced(24, -3, 5), k);
  CHECK(out.size() == 24);
  CHECK((out.array() == 0.37).all());
}

TEST_CASE("output length formula") {
  RandomKernel k{std::vector<double>(9, 1.0), 0.0, 2, false};
  CHECK(output_length(24, k) == 8);
  k.padding = true;
  CHECK(output_length(24, k) == 24);
  k.dilation = 3;
  k.padding = false;
  CHECK_THROWS_AS(output_length(24, k), InvalidArgument);
  CHECK_THROWS_AS(output_length(24, RandomKernel{std::vector<double>(11, 1.0), 0.0, 3, false}), InvalidArgument);
}

TEST_CASE("pooling of a hand conv output") {
  const auto p = pool(Eigen::Vector3d(-1, 4, 2));
  CHECK(p.max == 4.0);
  CHECK(p.ppv == doctest::Approx(2.0 / 3.0));
  CHECK(pool(Eigen::Vector3d(-1, -4, 0)).ppv == 0.0);
}

TEST_CASE("sampled kernels") {
  const auto ks = sample_kernels(5);
  CHECK(ks.size() == 64);
  std::array<int, 12> lengths{};
  for (const auto& k : ks) {
    CHECK((k.length() == 7 || k.length() == 9 || k.length() == 11));
    double sum = 0.0;
    for (double w : k.weights) sum += w;
    CHECK(std::abs(sum / k.length()) <= 1e-12);
    CHECK(k.bias >= -1.0);
    CHECK(k.bias <= 1.0);
    CHECK(k.dilation >= 1);
    CHECK(k.dilation <= 23 / (k.length() - 1));
    CHECK_NOTHROW(output_length(24, k));
    ++lengths[static_cast<std::size_t>(k.length())];
  }
  CHECK(lengths[7] > 0);
  CHECK(lengths[9] > 0);
  CHECK(lengths[11] > 0);
  const auto again = sample_kernels(5);
  for (std::size_t i = 0; i < ks.size(); ++i) {
    CHECK(again[i].weights == ks[i].weights);
    CHECK(again[i].bias == ks[i].bias);
    CHECK(again[i].dilation == ks[i].dilation);
    CHECK(again[i].padding == ks[i].padding);
  }
  CHECK(sample_kernels(6)[0].weights != ks[0].weights);
}

TEST_CASE("apply_kernel equals the brute-force oracle") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n(0.0, 2.0);
  for (int trial = 0; trial < 200; ++trial) {
    const auto kernels = sample_kernels(static_cast<std::uint64_t>(trial), {.n_kernels = 4});
    std::vector<double> series(24);
    for (auto& x : series) x = n(rng);
    const Eigen::Map<const Eigen::VectorXd> s(series.data(), 24);
    for (const auto& k : kernels) {
      const auto got = apply_kernel(s, k);
      const auto want = oracle::apply_kernel(series, k);
      REQUIRE(static_cast<std::size_t>(got.size()) == want.size());
      for (std::size_t j = 0; j < want.size(); ++j) CHECK(std::abs(got[static_cast<Eigen::Index>(j)] - want[j]) <= 1e-12);
    }
  }
}

TEST_CASE("window features are 7 x 128 with bounded ppv") {
  mobility::SensingWindow w;
  std::mt19937_64 rng(4);
  std::exponential_distribution<double> e(0.1);
  for (Eigen::Index i = 0; i < w.values.size(); ++i) w.values.data()[i] = e(rng);
  const auto sets = sample_kernel_sets(9);
  REQUIRE(sets.size() == 1);
  const auto f = rocket_features(w, sets);
  CHECK(f.rows() == 7);
  CHECK(f.cols() == 128);
  CHECK(f.allFinite());
  for (Eigen::Index r = 0; r < 7; ++r)
    for (int k = 0; k < 64; ++k) {
      const double ppv = f(r, 2 * k + 1);
      CHECK(ppv >= 0.0);
      CHECK(ppv <= 1.0);
      const auto conv = apply_kernel(w.values.row(r).transpose(), sets[0][static_cast<std::size_t>(k)]);
      CHECK(f(r, 2 * k) == conv.maxCoeff());
    }
  CHECK(rocket_features(w, sample_kernel_sets(9)) == f);

  KernelConfig per;
  per.per_stream = true;
  const auto seven = sample_kernel_sets(9, per);
  CHECK(seven.size() == 7);
  CHECK(rocket_features(w, seven).cols() == 128);
}

}
