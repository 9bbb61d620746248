#include <doctest.h>

#include <numbers>
#include <random>

#include "avh/spectrogram.hpp"
#include "oracles.hpp"

using namespace avh;
using namespace avh::spectrogram;

namespace {

Waveform<double> tone(double hz, double seconds, int rate) {
  Waveform<double> w;
  w.sample_rate_hz = rate;
  w.samples.resize(static_cast<Eigen::Index>(seconds * rate));
  for (Eigen::Index i = 0; i < w.samples.size(); ++i) w.samples[i] = std::sin(2.0 * std::numbers::pi * hz * i / rate);
  return w;
}

}  // namespace

TEST_SUITE("spectrogram") {

TEST_CASE("normalize maps the extremes to -1 and +1") {
  Eigen::VectorXd raw(24);
  for (int i = 0; i < 24; ++i) raw[i] = 5.0 * (i % 3);
  const auto s = normalize_series<double>(raw);
  CHECK(s.values.minCoeff() == -1.0);
  CHECK(s.values.maxCoeff() == 1.0);
  for (int i = 0; i < 24; ++i) CHECK(s.values[i] == doctest::Approx(static_cast<double>(i % 3) - 1.0));
}

TEST_CASE("normalize of a constant series is zero") {
  CHECK(normalize_series<double>(Eigen::VectorXd::Constant(24, 3.0)).values.isZero());
  CHECK_THROWS_AS(normalize_series<double>(Eigen::VectorXd::Constant(23, 1.0)), InvalidArgument);
  Eigen::VectorXd bad = Eigen::VectorXd::Zero(24);
  bad[4] = std::nan("");
  CHECK_THROWS_AS(normalize_series<double>(bad), InvalidArgument);
}

TEST_CASE("normalize stays inside [-1, 1] and the zero-mean stage is exact") {
  std::mt19937_64 rng(8);
  std::lognormal_distribution<double> heavy(0.0, 3.0);
  for (int t = 0; t < 200; ++t) {
    Eigen::VectorXd raw(24);
    for (auto& x : raw) x = heavy(rng) * (t % 2 ? -1.0 : 1.0);
    const auto s = normalize_series<double>(raw);
    CHECK(s.values.minCoeff() >= -1.0);
    CHECK(s.values.maxCoeff() <= 1.0);
    const Eigen::VectorXd centred = raw.array() - raw.mean();
    CHECK(std::abs(centred.mean()) <= 1e-12 * std::max(1.0, raw.cwiseAbs().maxCoeff()));
  }
}

TEST_CASE("synthesized waveform moments") {
  NormalizedSeries<double> s;
  s.values.setZero();
  s.values[3] = 0.8;
  s.values[7] = -0.5;
  TransformConfig cfg;
  cfg.seed = 99;
  const auto w = synthesize_waveform(s, cfg);
  CHECK(w.samples.size() == 1'058'400);
  CHECK(w.sample_rate_hz == 44100);
  const auto seg = [&](int i) { return w.samples.segment(i * 44100, 44100); };
  CHECK(std::abs(seg(0).mean()) < 4.0 * std::sqrt(1e-6 / 44100));
  const double mean3 = seg(3).mean();
  CHECK(std::abs(mean3 - 0.8) < 4.0 * std::sqrt(0.08 / 44100));
  const double var3 = (seg(3).array() - mean3).square().sum() / 44099.0;
  CHECK(var3 == doctest::Approx(0.08).epsilon(0.10));
  CHECK(std::abs(seg(7).mean() + 0.5) < 4.0 * std::sqrt(0.05 / 44100));
}

TEST_CASE("synthesis is bit-reproducible and seed-dependent") {
  NormalizedSeries<float> s;
  for (int i = 0; i < 24; ++i) s.values[i] = std::sin(0.3f * i);
  TransformConfig cfg;
  cfg.seed = 1234;
  const auto a = synthesize_waveform(s, cfg);
  const auto b = synthesize_waveform(s, cfg);
  CHECK(a.samples == b.samples);
  cfg.seed = 1235;
  CHECK(synthesize_waveform(s, cfg).samples != a.samples);
}

TEST_CASE("normal stream sub-ranges match the full stream") {
  std::vector<float> all(1001), part(333);
  fill_standard_normal<float>(77, 0, all);
  fill_standard_normal<float>(77, 401, part);
  for (std::size_t i = 0; i < part.size(); ++i) CHECK(part[i] == all[401 + i]);
}

TEST_CASE("resampling to 16 kHz") {
  Waveform<double> flat;
  flat.sample_rate_hz = 44100;
  flat.samples = Eigen::VectorXd::Constant(1'058'400, 0.25);
  const auto r = resample_16k(flat);
  CHECK(r.samples.size() == 384'000);
  CHECK(r.sample_rate_hz == 16000);
  CHECK((r.samples.array() == 0.25).all());

  const auto sine = resample_16k(tone(100.0, 2.0, 44100));
  double worst = 0.0;
  for (Eigen::Index j = 0; j < sine.samples.size(); ++j)
    worst = std::max(worst, std::abs(sine.samples[j] - std::sin(2.0 * std::numbers::pi * 100.0 * j / 16000.0)));
  CHECK(worst < 1e-3);

  Waveform<double> slow;
  slow.sample_rate_hz = 8000;
  slow.samples = Eigen::VectorXd::Zero(100);
  CHECK_THROWS_AS(resample_16k(slow), InvalidArgument);
}

TEST_CASE("log-mel frame arithmetic and floor") {
  Waveform<float> silent;
  silent.sample_rate_hz = 16000;
  silent.samples = Eigen::VectorXf::Zero(384'000);
  const auto m = log_mel(silent);
  CHECK(m.rows() == 2398);
  CHECK(m.cols() == 64);
  CHECK((m.array() - std::log(0.01f)).abs().maxCoeff() < 1e-6f);
  CHECK(std::log(0.01) == doctest::Approx(-4.60517).epsilon(1e-6));

  Waveform<float> tiny;
  tiny.sample_rate_hz = 16000;
  tiny.samples = Eigen::VectorXf::Zero(399);
  CHECK_THROWS_AS(log_mel(tiny), InvalidArgument);
}

TEST_CASE("a pure tone at a band centre peaks in that band") {
  const LogMelConfig cfg;
  for (int band : {24, 36, 48, 60}) {
    const auto m = log_mel(tone(mel_band_center_hz(cfg, band), 0.5, 16000), cfg);
    Eigen::Index arg = 0;
    m.colwise().mean().maxCoeff(&arg);
    CAPTURE(band);
    CHECK(arg == band);
  }
}

TEST_CASE("mel filters are triangles inside the band edges") {
  const LogMelConfig cfg;
  const auto w = mel_weights<double>(cfg);
  CHECK(w.rows() == 257);
  CHECK(w.cols() == 64);
  CHECK(w.row(0).isZero());
  CHECK(w.minCoeff() >= 0.0);
  CHECK(w.maxCoeff() <= 1.0);
  for (int b = 0; b < 64; ++b) CHECK(w.col(b).sum() > 0.0);
}

TEST_CASE("patchify drops the remainder") {
  Matrix<float> frames = Matrix<float>::Random(2398, 64);
  CHECK(patchify(frames).patches.size() == 24);
  Matrix<float> exact = Matrix<float>::Random(96, 64);
  const auto one = patchify(exact);
  REQUIRE(one.patches.size() == 1);
  CHECK(one.patches[0] == exact);
  CHECK(patchify(Matrix<float>(Matrix<float>::Random(95, 64))).patches.empty());
  CHECK_THROWS_AS(patchify(Matrix<float>(Matrix<float>::Zero(96, 63))), InvalidArgument);
}

TEST_CASE("brighter slices follow larger magnitudes") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  double total = 0.0;
  const int seeds = 3;
  for (int s = 0; s < seeds; ++s) {
    Eigen::VectorXd raw(24);
    for (auto& x : raw) x = u(rng);
    const auto series = normalize_series<float>(raw);
    TransformConfig cfg;
    cfg.seed = static_cast<std::uint64_t>(s) + 100;
    const auto mel = log_mel(resample_16k(synthesize_waveform(series, cfg)));
    std::vector<double> mag, energy;
    for (int i = 0; i < 24; ++i) {
      mag.push_back(std::abs(series.values[i]));
      const Eigen::Index first = i * 100, last = std::min<Eigen::Index>(mel.rows(), (i + 1) * 100 - 3);
      energy.push_back(mel.middleRows(first, last - first).mean());
    }
    total += oracle::spearman(mag, energy);
  }
  CHECK(total / seeds > 0.8);
}

}
