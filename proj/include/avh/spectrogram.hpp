#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "avh/error.hpp"
#include "avh/fft.hpp"
#include "avh/seed.hpp"

namespace avh::spectrogram {

inline constexpr int kSeriesLength = 24;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// A 24-point hourly series after zero-meaning and min-max scaling to [-1, 1].
template <typename Scalar>
struct NormalizedSeries {
  Eigen::Matrix<Scalar, kSeriesLength, 1> values;
};

/// Subtracts the mean, then maps min -> -1 and max -> +1 linearly. A constant
/// series maps to all zeros.
template <typename Scalar, typename Derived>
NormalizedSeries<Scalar> normalize_series(const Eigen::DenseBase<Derived>& raw) {
  if (raw.size() != kSeriesLength) throw InvalidArgument("normalize_series: expected 24 values");
  Eigen::Matrix<double, kSeriesLength, 1> x;
  for (int i = 0; i < kSeriesLength; ++i) {
    x[i] = static_cast<double>(raw(i));
    if (!std::isfinite(x[i])) throw InvalidArgument("normalize_series: non-finite value at index " + std::to_string(i));
  }
  x.array() -= x.mean();
  const double lo = x.minCoeff();
  const double hi = x.maxCoeff();
  NormalizedSeries<Scalar> out;
  if (!(hi > lo)) {
    out.values.setZero();
    return out;
  }
  const auto scaled = (2.0 * (x.array() - lo) / (hi - lo) - 1.0).cwiseMax(-1.0).cwiseMin(1.0);
  out.values = scaled.template cast<Scalar>().matrix();
  return out;
}

struct TransformConfig {
  double epsilon = 0.1;
  int sample_rate_hz = 44100;
  double sigma2_floor = 1e-6;
  std::uint64_t seed = 0;
};

template <typename Scalar>
struct Waveform {
  Vector<Scalar> samples;
  int sample_rate_hz = 0;

  double seconds() const { return static_cast<double>(samples.size()) / sample_rate_hz; }
};

/// Counter-based standard normals: draw k of the stream keyed by `key` is
/// element k % 2 of the Box-Muller pair built from the splitmix64 outputs at
/// counters 2*(k/2) and 2*(k/2)+1, so any sub-range can be produced
/// independently. The transform runs vectorized in single precision.
template <typename Scalar>
void fill_standard_normal(std::uint64_t key, std::uint64_t first, std::span<Scalar> out) {
  constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;
  constexpr float kTwoPi = 6.2831853071795864f;
  constexpr Eigen::Index kBlock = 4096;
  if (out.empty()) return;
  const std::uint64_t first_pair = first / 2;
  const std::uint64_t last_pair = (first + out.size() - 1) / 2;
  Eigen::ArrayXf u1(kBlock), u2(kBlock), r(kBlock), theta(kBlock), c(kBlock), s(kBlock);
  // Blocks sit on fixed multiples of kBlock and are evaluated whole, so every
  // pair sees the same vectorized code path regardless of `first`.
  for (std::uint64_t block = first_pair - first_pair % kBlock; block <= last_pair; block += kBlock) {
    for (Eigen::Index j = 0; j < kBlock; ++j) {
      const std::uint64_t pair = block + static_cast<std::uint64_t>(j);
      u1[j] = static_cast<float>(unit_interval(mix64(key + (2 * pair) * kGolden)));
      u2[j] = static_cast<float>(unit_interval(mix64(key + (2 * pair + 1) * kGolden)));
    }
    r = (-2.0f * u1.log()).sqrt();
    theta = kTwoPi * u2;
    c = r * theta.cos();
    s = r * theta.sin();
    for (Eigen::Index j = 0; j < kBlock; ++j) {
      const std::uint64_t pair = block + static_cast<std::uint64_t>(j);
      for (std::uint64_t half = 0; half < 2; ++half) {
        const std::uint64_t k = 2 * pair + half;
        if (k < first || k >= first + out.size()) continue;
        out[k - first] = static_cast<Scalar>(half == 0 ? c[j] : s[j]);
      }
    }
  }
}

/// Sonifies a normalized series: point i becomes one second of independent
/// draws from Normal(x_i, max(epsilon * |x_i|, sigma2_floor)).
template <typename Scalar>
Waveform<Scalar> synthesize_waveform(const NormalizedSeries<Scalar>& series, const TransformConfig& cfg) {
  if (!(cfg.epsilon > 0.0) || cfg.sample_rate_hz <= 0 || !(cfg.sigma2_floor > 0.0))
    throw InvalidArgument("synthesize_waveform: invalid transform config");
  const Eigen::Index per = cfg.sample_rate_hz;
  Waveform<Scalar> w;
  w.sample_rate_hz = cfg.sample_rate_hz;
  w.samples.resize(per * kSeriesLength);
  fill_standard_normal<Scalar>(cfg.seed, 0, std::span<Scalar>(w.samples.data(), static_cast<std::size_t>(w.samples.size())));
  for (int i = 0; i < kSeriesLength; ++i) {
    const double mean = static_cast<double>(series.values[i]);
    const double sd = std::sqrt(std::max(cfg.epsilon * std::abs(mean), cfg.sigma2_floor));
    auto seg = w.samples.segment(i * per, per).array();
    seg = seg * static_cast<Scalar>(sd) + static_cast<Scalar>(mean);
  }
  return w;
}

/// Linear interpolation onto a 16 kHz grid: output j samples the source at
/// j * src_rate / 16000; length floor(n * 16000 / src_rate).
template <typename Scalar>
Waveform<Scalar> resample_16k(const Waveform<Scalar>& w) {
  constexpr int kTarget = 16000;
  if (w.sample_rate_hz < kTarget) throw InvalidArgument("resample_16k: source rate below 16 kHz");
  const auto n = w.samples.size();
  Waveform<Scalar> out;
  out.sample_rate_hz = kTarget;
  const auto m = static_cast<Eigen::Index>((static_cast<std::int64_t>(n) * kTarget) / w.sample_rate_hz);
  out.samples.resize(m);
  const std::int64_t src = w.sample_rate_hz;
  for (Eigen::Index j = 0; j < m; ++j) {
    const std::int64_t num = static_cast<std::int64_t>(j) * src;
    const auto k = static_cast<Eigen::Index>(num / kTarget);
    const Scalar frac = static_cast<Scalar>(num % kTarget) / static_cast<Scalar>(kTarget);
    const Scalar a = w.samples[k];
    const Scalar b = k + 1 < n ? w.samples[k + 1] : a;
    out.samples[j] = a + frac * (b - a);
  }
  return out;
}

struct LogMelConfig {
  int sample_rate_hz = 16000;
  double window_seconds = 0.025;
  double hop_seconds = 0.010;
  int mel_bands = 64;
  double lower_edge_hz = 125.0;
  double upper_edge_hz = 7500.0;
  double log_offset = 0.01;

  int window_length() const { return static_cast<int>(std::lround(sample_rate_hz * window_seconds)); }
  int hop_length() const { return static_cast<int>(std::lround(sample_rate_hz * hop_seconds)); }
  int fft_length() const {
    int n = 1;
    while (n < window_length()) n *= 2;
    return n;
  }
};

inline double hertz_to_mel(double hz) { return 1127.0 * std::log1p(hz / 700.0); }

/// (fft_length/2 + 1) x mel_bands triangular weights on the HTK mel scale,
/// band edges equally spaced in mel between the lower and upper edge; the DC
/// bin carries no weight.
template <typename Scalar>
Matrix<Scalar> mel_weights(const LogMelConfig& cfg) {
  const int bins = cfg.fft_length() / 2 + 1;
  const double nyquist = cfg.sample_rate_hz / 2.0;
  if (!(cfg.lower_edge_hz >= 0.0 && cfg.lower_edge_hz < cfg.upper_edge_hz && cfg.upper_edge_hz <= nyquist))
    throw InvalidArgument("mel_weights: invalid band edges");
  const double lo = hertz_to_mel(cfg.lower_edge_hz);
  const double hi = hertz_to_mel(cfg.upper_edge_hz);
  Matrix<Scalar> m = Matrix<Scalar>::Zero(bins, cfg.mel_bands);
  for (int k = 1; k < bins; ++k) {
    const double mel = hertz_to_mel(nyquist * k / (bins - 1));
    for (int b = 0; b < cfg.mel_bands; ++b) {
      const double left = lo + (hi - lo) * b / (cfg.mel_bands + 1);
      const double center = lo + (hi - lo) * (b + 1) / (cfg.mel_bands + 1);
      const double right = lo + (hi - lo) * (b + 2) / (cfg.mel_bands + 1);
      const double w = std::min((mel - left) / (center - left), (right - mel) / (right - center));
      if (w > 0.0) m(k, b) = static_cast<Scalar>(w);
    }
  }
  return m;
}

/// Centre frequency in Hz of mel band b.
inline double mel_band_center_hz(const LogMelConfig& cfg, int band) {
  const double lo = hertz_to_mel(cfg.lower_edge_hz);
  const double hi = hertz_to_mel(cfg.upper_edge_hz);
  const double mel = lo + (hi - lo) * (band + 1) / (cfg.mel_bands + 1);
  return 700.0 * std::expm1(mel / 1127.0);
}

inline Eigen::Index frame_count(Eigen::Index samples, const LogMelConfig& cfg) {
  const int win = cfg.window_length();
  if (samples < win) return 0;
  return (samples - win) / cfg.hop_length() + 1;
}

/// frames x mel_bands matrix of log(mel energy + offset) from the magnitude STFT
/// (periodic Hann window, zero-padded to a power-of-two FFT).
template <typename Scalar>
Matrix<Scalar> log_mel(const Waveform<Scalar>& w, const LogMelConfig& cfg = {}) {
  if (w.sample_rate_hz != cfg.sample_rate_hz) throw InvalidArgument("log_mel: waveform rate does not match config");
  const int win = cfg.window_length();
  const int hop = cfg.hop_length();
  const Eigen::Index frames = frame_count(w.samples.size(), cfg);
  if (frames == 0) throw InvalidArgument("log_mel: input shorter than one analysis window");

  const int nfft = cfg.fft_length();
  Vector<Scalar> hann(win);
  for (int i = 0; i < win; ++i)
    hann[i] = static_cast<Scalar>(0.5 - 0.5 * std::cos(2.0 * EIGEN_PI * i / win));

  RealFft<Scalar> fft(nfft);
  Matrix<Scalar> magnitude(frames, fft.bins());
  Vector<Scalar> buffer = Vector<Scalar>::Zero(nfft);
  for (Eigen::Index f = 0; f < frames; ++f) {
    buffer.head(win) = w.samples.segment(f * hop, win).cwiseProduct(hann);
    fft.magnitude(buffer.data(), magnitude.row(f).data());
  }
  Matrix<Scalar> mel = magnitude * mel_weights<Scalar>(cfg);
  mel.array() = (mel.array() + static_cast<Scalar>(cfg.log_offset)).log();
  return mel;
}

inline constexpr int kPatchFrames = 96;
inline constexpr int kPatchBands = 64;

template <typename Scalar>
using Patch = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Non-overlapping 96-frame blocks; frame hop 10 ms, 64 bands.
template <typename Scalar>
struct LogMelPatchSet {
  std::vector<Patch<Scalar>> patches;
  double frame_hop_seconds = 0.010;
  int bands = kPatchBands;
};

/// Splits into consecutive 96-frame patches, dropping the remainder.
template <typename Scalar>
LogMelPatchSet<Scalar> patchify(const Matrix<Scalar>& log_mel_frames) {
  if (log_mel_frames.cols() != kPatchBands) throw InvalidArgument("patchify: expected 64 mel bands");
  LogMelPatchSet<Scalar> set;
  const Eigen::Index n = log_mel_frames.rows() / kPatchFrames;
  set.patches.reserve(static_cast<std::size_t>(n));
  for (Eigen::Index p = 0; p < n; ++p)
    set.patches.emplace_back(log_mel_frames.middleRows(p * kPatchFrames, kPatchFrames));
  return set;
}

}  // namespace avh::spectrogram
