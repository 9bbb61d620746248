#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "avh/mobility.hpp"

namespace avh::rocket {

struct RandomKernel {
  std::vector<double> weights;  // length 7, 9 or 11
  double bias = 0.0;
  int dilation = 1;
  bool padding = false;

  int length() const { return static_cast<int>(weights.size()); }
};

struct KernelConfig {
  int n_kernels = 64;
  int series_length = 24;
  std::vector<int> lengths{7, 9, 11};
  /// One kernel set shared by all streams (default) or one set per stream.
  bool per_stream = false;
};

/// Lengths uniform over {7, 9, 11}; weights standard normal then mean-centred;
/// bias uniform on [-1, 1]; dilation floor(2^a) with a uniform on
/// [0, log2((L - 1) / (length - 1))]; padding with probability 1/2.
std::vector<RandomKernel> sample_kernels(std::uint64_t seed, const KernelConfig& config = {});

/// Output length of apply_kernel; throws when no valid position exists.
int output_length(int series_length, const RandomKernel& kernel);

/// Dilated sliding dot product plus bias, optionally zero-padded by
/// (length - 1) * dilation / 2 on each side.
template <typename Derived>
Eigen::VectorXd apply_kernel(const Eigen::MatrixBase<Derived>& series, const RandomKernel& k) {
  const int n = static_cast<int>(series.size());
  const int out_len = output_length(n, k);
  const int pad = k.padding ? (k.length() - 1) * k.dilation / 2 : 0;
  Eigen::VectorXd out(out_len);
  for (int j = 0; j < out_len; ++j) {
    double acc = k.bias;
    for (int i = 0; i < k.length(); ++i) {
      const int idx = j + i * k.dilation - pad;
      if (idx >= 0 && idx < n) acc += k.weights[static_cast<std::size_t>(i)] * static_cast<double>(series(idx));
    }
    out[j] = acc;
  }
  return out;
}

struct PooledFeatures {
  double max = 0.0;
  double ppv = 0.0;  // fraction of strictly positive outputs
};

template <typename Derived>
PooledFeatures pool(const Eigen::MatrixBase<Derived>& conv) {
  return {conv.maxCoeff(), static_cast<double>((conv.array() > 0.0).count()) / static_cast<double>(conv.size())};
}

/// 2 * n_kernels features for one series: [max_0, ppv_0, max_1, ppv_1, ...].
Eigen::VectorXd transform_series(const Eigen::Ref<const Eigen::VectorXd>& series,
                                 const std::vector<RandomKernel>& kernels);

/// One row per stream, 2 * n_kernels columns. `kernel_sets` holds one set
/// shared by all streams, or one per stream.
Eigen::MatrixXd rocket_features(const mobility::SensingWindow& window,
                                const std::vector<std::vector<RandomKernel>>& kernel_sets);

/// Kernel sets as laid out by KernelConfig::per_stream.
std::vector<std::vector<RandomKernel>> sample_kernel_sets(std::uint64_t seed, const KernelConfig& config = {});

}  // namespace avh::rocket
