#include "avh/rocket.hpp"

#include <cmath>
#include <random>

#include "avh/error.hpp"
#include "avh/seed.hpp"

namespace avh::rocket {

std::vector<RandomKernel> sample_kernels(std::uint64_t seed, const KernelConfig& config) {
  if (config.series_length < 11) throw InvalidArgument("sample_kernels: series length must be >= 11");
  if (config.n_kernels < 1 || config.lengths.empty()) throw InvalidArgument("sample_kernels: empty kernel plan");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick_length(0, config.lengths.size() - 1);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  std::vector<RandomKernel> kernels;
  kernels.reserve(static_cast<std::size_t>(config.n_kernels));
  for (int n = 0; n < config.n_kernels; ++n) {
    RandomKernel k;
    const int length = config.lengths[pick_length(rng)];
    k.weights.resize(static_cast<std::size_t>(length));
    double mean = 0.0;
    for (auto& w : k.weights) mean += (w = normal(rng));
    mean /= length;
    for (auto& w : k.weights) w -= mean;
    k.bias = 2.0 * unit(rng) - 1.0;
    const double max_exponent = std::log2(static_cast<double>(config.series_length - 1) / (length - 1));
    k.dilation = std::max(1, static_cast<int>(std::floor(std::pow(2.0, unit(rng) * max_exponent))));
    k.padding = unit(rng) < 0.5;
    kernels.push_back(std::move(k));
  }
  return kernels;
}

int output_length(int series_length, const RandomKernel& k) {
  const int span = (k.length() - 1) * k.dilation;
  if (k.length() < 1 || k.dilation < 1 || span >= series_length)
    throw InvalidArgument("apply_kernel: dilation " + std::to_string(k.dilation) + " inadmissible for length " +
                          std::to_string(k.length()) + " on a series of " + std::to_string(series_length));
  return series_length - span + (k.padding ? span : 0);
}

Eigen::VectorXd transform_series(const Eigen::Ref<const Eigen::VectorXd>& series,
                                 const std::vector<RandomKernel>& kernels) {
  Eigen::VectorXd out(2 * static_cast<Eigen::Index>(kernels.size()));
  for (std::size_t i = 0; i < kernels.size(); ++i) {
    const auto f = pool(apply_kernel(series, kernels[i]));
    out[2 * static_cast<Eigen::Index>(i)] = f.max;
    out[2 * static_cast<Eigen::Index>(i) + 1] = f.ppv;
  }
  return out;
}

Eigen::MatrixXd rocket_features(const mobility::SensingWindow& window,
                                const std::vector<std::vector<RandomKernel>>& kernel_sets) {
  if (kernel_sets.size() != 1 && kernel_sets.size() != mobility::kStreams)
    throw InvalidArgument("rocket_features: expected 1 or 7 kernel sets");
  const auto width = static_cast<Eigen::Index>(2 * kernel_sets.front().size());
  Eigen::MatrixXd out(mobility::kStreams, width);
  for (int s = 0; s < mobility::kStreams; ++s) {
    const auto& kernels = kernel_sets.size() == 1 ? kernel_sets.front() : kernel_sets[static_cast<std::size_t>(s)];
    if (static_cast<Eigen::Index>(2 * kernels.size()) != width)
      throw InvalidArgument("rocket_features: kernel sets differ in size");
    const Eigen::VectorXd series = window.values.row(s).transpose();
    out.row(s) = transform_series(series, kernels).transpose();
  }
  return out;
}

std::vector<std::vector<RandomKernel>> sample_kernel_sets(std::uint64_t seed, const KernelConfig& config) {
  std::vector<std::vector<RandomKernel>> sets;
  if (!config.per_stream) {
    sets.push_back(sample_kernels(seed, config));
  } else {
    for (int s = 0; s < mobility::kStreams; ++s)
      sets.push_back(sample_kernels(mix64(seed ^ static_cast<std::uint64_t>(s + 1)), config));
  }
  return sets;
}

}  // namespace avh::rocket
