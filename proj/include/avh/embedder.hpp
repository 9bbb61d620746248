#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "avh/error.hpp"
#include "avh/spectrogram.hpp"
#include "avh/tensor_archive.hpp"

namespace avh::embedder {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Channel plan for the four conv blocks (1, 1, 2 and 2 convolutions) and the
/// three fully connected layers. width_divisor shrinks every conv channel count
/// and the hidden fc widths; the embedding width (last fc) is never divided.
struct EmbedderConfig {
  std::vector<int> conv_channels{64, 128, 256, 256, 512, 512};
  std::vector<int> fc_sizes{4096, 4096, 128};
  int width_divisor = 1;
  std::uint64_t seed = 0;

  int conv_width(std::size_t i) const;
  int fc_width(std::size_t i) const;
  int embedding_width() const { return fc_sizes.back(); }
  /// Flattened width after the last pool for a 96x64 patch.
  int flatten_width() const;
  void validate() const;
};

inline constexpr int kConvLayers = 6;
inline constexpr int kFcLayers = 3;
/// Index of the last convolution in each block; a 2x2 max pool follows it.
inline constexpr int kBlockEnds[] = {0, 1, 3, 5};

const std::vector<std::string>& conv_names();
const std::vector<std::string>& fc_names();

/// Every tensor an archive must carry for `cfg`, with its shape.
std::vector<std::pair<std::string, std::vector<std::int64_t>>> expected_tensors(const EmbedderConfig& cfg);

/// A 3x3 same-padded convolution: weight is out x (in * 9) with column
/// index (c * 3 + ky) * 3 + kx.
template <typename Scalar>
struct ConvLayer {
  Matrix<Scalar> weight;
  Vector<Scalar> bias;
};

template <typename Scalar>
struct DenseLayer {
  Matrix<Scalar> weight;  // out x in
  Vector<Scalar> bias;
};

template <typename Scalar>
struct EmbedderWeights {
  EmbedderConfig config;
  std::vector<ConvLayer<Scalar>> conv;
  std::vector<DenseLayer<Scalar>> fc;
};

/// Feature map stored channels x (height * width), spatial index y * width + x.
template <typename Scalar>
struct FeatureMap {
  Matrix<Scalar> data;
  int height = 0;
  int width = 0;

  int channels() const { return static_cast<int>(data.rows()); }
};

/// 3x3 convolution, stride 1, zero padding 1 (spatial size preserved), plus
/// bias. No activation.
template <typename Scalar>
FeatureMap<Scalar> conv3x3_same(const FeatureMap<Scalar>& in, const ConvLayer<Scalar>& layer) {
  const int C = in.channels(), H = in.height, W = in.width;
  if (layer.weight.cols() != C * 9) throw InvalidArgument("conv3x3_same: weight does not match input channels");
  Matrix<Scalar> cols = Matrix<Scalar>::Zero(C * 9, H * W);
  for (int c = 0; c < C; ++c) {
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const int row = (c * 3 + ky) * 3 + kx;
        for (int y = 0; y < H; ++y) {
          const int sy = y + ky - 1;
          if (sy < 0 || sy >= H) continue;
          const int x0 = std::max(0, 1 - kx), x1 = std::min(W, W + 1 - kx);
          for (int x = x0; x < x1; ++x) cols(row, y * W + x) = in.data(c, sy * W + x + kx - 1);
        }
      }
    }
  }
  FeatureMap<Scalar> out;
  out.height = H;
  out.width = W;
  out.data.noalias() = layer.weight * cols;
  out.data.colwise() += layer.bias;
  return out;
}

/// 2x2 max pool, stride 2; odd trailing rows/columns are dropped.
template <typename Scalar>
FeatureMap<Scalar> max_pool2x2(const FeatureMap<Scalar>& in) {
  FeatureMap<Scalar> out;
  out.height = in.height / 2;
  out.width = in.width / 2;
  out.data.resize(in.channels(), out.height * out.width);
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      const int a = (2 * y) * in.width + 2 * x, b = a + in.width;
      out.data.col(y * out.width + x) =
          in.data.col(a).cwiseMax(in.data.col(a + 1)).cwiseMax(in.data.col(b)).cwiseMax(in.data.col(b + 1));
    }
  }
  return out;
}

/// Seeded He-style initialization: weights ~ Normal(0, 2 / fan_in), zero biases.
template <typename Scalar>
EmbedderWeights<Scalar> random_weights(const EmbedderConfig& cfg) {
  cfg.validate();
  EmbedderWeights<Scalar> w;
  w.config = cfg;
  std::mt19937_64 rng(cfg.seed);
  auto fill = [&](Matrix<Scalar>& m, int fan_in) {
    std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / fan_in));
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(normal(rng));
  };
  int in = 1;
  for (std::size_t i = 0; i < kConvLayers; ++i) {
    const int out = cfg.conv_width(i);
    ConvLayer<Scalar> layer{Matrix<Scalar>(out, in * 9), Vector<Scalar>::Zero(out)};
    fill(layer.weight, in * 9);
    w.conv.push_back(std::move(layer));
    in = out;
  }
  in = cfg.flatten_width();
  for (std::size_t i = 0; i < kFcLayers; ++i) {
    const int out = cfg.fc_width(i);
    DenseLayer<Scalar> layer{Matrix<Scalar>(out, in), Vector<Scalar>::Zero(out)};
    fill(layer.weight, in);
    w.fc.push_back(std::move(layer));
    in = out;
  }
  return w;
}

template <typename Scalar>
EmbedderWeights<Scalar> zero_weights(const EmbedderConfig& cfg) {
  auto w = random_weights<Scalar>(cfg);
  for (auto& l : w.conv) l.weight.setZero();
  for (auto& l : w.fc) l.weight.setZero();
  return w;
}

/// Archive layout: "<layer>.weight" [out, in, 3, 3] for convolutions and
/// [out, in] for fc layers, "<layer>.bias" [out].
template <typename Scalar>
TensorArchive to_archive(const EmbedderWeights<Scalar>& w) {
  TensorArchive a;
  auto put = [&](const std::string& name, std::vector<std::int64_t> shape, const auto& m) {
    Tensor t{std::move(shape), {}};
    t.data.reserve(static_cast<std::size_t>(m.size()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) t.data.push_back(static_cast<float>(m(r, c)));
    a.put(name, std::move(t));
  };
  for (std::size_t i = 0; i < w.conv.size(); ++i) {
    const auto& l = w.conv[i];
    put(conv_names()[i] + ".weight", {l.weight.rows(), l.weight.cols() / 9, 3, 3}, l.weight);
    put(conv_names()[i] + ".bias", {l.bias.rows()}, l.bias.transpose());
  }
  for (std::size_t i = 0; i < w.fc.size(); ++i) {
    const auto& l = w.fc[i];
    put(fc_names()[i] + ".weight", {l.weight.rows(), l.weight.cols()}, l.weight);
    put(fc_names()[i] + ".bias", {l.bias.rows()}, l.bias.transpose());
  }
  auto& meta = a.metadata();
  meta["kind"] = "audio_embedder";
  meta["conv_channels"] = w.config.conv_channels;
  meta["fc_sizes"] = w.config.fc_sizes;
  meta["width_divisor"] = w.config.width_divisor;
  return a;
}

/// Shape-checks every required tensor against `cfg` and materializes them.
template <typename Scalar>
EmbedderWeights<Scalar> from_archive(const TensorArchive& a, const EmbedderConfig& cfg) {
  cfg.validate();
  for (const auto& [name, shape] : expected_tensors(cfg)) a.expect(name, shape);
  EmbedderWeights<Scalar> w;
  w.config = cfg;
  auto vec = [&](const std::string& name) {
    const auto& t = a.at(name);
    return Eigen::Map<const Eigen::VectorXf>(t.data.data(), static_cast<Eigen::Index>(t.data.size()))
        .template cast<Scalar>()
        .eval();
  };
  auto mat = [&](const std::string& name, Eigen::Index rows, Eigen::Index cols) {
    const auto& t = a.at(name);
    using RowMajorF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    return Eigen::Map<const RowMajorF>(t.data.data(), rows, cols).template cast<Scalar>().eval();
  };
  int in = 1;
  for (std::size_t i = 0; i < kConvLayers; ++i) {
    const int out = cfg.conv_width(i);
    w.conv.push_back({mat(conv_names()[i] + ".weight", out, in * 9), vec(conv_names()[i] + ".bias")});
    in = out;
  }
  in = cfg.flatten_width();
  for (std::size_t i = 0; i < kFcLayers; ++i) {
    const int out = cfg.fc_width(i);
    w.fc.push_back({mat(fc_names()[i] + ".weight", out, in), vec(fc_names()[i] + ".bias")});
    in = out;
  }
  return w;
}

template <typename Scalar>
EmbedderWeights<Scalar> load_weight_archive(const std::filesystem::path& manifest, const EmbedderConfig& cfg) {
  return from_archive<Scalar>(load_archive(manifest), cfg);
}

/// Conv trunk for one 96x64 patch: returns the flattened map in (y, x, channel)
/// order.
template <typename Scalar>
Vector<Scalar> conv_features(const spectrogram::Patch<Scalar>& patch, const EmbedderWeights<Scalar>& w) {
  if (patch.rows() != spectrogram::kPatchFrames || patch.cols() != spectrogram::kPatchBands)
    throw InvalidArgument("embed: patch must be 96 x 64, got " + std::to_string(patch.rows()) + " x " +
                          std::to_string(patch.cols()));
  FeatureMap<Scalar> map;
  map.height = static_cast<int>(patch.rows());
  map.width = static_cast<int>(patch.cols());
  map.data = Eigen::Map<const Matrix<Scalar>>(patch.data(), 1, patch.size());
  int block = 0;
  for (int i = 0; i < kConvLayers; ++i) {
    map = conv3x3_same(map, w.conv[static_cast<std::size_t>(i)]);
    map.data = map.data.cwiseMax(Scalar(0));
    if (i == kBlockEnds[block]) {
      map = max_pool2x2(map);
      ++block;
    }
  }
  return Eigen::Map<const Vector<Scalar>>(map.data.data(), map.data.size());
}

/// Embeddings for a batch of patches, one row per patch.
template <typename Scalar>
Matrix<Scalar> embed_patches(const std::vector<spectrogram::Patch<Scalar>>& patches, const EmbedderWeights<Scalar>& w) {
  Matrix<Scalar> x(w.config.flatten_width(), static_cast<Eigen::Index>(patches.size()));
  for (std::size_t p = 0; p < patches.size(); ++p) x.col(static_cast<Eigen::Index>(p)) = conv_features(patches[p], w);
  for (std::size_t i = 0; i < w.fc.size(); ++i) {
    Matrix<Scalar> y = w.fc[i].weight * x;
    y.colwise() += w.fc[i].bias;
    if (i + 1 < w.fc.size()) y = y.cwiseMax(Scalar(0));
    x = std::move(y);
  }
  return x.transpose();
}

template <typename Scalar>
Vector<Scalar> embed_patch(const spectrogram::Patch<Scalar>& patch, const EmbedderWeights<Scalar>& w) {
  return embed_patches(std::vector<spectrogram::Patch<Scalar>>{patch}, w).row(0).transpose();
}

/// Mean of the per-patch embeddings.
template <typename Scalar>
Vector<Scalar> embed_average(const spectrogram::LogMelPatchSet<Scalar>& set, const EmbedderWeights<Scalar>& w) {
  if (set.patches.empty()) throw InvalidArgument("embed_average: empty patch set (input shorter than 0.96 s)");
  return embed_patches(set.patches, w).colwise().mean().transpose();
}

}  // namespace avh::embedder
