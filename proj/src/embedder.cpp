#include "avh/embedder.hpp"

namespace avh::embedder {

int EmbedderConfig::conv_width(std::size_t i) const {
  return std::max(1, conv_channels.at(i) / width_divisor);
}

int EmbedderConfig::fc_width(std::size_t i) const {
  if (i + 1 == fc_sizes.size()) return fc_sizes.back();
  return std::max(1, fc_sizes.at(i) / width_divisor);
}

int EmbedderConfig::flatten_width() const {
  int h = spectrogram::kPatchFrames, w = spectrogram::kPatchBands;
  for (int b = 0; b < 4; ++b) {
    h /= 2;
    w /= 2;
  }
  return h * w * conv_width(kConvLayers - 1);
}

void EmbedderConfig::validate() const {
  if (conv_channels.size() != kConvLayers) throw InvalidArgument("embedder: expected 6 conv channel counts");
  if (fc_sizes.size() != kFcLayers) throw InvalidArgument("embedder: expected 3 fc sizes");
  if (width_divisor < 1) throw InvalidArgument("embedder: width_divisor must be >= 1");
  for (int c : conv_channels)
    if (c < 1) throw InvalidArgument("embedder: channel counts must be positive");
  for (int f : fc_sizes)
    if (f < 1) throw InvalidArgument("embedder: fc sizes must be positive");
}

const std::vector<std::string>& conv_names() {
  static const std::vector<std::string> names{"conv1", "conv2", "conv3_1", "conv3_2", "conv4_1", "conv4_2"};
  return names;
}

const std::vector<std::string>& fc_names() {
  static const std::vector<std::string> names{"fc1_1", "fc1_2", "fc2"};
  return names;
}

std::vector<std::pair<std::string, std::vector<std::int64_t>>> expected_tensors(const EmbedderConfig& cfg) {
  std::vector<std::pair<std::string, std::vector<std::int64_t>>> out;
  std::int64_t in = 1;
  for (std::size_t i = 0; i < kConvLayers; ++i) {
    const std::int64_t c = cfg.conv_width(i);
    out.push_back({conv_names()[i] + ".weight", {c, in, 3, 3}});
    out.push_back({conv_names()[i] + ".bias", {c}});
    in = c;
  }
  in = cfg.flatten_width();
  for (std::size_t i = 0; i < kFcLayers; ++i) {
    const std::int64_t f = cfg.fc_width(i);
    out.push_back({fc_names()[i] + ".weight", {f, in}});
    out.push_back({fc_names()[i] + ".bias", {f}});
    in = f;
  }
  return out;
}

}  // namespace avh::embedder
