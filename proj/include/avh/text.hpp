#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "avh/cohort.hpp"

namespace avh::text {

using TranscriptVector = Eigen::VectorXd;  // width 768

/// Deterministic stand-in for a 12-layer, 768-wide token encoder. Layer l of
/// token t is 768 standard normals scaled by 1/sqrt(768) (unit expected norm),
/// drawn from the counter-based normal stream keyed by
///   derive_seed(seed, "stub-encoder", fnv1a(t), l).
/// Identical strings share one LayerStack object.
class StubEncoder {
 public:
  explicit StubEncoder(std::uint64_t seed) : seed_(seed) {}

  std::shared_ptr<const cohort::LayerStack> encode_token(const std::string& token);

  /// Throws InvalidArgument on an empty transcript or an empty sentence.
  cohort::DiaryTokenStack encode(const std::vector<std::vector<std::string>>& transcript);

 private:
  std::uint64_t seed_;
  std::map<std::string, std::shared_ptr<const cohort::LayerStack>> cache_;
};

/// Free-function form of StubEncoder::encode.
cohort::DiaryTokenStack stub_encode(const std::vector<std::vector<std::string>>& transcript, std::uint64_t seed);

/// Per token, the sum of its 12 layer vectors; then the mean over tokens.
Eigen::VectorXd sentence_vector(const cohort::Sentence& sentence);

/// Mean over sentence vectors.
TranscriptVector transcript_vector(const std::vector<Eigen::VectorXd>& sentence_vectors);

/// sentence_vector for each sentence, then transcript_vector.
TranscriptVector transcript_vector(const cohort::DiaryTokenStack& stack);

}  // namespace avh::text
