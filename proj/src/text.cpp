#include "avh/text.hpp"

#include <cmath>
#include <span>

#include "avh/error.hpp"
#include "avh/seed.hpp"
#include "avh/spectrogram.hpp"

namespace avh::text {

std::shared_ptr<const cohort::LayerStack> StubEncoder::encode_token(const std::string& token) {
  auto it = cache_.find(token);
  if (it != cache_.end()) return it->second;
  auto stack = std::make_shared<cohort::LayerStack>(cohort::kEncoderLayers, cohort::kEncoderWidth);
  Eigen::VectorXd row(cohort::kEncoderWidth);
  const double scale = 1.0 / std::sqrt(static_cast<double>(cohort::kEncoderWidth));
  for (int l = 0; l < cohort::kEncoderLayers; ++l) {
    const auto key = derive_seed(seed_, "stub-encoder", fnv1a(token), static_cast<std::uint64_t>(l));
    spectrogram::fill_standard_normal<double>(key, 0, std::span<double>(row.data(), static_cast<std::size_t>(row.size())));
    stack->row(l) = row.transpose() * scale;
  }
  std::shared_ptr<const cohort::LayerStack> shared = std::move(stack);
  cache_.emplace(token, shared);
  return shared;
}

cohort::DiaryTokenStack StubEncoder::encode(const std::vector<std::vector<std::string>>& transcript) {
  if (transcript.empty()) throw InvalidArgument("stub_encode: empty transcript");
  cohort::DiaryTokenStack stack;
  for (const auto& sentence : transcript) {
    if (sentence.empty()) throw InvalidArgument("stub_encode: empty sentence");
    cohort::Sentence out;
    for (const auto& token : sentence) out.push_back({token, encode_token(token)});
    stack.sentences.push_back(std::move(out));
  }
  return stack;
}

cohort::DiaryTokenStack stub_encode(const std::vector<std::vector<std::string>>& transcript, std::uint64_t seed) {
  return StubEncoder(seed).encode(transcript);
}

Eigen::VectorXd sentence_vector(const cohort::Sentence& sentence) {
  if (sentence.empty()) throw InvalidArgument("sentence_vector: empty sentence");
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(cohort::kEncoderWidth);
  for (const auto& token : sentence) {
    if (!token.layers || token.layers->rows() != cohort::kEncoderLayers ||
        token.layers->cols() != cohort::kEncoderWidth)
      throw InvalidArgument("sentence_vector: token '" + token.text + "' is not 12 x 768");
    acc += token.layers->colwise().sum().transpose();
  }
  return acc / static_cast<double>(sentence.size());
}

TranscriptVector transcript_vector(const std::vector<Eigen::VectorXd>& sentence_vectors) {
  if (sentence_vectors.empty()) throw InvalidArgument("transcript_vector: empty transcript");
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(cohort::kEncoderWidth);
  for (const auto& v : sentence_vectors) {
    if (v.size() != cohort::kEncoderWidth) throw InvalidArgument("transcript_vector: sentence vector is not 768 wide");
    acc += v;
  }
  return acc / static_cast<double>(sentence_vectors.size());
}

TranscriptVector transcript_vector(const cohort::DiaryTokenStack& stack) {
  std::vector<Eigen::VectorXd> sentences;
  sentences.reserve(stack.sentences.size());
  for (const auto& s : stack.sentences) sentences.push_back(sentence_vector(s));
  return transcript_vector(sentences);
}

}  // namespace avh::text
