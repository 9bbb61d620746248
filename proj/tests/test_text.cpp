#include <doctest.h>

#include <random>

#include "avh/error.hpp"
#include "avh/text.hpp"

using namespace avh;
using namespace avh::text;

namespace {

cohort::DiaryToken constant_token(const Eigen::RowVectorXd& v) {
  auto stack = std::make_shared<cohort::LayerStack>(12, 768);
  stack->rowwise() = v;
  return {"t", stack};
}

cohort::DiaryToken random_token(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  auto stack = std::make_shared<cohort::LayerStack>(12, 768);
  for (Eigen::Index i = 0; i < stack->size(); ++i) stack->data()[i] = n(rng);
  return {"r", stack};
}

cohort::DiaryToken scaled(const cohort::DiaryToken& t, double c) {
  return {t.text, std::make_shared<cohort::LayerStack>(*t.layers * c)};
}

}  // namespace

TEST_SUITE("text") {

TEST_CASE("stub encoder is deterministic and shaped 12 x 768") {
  StubEncoder enc(7);
  const auto a = enc.encode({{"voices", "loud"}});
  const auto b = stub_encode({{"voices", "loud"}}, 7);
  REQUIRE(a.sentences.size() == 1);
  REQUIRE(a.sentences[0].size() == 2);
  CHECK(a.sentences[0][0].layers->rows() == 12);
  CHECK(a.sentences[0][0].layers->cols() == 768);
  CHECK(*a.sentences[0][0].layers == *b.sentences[0][0].layers);
  CHECK(*stub_encode({{"voices"}}, 8).sentences[0][0].layers != *b.sentences[0][0].layers);
  const auto twice = enc.encode({{"voices"}, {"quiet", "voices"}});
  CHECK(twice.sentences[1][1].layers == twice.sentences[0][0].layers);
  CHECK_THROWS_AS(enc.encode({}), InvalidArgument);
  CHECK_THROWS_AS(enc.encode({{"a"}, {}}), InvalidArgument);
}

TEST_CASE("distinct tokens are nearly orthogonal") {
  StubEncoder enc(3);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const auto a = enc.encode_token("tok" + std::to_string(2 * i));
    const auto b = enc.encode_token("tok" + std::to_string(2 * i + 1));
    const Eigen::RowVectorXd x = a->row(0), y = b->row(0);
    worst = std::max(worst, std::abs(x.dot(y)) / (x.norm() * y.norm()));
  }
  CHECK(worst < 0.2);
  CHECK(enc.encode_token("tok0")->row(5).norm() == doctest::Approx(1.0).epsilon(0.15));
}

TEST_CASE("sentence vector sums layers then averages tokens") {
  const Eigen::RowVectorXd v = Eigen::RowVectorXd::LinSpaced(768, -1, 1);
  const auto one = sentence_vector({constant_token(v)});
  CHECK((one - 12.0 * v.transpose()).cwiseAbs().maxCoeff() < 1e-12);

  std::mt19937_64 rng(1);
  const auto a = random_token(rng), b = random_token(rng);
  const auto base = sentence_vector({a, b});
  CHECK((sentence_vector({a, a, b, b}) - base).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((sentence_vector({scaled(a, -2.5), scaled(b, -2.5)}) + 2.5 * base).cwiseAbs().maxCoeff() < 1e-12);
  CHECK_THROWS_AS(sentence_vector({}), InvalidArgument);
}

TEST_CASE("transcript vector is a mean over sentences") {
  std::mt19937_64 rng(2);
  const Eigen::VectorXd v = Eigen::VectorXd::Random(768);
  CHECK(transcript_vector(std::vector<Eigen::VectorXd>{v}) == v);
  CHECK(transcript_vector(std::vector<Eigen::VectorXd>{v, -v}).isZero());
  const Eigen::VectorXd w = Eigen::VectorXd::Random(768), u = Eigen::VectorXd::Random(768);
  CHECK((transcript_vector({v, w, u}) - transcript_vector({u, v, w})).cwiseAbs().maxCoeff() < 1e-15);
  CHECK_THROWS_AS(transcript_vector(std::vector<Eigen::VectorXd>{}), InvalidArgument);
}

TEST_CASE("aggregation is additive and homogeneous") {
  std::mt19937_64 rng(3);
  cohort::DiaryTokenStack x, y, sum;
  for (int s = 0; s < 3; ++s) {
    cohort::Sentence sx, sy, ss;
    for (int t = 0; t < 2 + s; ++t) {
      const auto a = random_token(rng), b = random_token(rng);
      sx.push_back(a);
      sy.push_back(b);
      ss.push_back({"s", std::make_shared<cohort::LayerStack>(*a.layers + *b.layers)});
    }
    x.sentences.push_back(sx);
    y.sentences.push_back(sy);
    sum.sentences.push_back(ss);
  }
  const auto tx = transcript_vector(x), ty = transcript_vector(y);
  CHECK(tx.size() == 768);
  CHECK((transcript_vector(sum) - tx - ty).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("stored and stub stacks share one path") {
  const auto stub = stub_encode({{"a", "b"}, {"c"}}, 4);
  cohort::DiaryTokenStack copy;
  for (const auto& s : stub.sentences) {
    cohort::Sentence out;
    for (const auto& t : s) out.push_back({t.text, std::make_shared<cohort::LayerStack>(*t.layers)});
    copy.sentences.push_back(out);
  }
  CHECK(transcript_vector(copy) == transcript_vector(stub));
}

}
