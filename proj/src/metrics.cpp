#include "avh/metrics.hpp"

#include <cmath>

#include "avh/error.hpp"

namespace avh::metrics {

namespace {

void check_labels(std::span<const int> labels) {
  for (int l : labels)
    if (l < 0 || l >= kClasses) throw InvalidArgument("class label out of range: " + std::to_string(l));
}

}  // namespace

std::vector<int> top1_predictions(const Eigen::Ref<const Eigen::MatrixXd>& p) {
  std::vector<int> out(static_cast<std::size_t>(p.rows()));
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    int best = 0;
    for (int c = 1; c < p.cols(); ++c)
      if (p(i, c) > p(i, best)) best = c;
    out[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

std::vector<int> top2_predictions(const Eigen::Ref<const Eigen::MatrixXd>& p, std::span<const int> truth) {
  auto out = top1_predictions(p);
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    const int first = out[static_cast<std::size_t>(i)];
    int second = -1;
    for (int c = 0; c < p.cols(); ++c) {
      if (c == first) continue;
      if (second < 0 || p(i, c) > p(i, second)) second = c;
    }
    if (truth[static_cast<std::size_t>(i)] == second) out[static_cast<std::size_t>(i)] = second;
  }
  return out;
}

Confusion confusion(std::span<const int> truth, std::span<const int> predicted) {
  if (truth.size() != predicted.size()) throw InvalidArgument("confusion: length mismatch");
  check_labels(truth);
  check_labels(predicted);
  Confusion m = Confusion::Zero();
  for (std::size_t i = 0; i < truth.size(); ++i) ++m(truth[i], predicted[i]);
  return m;
}

Averages f1(std::span<const int> truth, std::span<const int> predicted) {
  if (truth.empty()) throw InvalidArgument("f1: empty prediction set");
  const Confusion m = confusion(truth, predicted);
  long tp_all = 0, fp_all = 0, fn_all = 0;
  double macro_sum = 0.0;
  int macro_classes = 0;
  for (int c = 0; c < kClasses; ++c) {
    const long tp = m(c, c);
    const long fp = m.col(c).sum() - tp;
    const long fn = m.row(c).sum() - tp;
    tp_all += tp;
    fp_all += fp;
    fn_all += fn;
    if (tp + fp + fn == 0) continue;
    macro_sum += 2.0 * tp / static_cast<double>(2 * tp + fp + fn);
    ++macro_classes;
  }
  Averages a;
  a.micro = 2.0 * tp_all / static_cast<double>(2 * tp_all + fp_all + fn_all);
  a.macro = macro_sum / macro_classes;
  return a;
}

F1Scores f1_scores(const Eigen::Ref<const Eigen::MatrixXd>& p, std::span<const int> truth, double tolerance) {
  if (p.cols() != kClasses) throw InvalidArgument("f1_scores: expected 4 probability columns");
  if (static_cast<std::size_t>(p.rows()) != truth.size()) throw InvalidArgument("f1_scores: length mismatch");
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    const double sum = p.row(i).sum();
    if (!(std::abs(sum - 1.0) <= tolerance) || (p.row(i).array() < -tolerance).any())
      throw InvalidArgument("f1_scores: row " + std::to_string(i) + " is not a probability vector");
  }
  check_labels(truth);
  F1Scores s;
  s.top1 = f1(truth, top1_predictions(p));
  s.top2 = f1(truth, top2_predictions(p, truth));
  return s;
}

}  // namespace avh::metrics
