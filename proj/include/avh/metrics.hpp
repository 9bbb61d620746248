#pragma once

#include <Eigen/Dense>
#include <span>
#include <vector>

namespace avh::metrics {

inline constexpr int kClasses = 4;

struct Averages {
  double micro = 0.0;
  double macro = 0.0;
};

struct F1Scores {
  Averages top1;
  Averages top2;
};

using Confusion = Eigen::Matrix<long, kClasses, kClasses>;  // rows truth, cols prediction

/// Row-wise argmax; ties go to the lowest class index.
std::vector<int> top1_predictions(const Eigen::Ref<const Eigen::MatrixXd>& probabilities);

/// The true class when it is among the two most probable classes (ties broken
/// toward lower indices), otherwise the argmax.
std::vector<int> top2_predictions(const Eigen::Ref<const Eigen::MatrixXd>& probabilities, std::span<const int> truth);

Confusion confusion(std::span<const int> truth, std::span<const int> predicted);

/// Micro F1 from pooled counts and macro F1 as the unweighted mean of per-class
/// F1, skipping classes with neither support nor predictions.
Averages f1(std::span<const int> truth, std::span<const int> predicted);

/// Throws InvalidArgument unless every row is a probability vector within `tolerance`.
F1Scores f1_scores(const Eigen::Ref<const Eigen::MatrixXd>& probabilities, std::span<const int> truth,
                   double tolerance = 1e-6);

}  // namespace avh::metrics
