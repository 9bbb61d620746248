#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "avh/error.hpp"
#include "avh/metrics.hpp"
#include "avh/tensor_archive.hpp"

namespace avh::nn {

enum class Activation { relu, tanh, sigmoid, softmax, none };
enum class LossKind { softmax_cross_entropy, per_class_sigmoid_cross_entropy };
enum class Mode { train, eval };

std::string_view activation_name(Activation a);
Activation activation_from_name(std::string_view name);
std::string_view loss_name(LossKind k);
LossKind loss_from_name(std::string_view name);

struct LayerSpec {
  int width = 1;
  Activation activation = Activation::relu;
  double dropout_rate = 0.0;
  bool batch_norm = false;
};

/// Normalization and dropout applied to the raw features before the first
/// affine layer.
struct InputSpec {
  double dropout_rate = 0.0;
  bool batch_norm = false;
};

struct ModelSpec {
  int input_width = 1;
  InputSpec input;
  std::vector<LayerSpec> layers;
  LossKind loss = LossKind::softmax_cross_entropy;
  std::uint64_t seed = 0;
  double bn_momentum = 0.9;
  double bn_epsilon = 1e-5;

  int output_width() const { return layers.empty() ? 0 : layers.back().width; }
  bool has_batch_norm() const;
  /// Throws InvalidArgument for inconsistent widths or activation/loss pairs.
  void validate() const;
};

nlohmann::json to_json(const ModelSpec& spec);
ModelSpec model_spec_from_json(const nlohmann::json& j);

struct TrainConfig {
  int batch_size = 64;
  int epochs = 80;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::uint64_t seed = 0;
};

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
struct BatchNorm {
  Matrix<Scalar> gamma;  // 1 x width
  Matrix<Scalar> beta;
  Matrix<Scalar> running_mean;
  Matrix<Scalar> running_var;

  explicit BatchNorm(int width = 0)
      : gamma(Matrix<Scalar>::Ones(1, width)),
        beta(Matrix<Scalar>::Zero(1, width)),
        running_mean(Matrix<Scalar>::Zero(1, width)),
        running_var(Matrix<Scalar>::Ones(1, width)) {}
};

template <typename Scalar>
struct DenseLayer {
  Matrix<Scalar> weight;  // in x out
  Matrix<Scalar> bias;    // 1 x out
  std::optional<BatchNorm<Scalar>> bn;
};

/// A fully connected network: optional input batch-norm/dropout, then per layer
/// affine -> batch norm -> activation -> dropout.
template <typename Scalar>
class Model {
 public:
  Model() = default;

  /// Affine weights ~ Normal(0, g / fan_in) with g = 2 for relu layers and 1
  /// otherwise; zero biases; batch norm scale 1, shift 0, running stats (0, 1).
  explicit Model(ModelSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    std::mt19937_64 rng(spec_.seed);
    if (spec_.input.batch_norm) input_bn_.emplace(spec_.input_width);
    int in = spec_.input_width;
    for (const auto& l : spec_.layers) {
      DenseLayer<Scalar> d;
      d.weight.resize(in, l.width);
      const double gain = l.activation == Activation::relu ? 2.0 : 1.0;
      std::normal_distribution<double> normal(0.0, std::sqrt(gain / in));
      for (Eigen::Index i = 0; i < d.weight.size(); ++i) d.weight.data()[i] = static_cast<Scalar>(normal(rng));
      d.bias = Matrix<Scalar>::Zero(1, l.width);
      if (l.batch_norm) d.bn.emplace(l.width);
      layers_.push_back(std::move(d));
      in = l.width;
    }
  }

  const ModelSpec& spec() const { return spec_; }
  std::optional<BatchNorm<Scalar>>& input_bn() { return input_bn_; }
  const std::optional<BatchNorm<Scalar>>& input_bn() const { return input_bn_; }
  std::vector<DenseLayer<Scalar>>& layers() { return layers_; }
  const std::vector<DenseLayer<Scalar>>& layers() const { return layers_; }

  /// Trainable tensors in a fixed order: input bn (gamma, beta), then per layer
  /// weight, bias, and bn gamma, beta when present.
  std::vector<Matrix<Scalar>*> parameters() {
    std::vector<Matrix<Scalar>*> p;
    if (input_bn_) {
      p.push_back(&input_bn_->gamma);
      p.push_back(&input_bn_->beta);
    }
    for (auto& l : layers_) {
      p.push_back(&l.weight);
      p.push_back(&l.bias);
      if (l.bn) {
        p.push_back(&l.bn->gamma);
        p.push_back(&l.bn->beta);
      }
    }
    return p;
  }

  std::vector<const Matrix<Scalar>*> parameters() const {
    auto p = const_cast<Model*>(this)->parameters();
    return {p.begin(), p.end()};
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto* m : parameters()) n += static_cast<std::size_t>(m->size());
    return n;
  }

 private:
  ModelSpec spec_;
  std::optional<BatchNorm<Scalar>> input_bn_;
  std::vector<DenseLayer<Scalar>> layers_;
};

template <typename Scalar>
Model<Scalar> build_model(const ModelSpec& spec) {
  return Model<Scalar>(spec);
}

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

template <typename Scalar>
struct NormCache {
  Matrix<Scalar> xhat;
  Matrix<Scalar> inv_std;  // 1 x width
  Matrix<Scalar> batch_mean;
  Matrix<Scalar> batch_var;  // biased
};

template <typename Scalar>
struct LayerCache {
  Matrix<Scalar> input;
  Matrix<Scalar> pre_activation;  // after batch norm
  std::optional<NormCache<Scalar>> norm;
  Matrix<Scalar> activated;  // before dropout
  Matrix<Scalar> mask;       // empty when dropout inactive
};

template <typename Scalar>
struct ForwardResult {
  /// Output of each layer as seen by the next one (post-dropout in train mode).
  std::vector<Matrix<Scalar>> activations;
  Matrix<Scalar> logits;
  /// Softmax rows or per-class sigmoids, depending on the output activation.
  Matrix<Scalar> probabilities;
  std::optional<NormCache<Scalar>> input_norm;
  Matrix<Scalar> input_mask;
  std::vector<LayerCache<Scalar>> caches;
};

struct ForwardOptions {
  Mode mode = Mode::eval;
  bool dropout = true;  // only consulted in train mode
};

namespace detail {

template <typename Scalar>
Matrix<Scalar> batch_norm_forward(const Matrix<Scalar>& z, const BatchNorm<Scalar>& bn, Mode mode, double epsilon,
                                  std::optional<NormCache<Scalar>>& cache) {
  const auto n = static_cast<Scalar>(z.rows());
  const auto eps = static_cast<Scalar>(epsilon);
  NormCache<Scalar> c;
  if (mode == Mode::train) {
    c.batch_mean = z.colwise().sum() / n;
    const Matrix<Scalar> centered = z.rowwise() - c.batch_mean.row(0);
    c.batch_var = centered.array().square().colwise().sum() / n;
    c.inv_std = (c.batch_var.array() + eps).rsqrt();
    c.xhat = centered.array().rowwise() * c.inv_std.row(0).array();
  } else {
    c.inv_std = (bn.running_var.array() + eps).rsqrt();
    c.xhat = (z.rowwise() - bn.running_mean.row(0)).array().rowwise() * c.inv_std.row(0).array();
  }
  Matrix<Scalar> y = (c.xhat.array().rowwise() * bn.gamma.row(0).array()).rowwise() + bn.beta.row(0).array();
  cache = std::move(c);
  return y;
}

template <typename Scalar>
Matrix<Scalar> activate(const Matrix<Scalar>& y, Activation a) {
  switch (a) {
    case Activation::relu: return y.cwiseMax(Scalar(0));
    case Activation::tanh: return y.array().tanh().matrix();
    case Activation::sigmoid: return (Scalar(1) / (Scalar(1) + (-y.array()).exp())).matrix();
    case Activation::softmax: {
      Matrix<Scalar> e = (y.colwise() - y.rowwise().maxCoeff()).array().exp().matrix();
      return (e.array().colwise() / e.rowwise().sum().array()).matrix();
    }
    case Activation::none: return y;
  }
  return y;
}

/// dL/dy from dL/da given y and a = activate(y) for elementwise activations.
template <typename Scalar>
Matrix<Scalar> activation_backward(const Matrix<Scalar>& grad, const Matrix<Scalar>& y, const Matrix<Scalar>& a,
                                   Activation act) {
  switch (act) {
    case Activation::relu: return (y.array() > Scalar(0)).select(grad, Scalar(0));
    case Activation::tanh: return (grad.array() * (Scalar(1) - a.array().square())).matrix();
    case Activation::sigmoid: return (grad.array() * a.array() * (Scalar(1) - a.array())).matrix();
    case Activation::none: return grad;
    case Activation::softmax: break;
  }
  throw InvalidArgument("softmax is only supported on the output layer");
}

template <typename Scalar, typename Rng>
Matrix<Scalar> dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto scale = static_cast<Scalar>(1.0 / (1.0 - rate));
  Matrix<Scalar> mask(rows, cols);
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = unit(rng) >= rate ? scale : Scalar(0);
  return mask;
}

/// Backward through batch norm in train mode; accumulates gamma/beta grads.
template <typename Scalar>
Matrix<Scalar> batch_norm_backward(const Matrix<Scalar>& dy, const NormCache<Scalar>& c, const BatchNorm<Scalar>& bn,
                                   Matrix<Scalar>& dgamma, Matrix<Scalar>& dbeta) {
  const auto n = static_cast<Scalar>(dy.rows());
  dgamma = (dy.array() * c.xhat.array()).colwise().sum();
  dbeta = dy.colwise().sum();
  const Matrix<Scalar> dxhat = dy.array().rowwise() * bn.gamma.row(0).array();
  const Matrix<Scalar> sum_dxhat = dxhat.colwise().sum();
  const Matrix<Scalar> sum_dxhat_xhat = (dxhat.array() * c.xhat.array()).colwise().sum();
  Matrix<Scalar> dz = ((dxhat.array() * n).rowwise() - sum_dxhat.row(0).array()) -
                      (c.xhat.array().rowwise() * sum_dxhat_xhat.row(0).array());
  dz.array().rowwise() *= (c.inv_std.row(0).array() / n);
  return dz;
}

}  // namespace detail

/// Forward pass. Train mode uses batch statistics (requires >= 2 rows when the
/// model has batch norm) and, when enabled, inverted dropout drawn from `rng`.
template <typename Scalar, typename Rng = std::mt19937_64>
ForwardResult<Scalar> forward(const Model<Scalar>& model, const Matrix<Scalar>& batch, ForwardOptions options,
                              Rng* rng = nullptr) {
  const auto& spec = model.spec();
  if (batch.cols() != spec.input_width)
    throw InvalidArgument("forward: batch width " + std::to_string(batch.cols()) + " != input width " +
                          std::to_string(spec.input_width));
  if (batch.rows() < 1) throw InvalidArgument("forward: empty batch");
  const bool train = options.mode == Mode::train;
  if (train && batch.rows() < 2 && spec.has_batch_norm())
    throw InvalidArgument("forward: train-mode batch norm needs at least 2 rows");
  const bool use_dropout = train && options.dropout;
  if (use_dropout && !rng) throw InvalidArgument("forward: dropout requires a random generator");

  ForwardResult<Scalar> r;
  Matrix<Scalar> x = batch;
  if (model.input_bn()) x = detail::batch_norm_forward(x, *model.input_bn(), options.mode, spec.bn_epsilon, r.input_norm);
  if (use_dropout && spec.input.dropout_rate > 0.0) {
    r.input_mask = detail::dropout_mask<Scalar>(x.rows(), x.cols(), spec.input.dropout_rate, *rng);
    x = x.cwiseProduct(r.input_mask);
  }

  const auto& layers = model.layers();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& layer = layers[i];
    const auto& ls = spec.layers[i];
    LayerCache<Scalar> c;
    c.input = std::move(x);
    Matrix<Scalar> z = c.input * layer.weight;
    z.rowwise() += layer.bias.row(0);
    c.pre_activation = layer.bn ? detail::batch_norm_forward(z, *layer.bn, options.mode, spec.bn_epsilon, c.norm) : z;
    c.activated = detail::activate(c.pre_activation, ls.activation);
    x = c.activated;
    if (use_dropout && ls.dropout_rate > 0.0) {
      c.mask = detail::dropout_mask<Scalar>(x.rows(), x.cols(), ls.dropout_rate, *rng);
      x = x.cwiseProduct(c.mask);
    }
    r.activations.push_back(x);
    if (i + 1 == layers.size()) {
      r.logits = c.pre_activation;
      r.probabilities = c.activated;
    }
    r.caches.push_back(std::move(c));
  }
  return r;
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

template <typename Scalar>
void check_one_hot(const Matrix<Scalar>& targets, Eigen::Index classes) {
  if (targets.cols() != classes) throw InvalidArgument("targets must have one column per class");
  for (Eigen::Index i = 0; i < targets.rows(); ++i) {
    int ones = 0;
    for (Eigen::Index c = 0; c < targets.cols(); ++c) {
      if (targets(i, c) == Scalar(1)) {
        ++ones;
      } else if (targets(i, c) != Scalar(0)) {
        ones = -1;
        break;
      }
    }
    if (ones != 1) throw InvalidArgument("target row " + std::to_string(i) + " is not one-hot");
  }
}

/// Mean cross-entropy computed from logits (numerically stable form).
template <typename Scalar>
double loss_from_logits(const Matrix<Scalar>& logits, const Matrix<Scalar>& targets, LossKind kind) {
  if (logits.rows() != targets.rows()) throw InvalidArgument("loss: row mismatch");
  check_one_hot(targets, logits.cols());
  const Eigen::MatrixXd z = logits.template cast<double>();
  const Eigen::MatrixXd y = targets.template cast<double>();
  if (kind == LossKind::softmax_cross_entropy) {
    const Eigen::VectorXd m = z.rowwise().maxCoeff();
    const Eigen::VectorXd lse = ((z.colwise() - m).array().exp().rowwise().sum().log()).matrix() + m;
    const Eigen::VectorXd true_logit = (z.array() * y.array()).rowwise().sum();
    return (lse - true_logit).mean();
  }
  const Eigen::ArrayXXd l = z.array().max(0.0) - z.array() * y.array() + (-z.array().abs()).exp().log1p();
  return l.mean();
}

/// Mean cross-entropy from output probabilities (softmax rows or per-class
/// sigmoids); probabilities are clipped to [1e-12, 1 - 1e-12].
template <typename Scalar>
double loss_from_probabilities(const Matrix<Scalar>& probs, const Matrix<Scalar>& targets, LossKind kind) {
  if (probs.rows() != targets.rows()) throw InvalidArgument("loss: row mismatch");
  check_one_hot(targets, probs.cols());
  const Eigen::ArrayXXd p = probs.template cast<double>().array().max(1e-12).min(1.0 - 1e-12);
  const Eigen::ArrayXXd y = targets.template cast<double>().array();
  if (kind == LossKind::softmax_cross_entropy) return -(y * p.log()).rowwise().sum().mean();
  return -(y * p.log() + (1.0 - y) * (1.0 - p).log()).mean();
}

/// dLoss/dlogits: (p - y) / n for softmax, (sigmoid - y) / (n * classes) for
/// per-class sigmoid.
template <typename Scalar>
Matrix<Scalar> loss_gradient(const Matrix<Scalar>& probs, const Matrix<Scalar>& targets, LossKind kind) {
  const auto n = static_cast<Scalar>(probs.rows());
  if (kind == LossKind::softmax_cross_entropy) return (probs - targets) / n;
  return (probs - targets) / (n * static_cast<Scalar>(probs.cols()));
}

/// Gradients aligned with Model::parameters().
template <typename Scalar>
std::vector<Matrix<Scalar>> backward(const Model<Scalar>& model, const ForwardResult<Scalar>& fwd,
                                     const Matrix<Scalar>& targets) {
  const auto& spec = model.spec();
  const auto& layers = model.layers();
  std::vector<Matrix<Scalar>> layer_grads;  // reverse order, 2 or 4 per layer
  Matrix<Scalar> upstream;                  // dL / d(layer output as seen by the next layer)
  for (std::size_t k = layers.size(); k-- > 0;) {
    const auto& c = fwd.caches[k];
    const auto& layer = layers[k];
    Matrix<Scalar> dy;
    if (k + 1 == layers.size()) {
      dy = loss_gradient(fwd.probabilities, targets, spec.loss);
    } else {
      Matrix<Scalar> da = c.mask.size() ? upstream.cwiseProduct(c.mask) : upstream;
      dy = detail::activation_backward(da, c.pre_activation, c.activated, spec.layers[k].activation);
    }
    Matrix<Scalar> dgamma, dbeta;
    Matrix<Scalar> dz = layer.bn ? detail::batch_norm_backward(dy, *c.norm, *layer.bn, dgamma, dbeta) : dy;
    if (layer.bn) {
      layer_grads.push_back(std::move(dbeta));
      layer_grads.push_back(std::move(dgamma));
    }
    layer_grads.push_back(dz.colwise().sum());
    layer_grads.push_back(c.input.transpose() * dz);
    upstream = dz * layer.weight.transpose();
  }
  std::vector<Matrix<Scalar>> grads;
  if (model.input_bn()) {
    Matrix<Scalar> dy = fwd.input_mask.size() ? upstream.cwiseProduct(fwd.input_mask) : upstream;
    Matrix<Scalar> dgamma, dbeta;
    detail::batch_norm_backward(dy, *fwd.input_norm, *model.input_bn(), dgamma, dbeta);
    grads.push_back(std::move(dgamma));
    grads.push_back(std::move(dbeta));
  }
  grads.insert(grads.end(), std::make_move_iterator(layer_grads.rbegin()), std::make_move_iterator(layer_grads.rend()));
  return grads;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

template <typename Scalar>
struct AdamState {
  std::vector<Matrix<Scalar>> first_moment;
  std::vector<Matrix<Scalar>> second_moment;
  long step = 0;

  static AdamState zeros_like(const std::vector<Matrix<Scalar>*>& params) {
    AdamState s;
    for (const auto* p : params) {
      s.first_moment.push_back(Matrix<Scalar>::Zero(p->rows(), p->cols()));
      s.second_moment.push_back(Matrix<Scalar>::Zero(p->rows(), p->cols()));
    }
    return s;
  }
};

/// One bias-corrected Adam update; increments state.step first.
template <typename Scalar>
void adam_step(const std::vector<Matrix<Scalar>*>& params, const std::vector<Matrix<Scalar>>& grads,
               AdamState<Scalar>& state, const TrainConfig& cfg) {
  if (params.size() != grads.size() || params.size() != state.first_moment.size())
    throw InvalidArgument("adam_step: parameter/gradient/moment count mismatch");
  ++state.step;
  const auto b1 = static_cast<Scalar>(cfg.beta1);
  const auto b2 = static_cast<Scalar>(cfg.beta2);
  const auto c1 = static_cast<Scalar>(1.0 - std::pow(cfg.beta1, static_cast<double>(state.step)));
  const auto c2 = static_cast<Scalar>(1.0 - std::pow(cfg.beta2, static_cast<double>(state.step)));
  const auto lr = static_cast<Scalar>(cfg.learning_rate);
  const auto eps = static_cast<Scalar>(cfg.adam_epsilon);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    const auto& g = grads[i];
    if (g.rows() != params[i]->rows() || g.cols() != params[i]->cols())
      throw InvalidArgument("adam_step: gradient shape mismatch");
    m = b1 * m + (Scalar(1) - b1) * g;
    v = b2 * v + (Scalar(1) - b2) * g.cwiseProduct(g);
    params[i]->array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  }
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

template <typename Scalar>
struct Dataset {
  Matrix<Scalar> features;
  Matrix<Scalar> targets;  // one-hot

  Eigen::Index size() const { return features.rows(); }
};

template <typename Scalar>
struct Checkpoint {
  Model<Scalar> model;
  AdamState<Scalar> optimizer;
  int epoch = 0;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double validation_top1 = std::numeric_limits<double>::quiet_NaN();
};

template <typename Scalar>
struct TrainResult {
  Checkpoint<Scalar> checkpoint;
  std::vector<EpochRecord> history;
};

/// Row-normalized class scores suitable for f1_scores: softmax rows as is,
/// per-class sigmoids divided by their row sum.
template <typename Scalar>
Eigen::MatrixXd class_distribution(const Model<Scalar>& model, const Matrix<Scalar>& features) {
  const auto fwd = forward(model, features, {Mode::eval});
  Eigen::MatrixXd p = fwd.probabilities.template cast<double>();
  if (model.spec().loss == LossKind::per_class_sigmoid_cross_entropy) {
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
      const double s = p.row(i).sum();
      if (s > 0.0) {
        p.row(i) /= s;
      } else {
        p.row(i).setConstant(1.0 / static_cast<double>(p.cols()));
      }
    }
  }
  return p;
}

inline std::vector<int> argmax_rows(const Eigen::Ref<const Eigen::MatrixXd>& m) { return metrics::top1_predictions(m); }

/// Mini-batch Adam training. Each epoch shuffles with the seeded generator and
/// keeps the incomplete final batch (a final batch of one row is merged into the
/// previous batch when the model has batch norm). After each epoch the
/// validation top-1 micro-F1 is recorded; the returned checkpoint is the epoch
/// with the best validation score (earliest on ties), or the last epoch when no
/// validation data is given.
template <typename Scalar>
TrainResult<Scalar> train(Model<Scalar> model, const Dataset<Scalar>& data, const Dataset<Scalar>* validation,
                          const TrainConfig& cfg) {
  if (data.size() < 1) throw InvalidArgument("train: empty training data");
  if (cfg.batch_size < 1 || cfg.epochs < 1) throw InvalidArgument("train: batch_size and epochs must be >= 1");
  if (data.features.cols() != model.spec().input_width)
    throw InvalidArgument("train: feature width does not match the model input");
  check_one_hot(data.targets, model.spec().output_width());
  const bool bn = model.spec().has_batch_norm();
  if (bn && data.size() < 2) throw InvalidArgument("train: batch norm needs at least 2 samples");

  std::vector<int> val_truth;
  if (validation && validation->size() > 0) {
    check_one_hot(validation->targets, model.spec().output_width());
    val_truth = argmax_rows(validation->targets.template cast<double>());
  }

  std::mt19937_64 rng(cfg.seed);
  auto params = model.parameters();
  auto adam = AdamState<Scalar>::zeros_like(params);
  const double momentum = model.spec().bn_momentum;

  auto update_running = [&](BatchNorm<Scalar>& b, const NormCache<Scalar>& c, Eigen::Index n) {
    const auto mom = static_cast<Scalar>(momentum);
    const auto unbiased = static_cast<Scalar>(static_cast<double>(n) / static_cast<double>(n - 1));
    b.running_mean = mom * b.running_mean + (Scalar(1) - mom) * c.batch_mean;
    b.running_var = mom * b.running_var + (Scalar(1) - mom) * (c.batch_var * unbiased);
  };

  TrainResult<Scalar> result;
  std::optional<double> best;
  std::vector<int> order(static_cast<std::size_t>(data.size()));
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);

    std::vector<std::pair<std::size_t, std::size_t>> batches;
    for (std::size_t s = 0; s < order.size(); s += static_cast<std::size_t>(cfg.batch_size))
      batches.push_back({s, std::min(order.size(), s + static_cast<std::size_t>(cfg.batch_size))});
    if (bn && batches.size() > 1 && batches.back().second - batches.back().first == 1) {
      batches[batches.size() - 2].second = batches.back().second;
      batches.pop_back();
    }

    double loss_sum = 0.0;
    for (const auto& [begin, end] : batches) {
      const std::vector<int> idx(order.begin() + static_cast<long>(begin), order.begin() + static_cast<long>(end));
      const Matrix<Scalar> x = data.features(idx, Eigen::all);
      const Matrix<Scalar> y = data.targets(idx, Eigen::all);
      const auto fwd = forward(model, x, {Mode::train, true}, &rng);
      loss_sum += loss_from_logits(fwd.logits, y, model.spec().loss) * static_cast<double>(idx.size());
      adam_step(params, backward(model, fwd, y), adam, cfg);
      if (model.input_bn()) update_running(*model.input_bn(), *fwd.input_norm, x.rows());
      for (std::size_t l = 0; l < model.layers().size(); ++l)
        if (model.layers()[l].bn) update_running(*model.layers()[l].bn, *fwd.caches[l].norm, x.rows());
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(data.size());
    const bool have_val = !val_truth.empty();
    if (have_val) {
      const auto dist = class_distribution(model, validation->features);
      rec.validation_top1 = metrics::f1(val_truth, metrics::top1_predictions(dist)).micro;
    }
    result.history.push_back(rec);
    if (!have_val || !best || rec.validation_top1 > *best) {
      if (have_val) best = rec.validation_top1;
      result.checkpoint = {model, adam, epoch};
    }
  }
  return result;
}

/// Eval-mode output of layer `layer_index` (0-based over the affine layers).
template <typename Scalar>
Matrix<Scalar> extract_activations(const Model<Scalar>& model, const Matrix<Scalar>& features, std::size_t layer_index) {
  if (layer_index >= model.layers().size())
    throw InvalidArgument("extract_activations: layer index " + std::to_string(layer_index) + " out of range");
  return forward(model, features, {Mode::eval}).activations[layer_index];
}

/// First layer whose width equals `width`.
std::optional<std::size_t> find_layer_of_width(const ModelSpec& spec, int width);

// ---------------------------------------------------------------------------
// Gradient verification
// ---------------------------------------------------------------------------

struct GradientCheckResult {
  double max_relative_error = 0.0;
  std::size_t parameters_checked = 0;
  bool all_finite = true;
};

/// Compares backprop against central differences for every parameter. Batch
/// norm runs in train mode on the fixed batch, dropout is disabled. The relative
/// error of one entry is |a - n| / max(|a|, |n|, 1e-6).
template <typename Scalar>
GradientCheckResult gradient_check(Model<Scalar> model, const Matrix<Scalar>& batch, const Matrix<Scalar>& targets,
                                   double step = 1e-5) {
  const ForwardOptions opts{Mode::train, false};
  const auto loss_at = [&](const Model<Scalar>& m) {
    const auto f = forward(m, batch, opts);
    return loss_from_logits(f.logits, targets, m.spec().loss);
  };
  const auto fwd = forward(model, batch, opts);
  const auto analytic = backward(model, fwd, targets);
  auto params = model.parameters();

  GradientCheckResult r;
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (Eigen::Index i = 0; i < params[p]->size(); ++i) {
      Scalar& w = params[p]->data()[i];
      const Scalar saved = w;
      w = saved + static_cast<Scalar>(step);
      const double plus = loss_at(model);
      w = saved - static_cast<Scalar>(step);
      const double minus = loss_at(model);
      w = saved;
      const double numeric = (plus - minus) / (2.0 * step);
      const double a = static_cast<double>(analytic[p].data()[i]);
      if (!std::isfinite(a) || !std::isfinite(numeric)) r.all_finite = false;
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
      r.max_relative_error = std::max(r.max_relative_error, std::abs(a - numeric) / denom);
      ++r.parameters_checked;
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

/// Checkpoint archive: "param.<k>", "adam.m.<k>", "adam.v.<k>" for the k-th
/// trainable tensor, "bn.<layer>.running_mean|running_var" (layer "input" or
/// the layer index); metadata carries the spec, epoch and Adam step.
template <typename Scalar>
TensorArchive to_archive(const Checkpoint<Scalar>& ckpt) {
  TensorArchive a;
  auto model = ckpt.model;
  const auto params = model.parameters();
  for (std::size_t k = 0; k < params.size(); ++k) {
    a.put_matrix("param." + std::to_string(k), *params[k]);
    if (k < ckpt.optimizer.first_moment.size()) {
      a.put_matrix("adam.m." + std::to_string(k), ckpt.optimizer.first_moment[k]);
      a.put_matrix("adam.v." + std::to_string(k), ckpt.optimizer.second_moment[k]);
    }
  }
  if (model.input_bn()) {
    a.put_matrix("bn.input.running_mean", model.input_bn()->running_mean);
    a.put_matrix("bn.input.running_var", model.input_bn()->running_var);
  }
  for (std::size_t l = 0; l < model.layers().size(); ++l) {
    if (!model.layers()[l].bn) continue;
    a.put_matrix("bn." + std::to_string(l) + ".running_mean", model.layers()[l].bn->running_mean);
    a.put_matrix("bn." + std::to_string(l) + ".running_var", model.layers()[l].bn->running_var);
  }
  a.metadata()["kind"] = "checkpoint";
  a.metadata()["spec"] = to_json(model.spec());
  a.metadata()["epoch"] = ckpt.epoch;
  a.metadata()["adam_step"] = ckpt.optimizer.step;
  return a;
}

template <typename Scalar>
Checkpoint<Scalar> checkpoint_from_archive(const TensorArchive& a) {
  Checkpoint<Scalar> ckpt;
  try {
    ckpt.model = Model<Scalar>(model_spec_from_json(a.metadata().at("spec")));
    ckpt.epoch = a.metadata().at("epoch").get<int>();
    ckpt.optimizer.step = a.metadata().at("adam_step").get<long>();
  } catch (const nlohmann::json::exception& e) {
    throw ArchiveError(std::string("corrupt checkpoint manifest: ") + e.what());
  }
  auto load_into = [&](const std::string& name, Matrix<Scalar>& m) {
    a.expect(name, {m.rows(), m.cols()});
    m = a.matrix<Scalar>(name);
  };
  auto params = ckpt.model.parameters();
  for (std::size_t k = 0; k < params.size(); ++k) {
    load_into("param." + std::to_string(k), *params[k]);
    Matrix<Scalar> m = Matrix<Scalar>::Zero(params[k]->rows(), params[k]->cols());
    Matrix<Scalar> v = m;
    if (a.contains("adam.m." + std::to_string(k))) {
      load_into("adam.m." + std::to_string(k), m);
      load_into("adam.v." + std::to_string(k), v);
    }
    ckpt.optimizer.first_moment.push_back(std::move(m));
    ckpt.optimizer.second_moment.push_back(std::move(v));
  }
  if (ckpt.model.input_bn()) {
    load_into("bn.input.running_mean", ckpt.model.input_bn()->running_mean);
    load_into("bn.input.running_var", ckpt.model.input_bn()->running_var);
  }
  for (std::size_t l = 0; l < ckpt.model.layers().size(); ++l) {
    auto& bn = ckpt.model.layers()[l].bn;
    if (!bn) continue;
    load_into("bn." + std::to_string(l) + ".running_mean", bn->running_mean);
    load_into("bn." + std::to_string(l) + ".running_var", bn->running_var);
  }
  return ckpt;
}

template <typename Scalar>
void save_checkpoint(const Checkpoint<Scalar>& ckpt, const std::filesystem::path& manifest) {
  save_archive(to_archive(ckpt), manifest);
}

template <typename Scalar>
Checkpoint<Scalar> load_checkpoint(const std::filesystem::path& manifest) {
  return checkpoint_from_archive<Scalar>(load_archive(manifest));
}

}  // namespace avh::nn
