#include "avh/nn.hpp"

namespace avh::nn {

std::string_view activation_name(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    case Activation::sigmoid: return "sigmoid";
    case Activation::softmax: return "softmax";
    case Activation::none: return "none";
  }
  return "none";
}

Activation activation_from_name(std::string_view name) {
  for (auto a : {Activation::relu, Activation::tanh, Activation::sigmoid, Activation::softmax, Activation::none})
    if (activation_name(a) == name) return a;
  throw InvalidArgument("unknown activation '" + std::string(name) + "'");
}

std::string_view loss_name(LossKind k) {
  return k == LossKind::softmax_cross_entropy ? "softmax_cross_entropy" : "per_class_sigmoid_cross_entropy";
}

LossKind loss_from_name(std::string_view name) {
  if (name == "softmax_cross_entropy") return LossKind::softmax_cross_entropy;
  if (name == "per_class_sigmoid_cross_entropy") return LossKind::per_class_sigmoid_cross_entropy;
  throw InvalidArgument("unknown loss '" + std::string(name) + "'");
}

bool ModelSpec::has_batch_norm() const {
  if (input.batch_norm) return true;
  return std::any_of(layers.begin(), layers.end(), [](const LayerSpec& l) { return l.batch_norm; });
}

void ModelSpec::validate() const {
  if (input_width < 1) throw InvalidArgument("model input width must be >= 1");
  if (layers.empty()) throw InvalidArgument("model needs at least one layer");
  auto check_rate = [](double r, const std::string& where) {
    if (!(r >= 0.0 && r < 1.0)) throw InvalidArgument(where + ": dropout rate must lie in [0, 1)");
  };
  check_rate(input.dropout_rate, "input");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    const std::string where = "layer " + std::to_string(i);
    if (l.width < 1) throw InvalidArgument(where + ": width must be >= 1");
    check_rate(l.dropout_rate, where);
    if (l.activation == Activation::softmax && i + 1 != layers.size())
      throw InvalidArgument(where + ": softmax is only allowed on the output layer");
  }
  const auto out = layers.back().activation;
  if (loss == LossKind::softmax_cross_entropy && out != Activation::softmax)
    throw InvalidArgument("softmax cross-entropy needs a softmax output layer");
  if (loss == LossKind::per_class_sigmoid_cross_entropy && out != Activation::sigmoid)
    throw InvalidArgument("per-class sigmoid cross-entropy needs a sigmoid output layer");
  if (!(bn_momentum >= 0.0 && bn_momentum < 1.0)) throw InvalidArgument("bn_momentum must lie in [0, 1)");
  if (!(bn_epsilon > 0.0)) throw InvalidArgument("bn_epsilon must be positive");
}

nlohmann::json to_json(const ModelSpec& spec) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : spec.layers)
    layers.push_back({{"width", l.width},
                      {"activation", activation_name(l.activation)},
                      {"dropout_rate", l.dropout_rate},
                      {"batch_norm", l.batch_norm}});
  return {{"input_width", spec.input_width},
          {"input", {{"dropout_rate", spec.input.dropout_rate}, {"batch_norm", spec.input.batch_norm}}},
          {"layers", layers},
          {"loss", loss_name(spec.loss)},
          {"seed", spec.seed},
          {"bn_momentum", spec.bn_momentum},
          {"bn_epsilon", spec.bn_epsilon}};
}

ModelSpec model_spec_from_json(const nlohmann::json& j) {
  ModelSpec s;
  try {
    s.input_width = j.at("input_width").get<int>();
    if (j.contains("input")) {
      s.input.dropout_rate = j["input"].value("dropout_rate", 0.0);
      s.input.batch_norm = j["input"].value("batch_norm", false);
    }
    for (const auto& l : j.at("layers")) {
      LayerSpec ls;
      ls.width = l.at("width").get<int>();
      ls.activation = activation_from_name(l.at("activation").get<std::string>());
      ls.dropout_rate = l.value("dropout_rate", 0.0);
      ls.batch_norm = l.value("batch_norm", false);
      s.layers.push_back(ls);
    }
    s.loss = loss_from_name(j.at("loss").get<std::string>());
    s.seed = j.value("seed", std::uint64_t{0});
    s.bn_momentum = j.value("bn_momentum", 0.9);
    s.bn_epsilon = j.value("bn_epsilon", 1e-5);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("malformed model spec: ") + e.what());
  }
  s.validate();
  return s;
}

std::optional<std::size_t> find_layer_of_width(const ModelSpec& spec, int width) {
  for (std::size_t i = 0; i < spec.layers.size(); ++i)
    if (spec.layers[i].width == width) return i;
  return std::nullopt;
}

}  // namespace avh::nn
