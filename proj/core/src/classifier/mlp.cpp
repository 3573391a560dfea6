#include "realcf/classifier/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "realcf/error.hpp"
#include "realcf/util/hash.hpp"

namespace realcf::clf {

using diff::Activation;
using diff::Bindings;
using diff::Graph;
using diff::Init;
using diff::Node;
using diff::ParameterSet;

namespace {

std::string layer_name(std::size_t k, const char* field) {
  return "h" + std::to_string(k) + "." + field;
}

enum class Mode { kTrain, kFrozen };

struct Builder {
  Graph& g;
  Mode mode;
  std::string prefix;

  Node weight(const std::string& name) const {
    if (mode == Mode::kTrain) return g.parameter(name);
    return g.stop_gradient(g.input(prefix + "/" + name));
  }
  Node stat(const std::string& name) const {
    return g.stop_gradient(g.input(prefix + "/" + name));
  }
};

struct Network {
  Node logits;
  Node penalty;                    // invalid when no layer has an L1 term
  std::vector<Node> batch_norms;   // training-mode BN nodes, one per BN layer
};

Network build(Graph& g, Node x, const MlpSpec& spec, Mode mode, std::string_view prefix) {
  const Builder b{g, mode, std::string(prefix)};
  Network net;
  Node h = x;
  if (spec.original_units) h = g.add(g.mul(h, b.stat("in.scale")), b.stat("in.shift"));
  for (std::size_t k = 0; k < spec.hidden.size(); ++k) {
    const LayerSpec& layer = spec.hidden[k];
    const Node w = b.weight(layer_name(k, "w"));
    h = g.add(g.matmul(h, w), b.weight(layer_name(k, "b")));
    h = diff::activate(g, h, layer.activation, layer.alpha);
    if (layer.batch_norm) {
      const Node gamma = b.weight(layer_name(k, "gamma"));
      const Node beta = b.weight(layer_name(k, "beta"));
      if (mode == Mode::kTrain) {
        h = g.batch_norm_train(h, gamma, beta, spec.bn_epsilon);
        net.batch_norms.push_back(h);
      } else {
        h = g.batch_norm_infer(h, gamma, beta, b.stat(layer_name(k, "mean")),
                               b.stat(layer_name(k, "var")), spec.bn_epsilon);
      }
    }
    if (mode == Mode::kTrain && layer.dropout > 0.0) {
      h = g.mul(h, g.input("dropout" + std::to_string(k)));
    }
    if (mode == Mode::kTrain && layer.l1 > 0.0) {
      const Node term = g.affine(g.sum(g.abs(w)), layer.l1, 0.0);
      net.penalty = net.penalty.valid() ? g.add(net.penalty, term) : term;
    }
  }
  const std::string out = "out";
  net.logits = g.add(g.matmul(h, b.weight(out + ".w")), b.weight(out + ".b"));
  return net;
}

Json layer_to_json(const LayerSpec& l) {
  return Json{{"units", l.units},
              {"activation", diff::activation_name(l.activation)},
              {"alpha", l.alpha},
              {"init", diff::init_name(l.init)},
              {"l1", l.l1},
              {"batch_norm", l.batch_norm},
              {"dropout", l.dropout}};
}

LayerSpec layer_from_json(const Json& j) {
  LayerSpec l;
  l.units = j.at("units").get<std::size_t>();
  l.activation = diff::parse_activation(j.value("activation", std::string("relu")));
  l.alpha = j.value("alpha", l.alpha);
  l.init = diff::parse_init(j.value("init", std::string("glorot_uniform")));
  l.l1 = j.value("l1", 0.0);
  l.batch_norm = j.value("batch_norm", false);
  l.dropout = j.value("dropout", 0.0);
  return l;
}

LayerSpec dense(std::size_t units, Activation act) {
  LayerSpec l;
  l.units = units;
  l.activation = act;
  if (act == Activation::kElu) l.alpha = 1.0;
  return l;
}

}  // namespace

void MlpSpec::validate() const {
  if (hidden.empty()) throw ConfigError("classifier needs at least one hidden layer");
  for (const LayerSpec& l : hidden) {
    if (l.units == 0) throw ConfigError("classifier layer width must be >= 1");
    if (l.dropout < 0.0 || l.dropout >= 1.0) throw ConfigError("dropout must be in [0, 1)");
    if (l.l1 < 0.0) throw ConfigError("L1 weight must be non-negative");
    if (l.activation == Activation::kSoftmax) {
      throw ConfigError("softmax is reserved for the output layer");
    }
  }
  if (!(learning_rate > 0.0)) throw ConfigError("classifier learning rate must be positive");
  if (batch_size == 0) throw ConfigError("classifier batch size must be >= 1");
  if (bn_momentum < 0.0 || bn_momentum >= 1.0) throw ConfigError("bn_momentum must be in [0, 1)");
}

Json MlpSpec::to_json() const {
  Json layers = Json::array();
  for (const LayerSpec& l : hidden) layers.push_back(layer_to_json(l));
  return Json{{"hidden", std::move(layers)}, {"learning_rate", learning_rate},
              {"epochs", epochs},            {"batch_size", batch_size},
              {"bn_momentum", bn_momentum},  {"bn_epsilon", bn_epsilon},
              {"original_units", original_units}};
}

MlpSpec MlpSpec::from_json(const Json& json) {
  MlpSpec s;
  try {
    for (const Json& l : json.at("hidden")) s.hidden.push_back(layer_from_json(l));
    s.learning_rate = json.value("learning_rate", s.learning_rate);
    s.epochs = json.value("epochs", s.epochs);
    s.batch_size = json.value("batch_size", s.batch_size);
    s.bn_momentum = json.value("bn_momentum", s.bn_momentum);
    s.bn_epsilon = json.value("bn_epsilon", s.bn_epsilon);
    s.original_units = json.value("original_units", s.original_units);
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("malformed classifier spec: ") + e.what());
  }
  s.validate();
  return s;
}

MlpSpec preset_classifier(const std::string& id) {
  MlpSpec s;
  if (id == "synthetic1") {
    s.hidden = {dense(64, Activation::kRelu), dense(32, Activation::kRelu),
                dense(16, Activation::kRelu)};
    s.learning_rate = 1e-3;
    s.epochs = 100;
    s.batch_size = 16;
  } else if (id == "synthetic2") {
    s.hidden = {dense(32, Activation::kRelu), dense(32, Activation::kRelu),
                dense(64, Activation::kRelu)};
    s.hidden[0].l1 = 0.01;
    s.learning_rate = 5e-4;
    // The label depends on sin(X5) over roughly 25 periods; the first layer
    // cannot resolve them from [0, 1] inputs at this learning rate.
    s.original_units = true;
    s.epochs = 800;
    s.batch_size = 16;
  } else if (id == "diabetes") {
    s.hidden = {dense(64, Activation::kLeakyRelu), dense(32, Activation::kLeakyRelu),
                dense(16, Activation::kLeakyRelu)};
    s.hidden[0].init = Init::kHeNormal;
    const double drop[] = {0.4, 0.4, 0.2};
    for (std::size_t k = 0; k < 3; ++k) {
      s.hidden[k].batch_norm = true;
      s.hidden[k].dropout = drop[k];
    }
    s.learning_rate = 0.01;
    s.epochs = 80;
    s.batch_size = 16;
  } else if (id == "sangiovese") {
    s.hidden = {dense(512, Activation::kRelu), dense(256, Activation::kRelu),
                dense(128, Activation::kRelu), dense(64, Activation::kRelu)};
    s.learning_rate = 1e-3;
    s.epochs = 60;
    s.batch_size = 32;
  } else if (id == "adult") {
    s.hidden = {dense(256, Activation::kElu), dense(128, Activation::kElu),
                dense(64, Activation::kElu), dense(32, Activation::kElu)};
    s.learning_rate = 1e-3;
    s.epochs = 120;
    s.batch_size = 16;
  } else {
    throw ConfigError("no classifier preset for dataset '" + id + "'");
  }
  return s;
}

ClassifierMetrics score(std::span<const int> truth, std::span<const int> predicted) {
  if (truth.size() != predicted.size()) throw ConfigError("score: length mismatch");
  ClassifierMetrics m;
  m.n = truth.size();
  if (m.n == 0) {
    m.warnings.push_back("no rows to score");
    return m;
  }
  std::size_t correct = 0, tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    correct += truth[i] == predicted[i];
    tp += truth[i] == 1 && predicted[i] == 1;
    fp += truth[i] == 0 && predicted[i] == 1;
    fn += truth[i] == 1 && predicted[i] == 0;
  }
  m.accuracy = static_cast<double>(correct) / static_cast<double>(m.n);
  const std::size_t denom = 2 * tp + fp + fn;
  if (denom == 0) {
    m.f1 = 0.0;
    m.warnings.push_back("F1 is undefined without positive labels or predictions; reported as 0");
  } else {
    m.f1 = 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
  }
  return m;
}

TrainedClassifier::TrainedClassifier(MlpSpec spec, std::size_t input_width, ParameterSet params,
                                     ParameterSet state)
    : spec_(std::move(spec)),
      input_width_(input_width),
      params_(std::move(params)),
      state_(std::move(state)) {}

std::uint64_t TrainedClassifier::checksum() const {
  return fnv1a64(hex64(params_.checksum()) + hex64(state_.checksum()));
}

Node TrainedClassifier::logits(Graph& graph, Node x, std::string_view prefix) const {
  return build(graph, x, spec_, Mode::kFrozen, prefix).logits;
}

void TrainedClassifier::bind(Bindings& bindings, std::string_view prefix) const {
  const std::string p(prefix);
  for (const auto& [name, value] : params_.entries()) bindings.set(p + "/" + name, value);
  for (const auto& [name, value] : state_.entries()) bindings.set(p + "/" + name, value);
}

Tensor TrainedClassifier::predict_proba(const Tensor& encoded) const {
  if (encoded.cols() != input_width_) {
    throw ConfigError("classifier expects width " + std::to_string(input_width_) + ", got " +
                      std::to_string(encoded.cols()));
  }
  if (encoded.rows() == 0) return Tensor::zeros(0, 2);
  Graph g;
  const Node probs = g.softmax(logits(g, g.input("x")));
  g.set_output(g.sum(probs));
  Bindings b;
  bind(b);
  b.set("x", encoded);
  g.evaluate(b);
  return g.value(probs);
}

std::vector<int> TrainedClassifier::predict(const Tensor& encoded) const {
  const Tensor p = predict_proba(encoded);
  std::vector<int> out(p.rows());
  for (std::size_t r = 0; r < p.rows(); ++r) out[r] = p(r, 1) > p(r, 0) ? 1 : 0;
  return out;
}

Json TrainedClassifier::to_json() const {
  Json params = Json::object(), state = Json::object();
  for (const auto& [name, value] : params_.entries()) params[name] = tensor_to_json(value);
  for (const auto& [name, value] : state_.entries()) state[name] = tensor_to_json(value);
  Json hist = Json::array();
  for (const EpochLog& e : history) hist.push_back(e.loss);
  return Json{{"format", "realcf.classifier"},
              {"version", 1},
              {"spec", spec_.to_json()},
              {"input_width", input_width_},
              {"parameters", std::move(params)},
              {"state", std::move(state)},
              {"test_metrics",
               {{"accuracy", test_metrics.accuracy},
                {"f1", test_metrics.f1},
                {"n", test_metrics.n},
                {"warnings", test_metrics.warnings}}},
              {"loss_history", std::move(hist)}};
}

TrainedClassifier TrainedClassifier::from_json(const Json& json) {
  try {
    if (json.value("format", std::string()) != "realcf.classifier") {
      throw ParseError("not a classifier document");
    }
    if (json.at("version").get<int>() != 1) throw ParseError("unsupported classifier version");
    ParameterSet params, state;
    for (const auto& [name, value] : json.at("parameters").items()) {
      params.add(name, tensor_from_json(value));
    }
    for (const auto& [name, value] : json.value("state", Json::object()).items()) {
      state.add(name, tensor_from_json(value));
    }
    TrainedClassifier clf(MlpSpec::from_json(json.at("spec")),
                          json.at("input_width").get<std::size_t>(), std::move(params),
                          std::move(state));
    if (json.contains("test_metrics")) {
      const Json& m = json.at("test_metrics");
      clf.test_metrics.accuracy = m.value("accuracy", 0.0);
      clf.test_metrics.f1 = m.value("f1", 0.0);
      clf.test_metrics.n = m.value("n", std::size_t{0});
      clf.test_metrics.warnings = m.value("warnings", std::vector<std::string>{});
    }
    const auto losses = json.value("loss_history", std::vector<double>{});
    for (std::size_t e = 0; e < losses.size(); ++e) clf.history.push_back({e, losses[e]});
    return clf;
  } catch (const Json::exception& e) {
    throw ParseError(std::string("malformed classifier document: ") + e.what());
  }
}

TrainedClassifier train_classifier(const data::Dataset& dataset, const MlpSpec& spec,
                                   std::uint64_t seed) {
  spec.validate();
  const data::FeatureEncoder encoder(dataset.schema, dataset.scaler);
  const std::vector<std::size_t>& rows =
      dataset.split.train_balanced.empty() ? dataset.split.train : dataset.split.train_balanced;
  if (rows.empty()) throw ConfigError("classifier training split is empty");
  const Tensor x = encoder.encode(dataset.gather(rows));
  const std::vector<int> y = dataset.labels(rows);
  const std::size_t width = encoder.width();

  std::mt19937_64 init_rng(seed);
  ParameterSet params, state;
  std::size_t fan_in = width;
  for (std::size_t k = 0; k < spec.hidden.size(); ++k) {
    const LayerSpec& l = spec.hidden[k];
    params.add(layer_name(k, "w"), diff::init_weight(fan_in, l.units, l.init, init_rng));
    params.add(layer_name(k, "b"), Tensor::zeros(1, l.units));
    if (l.batch_norm) {
      params.add(layer_name(k, "gamma"), Tensor::filled(1, l.units, 1.0));
      params.add(layer_name(k, "beta"), Tensor::zeros(1, l.units));
      state.add(layer_name(k, "mean"), Tensor::zeros(1, l.units));
      state.add(layer_name(k, "var"), Tensor::filled(1, l.units, 1.0));
    }
    fan_in = l.units;
  }
  params.add("out.w", diff::init_weight(fan_in, 2, Init::kGlorotUniform, init_rng));
  params.add("out.b", Tensor::zeros(1, 2));
  if (spec.original_units) {
    Tensor scale = Tensor::filled(1, width, 1.0), shift = Tensor::zeros(1, width);
    for (std::size_t j = 0; j < dataset.schema.size(); ++j) {
      if (!encoder.continuous(j)) continue;
      const std::size_t c = encoder.offset(j);
      scale[c] = dataset.scaler.max[j] - dataset.scaler.min[j];
      shift[c] = dataset.scaler.min[j];
    }
    state.add("in.scale", std::move(scale));
    state.add("in.shift", std::move(shift));
  }

  Graph g;
  const Network net = build(g, g.input("x"), spec, Mode::kTrain, "");
  Node loss = g.batch_mean(g.softmax_cross_entropy(net.logits, g.input("y")));
  g.set_label(loss, "classifier_ce");
  if (net.penalty.valid()) loss = g.add(loss, net.penalty);
  g.set_output(loss);

  std::vector<std::size_t> bn_layers, drop_layers;
  for (std::size_t k = 0; k < spec.hidden.size(); ++k) {
    if (spec.hidden[k].batch_norm) bn_layers.push_back(k);
    if (spec.hidden[k].dropout > 0.0) drop_layers.push_back(k);
  }
  std::vector<Tensor> drop_masks(spec.hidden.size());

  Tensor xb, yb;
  Bindings bindings;
  params.bind(bindings);
  if (spec.original_units) {
    bindings.set("/in.scale", state.at("in.scale")).set("/in.shift", state.at("in.shift"));
  }
  bindings.set("x", xb).set("y", yb);
  for (std::size_t k : drop_layers) bindings.set("dropout" + std::to_string(k), drop_masks[k]);

  diff::Adam adam(spec.learning_rate);
  std::mt19937_64 shuffle_rng(seed + 1), drop_rng(seed + 2);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<std::size_t> order(x.rows());
  std::iota(order.begin(), order.end(), 0);

  std::vector<EpochLog> history;
  for (std::size_t epoch = 0; epoch < spec.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += spec.batch_size) {
      const std::size_t n = std::min(spec.batch_size, order.size() - start);
      xb.resize(n, width);
      yb.resize(n, 2);
      for (std::size_t r = 0; r < n; ++r) {
        const std::size_t src = order[start + r];
        std::copy_n(x.row_span(src).begin(), width, xb.row_span(r).begin());
        yb(r, 0) = y[src] == 0 ? 1.0 : 0.0;
        yb(r, 1) = y[src] == 1 ? 1.0 : 0.0;
      }
      for (std::size_t k : drop_layers) {
        const double keep = 1.0 - spec.hidden[k].dropout;
        drop_masks[k].resize(n, spec.hidden[k].units);
        for (double& v : drop_masks[k].values()) v = unit(drop_rng) < keep ? 1.0 / keep : 0.0;
      }
      double value = 0.0;
      try {
        value = g.forward(bindings);
      } catch (const NumericalError& e) {
        throw TrainingError("classifier diverged in epoch " + std::to_string(epoch) + ": " +
                            e.what());
      }
      g.backward();
      adam.step(params, g);
      for (std::size_t b = 0; b < bn_layers.size(); ++b) {
        const std::size_t k = bn_layers[b];
        const Tensor& stats = g.aux(net.batch_norms[b]);
        Tensor& mean = state.at(layer_name(k, "mean"));
        Tensor& var = state.at(layer_name(k, "var"));
        const double m = spec.bn_momentum;
        for (std::size_t c = 0; c < mean.size(); ++c) {
          mean[c] = m * mean[c] + (1.0 - m) * stats(0, c);
          var[c] = m * var[c] + (1.0 - m) * stats(1, c);
        }
      }
      total += value;
      ++batches;
    }
    const double mean_loss = total / static_cast<double>(std::max<std::size_t>(batches, 1));
    if (!std::isfinite(mean_loss)) {
      throw TrainingError("classifier loss is non-finite in epoch " + std::to_string(epoch));
    }
    history.push_back({epoch, mean_loss});
  }

  TrainedClassifier clf(spec, width, std::move(params), std::move(state));
  clf.history = std::move(history);
  const Tensor test_x = encoder.encode(dataset.gather(dataset.split.test));
  clf.test_metrics = score(dataset.labels(dataset.split.test), clf.predict(test_x));
  return clf;
}

}  // namespace realcf::clf
