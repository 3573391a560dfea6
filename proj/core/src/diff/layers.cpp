#include "realcf/diff/layers.hpp"

#include <cmath>
#include <cstring>

#include "realcf/error.hpp"

namespace realcf::diff {

Tensor& ParameterSet::add(std::string name, Tensor value) {
  auto [it, inserted] = values_.insert_or_assign(std::move(name), std::move(value));
  return it->second;
}

Tensor& ParameterSet::at(std::string_view name) {
  auto it = values_.find(name);
  if (it == values_.end()) throw ConfigError("unknown parameter '" + std::string(name) + "'");
  return it->second;
}

const Tensor& ParameterSet::at(std::string_view name) const {
  auto it = values_.find(name);
  if (it == values_.end()) throw ConfigError("unknown parameter '" + std::string(name) + "'");
  return it->second;
}

void ParameterSet::bind(Bindings& bindings) const {
  for (const auto& [name, value] : values_) bindings.set(name, value);
}

std::size_t ParameterSet::count() const {
  std::size_t total = 0;
  for (const auto& [name, value] : values_) total += value.size();
  return total;
}

std::uint64_t ParameterSet::checksum() const {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const void* data, std::size_t size) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < size; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& [name, value] : values_) {
    mix(name.data(), name.size());
    for (std::size_t d : value.shape()) mix(&d, sizeof d);
    mix(value.data(), value.size() * sizeof(double));
  }
  return h;
}

Activation parse_activation(std::string_view name) {
  if (name == "linear" || name == "none") return Activation::kLinear;
  if (name == "relu") return Activation::kRelu;
  if (name == "leaky_relu" || name == "leakyrelu") return Activation::kLeakyRelu;
  if (name == "elu") return Activation::kElu;
  if (name == "sigmoid") return Activation::kSigmoid;
  if (name == "softmax") return Activation::kSoftmax;
  throw ConfigError("unknown activation '" + std::string(name) + "'");
}

std::string_view activation_name(Activation activation) {
  switch (activation) {
    case Activation::kLinear: return "linear";
    case Activation::kRelu: return "relu";
    case Activation::kLeakyRelu: return "leaky_relu";
    case Activation::kElu: return "elu";
    case Activation::kSigmoid: return "sigmoid";
    case Activation::kSoftmax: return "softmax";
  }
  return "linear";
}

Node activate(Graph& graph, Node x, Activation activation, double alpha) {
  switch (activation) {
    case Activation::kLinear: return x;
    case Activation::kRelu: return graph.relu(x);
    case Activation::kLeakyRelu: return graph.leaky_relu(x, alpha);
    case Activation::kElu: return graph.elu(x, alpha);
    case Activation::kSigmoid: return graph.sigmoid(x);
    case Activation::kSoftmax: return graph.softmax(x);
  }
  return x;
}

Init parse_init(std::string_view name) {
  if (name == "glorot_uniform") return Init::kGlorotUniform;
  if (name == "he_normal") return Init::kHeNormal;
  if (name == "zeros") return Init::kZeros;
  throw ConfigError("unknown initializer '" + std::string(name) + "'");
}

std::string_view init_name(Init init) {
  switch (init) {
    case Init::kGlorotUniform: return "glorot_uniform";
    case Init::kHeNormal: return "he_normal";
    case Init::kZeros: return "zeros";
  }
  return "glorot_uniform";
}

Tensor init_weight(std::size_t fan_in, std::size_t fan_out, Init init, std::mt19937_64& rng) {
  Tensor w = Tensor::zeros(fan_in, fan_out);
  switch (init) {
    case Init::kZeros:
      break;
    case Init::kGlorotUniform: {
      const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
      std::uniform_real_distribution<double> dist(-limit, limit);
      for (double& v : w.values()) v = dist(rng);
      break;
    }
    case Init::kHeNormal: {
      // Truncated at two standard deviations, as Keras does.
      const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
      std::normal_distribution<double> dist(0.0, 1.0);
      for (double& v : w.values()) {
        double s = dist(rng);
        while (std::fabs(s) > 2.0) s = dist(rng);
        v = s * stddev / 0.87962566103423978;
      }
      break;
    }
  }
  return w;
}

void add_dense(ParameterSet& params, const std::string& prefix, std::size_t in, std::size_t out,
               Init init, std::mt19937_64& rng) {
  params.add(prefix + ".w", init_weight(in, out, init, rng));
  params.add(prefix + ".b", Tensor::zeros(1, out));
}

Node dense(Graph& graph, Node x, const std::string& prefix, bool frozen) {
  Node w, b;
  if (frozen) {
    w = graph.stop_gradient(graph.input(prefix + ".w"));
    b = graph.stop_gradient(graph.input(prefix + ".b"));
  } else {
    w = graph.parameter(prefix + ".w");
    b = graph.parameter(prefix + ".b");
  }
  return graph.add(graph.matmul(x, w), b);
}

Adam::Adam(double learning_rate, double beta1, double beta2, double epsilon)
    : lr_(learning_rate), beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {
  if (!(learning_rate > 0)) throw ConfigError("learning rate must be positive");
}

void Adam::step(ParameterSet& params, const Graph& graph) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  const double lr = lr_ * std::sqrt(c2) / c1;
  for (auto& [name, value] : params.entries()) {
    const Tensor& grad = graph.leaf_gradient(name);
    if (grad.size() != value.size()) {
      throw ConfigError("gradient shape mismatch for parameter '" + name + "'");
    }
    auto [mit, m_new] = m_.try_emplace(name, Tensor::zeros(value.rows(), value.cols()));
    auto [vit, v_new] = v_.try_emplace(name, Tensor::zeros(value.rows(), value.cols()));
    Tensor& m = mit->second;
    Tensor& v = vit->second;
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double g = grad[i];
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
      value[i] -= lr * m[i] / (std::sqrt(v[i]) + epsilon_);
    }
  }
}

FiniteDiffReport finite_diff_check(Graph& graph, const Bindings& bindings, double h,
                                   std::vector<std::string> leaves) {
  if (!(h > 0)) throw ConfigError("finite difference step must be positive");
  if (leaves.empty()) leaves = graph.leaf_names(LeafKind::kParameter);

  graph.forward(bindings);
  graph.backward();
  std::map<std::string, Tensor> analytic;
  std::map<std::string, Tensor> perturbed;
  Bindings local = bindings;
  for (const std::string& name : leaves) {
    analytic.emplace(name, graph.leaf_gradient(name));
    const Tensor* bound = bindings.find(name);
    if (!bound) throw ConfigError("leaf '" + name + "' is not bound");
    perturbed.emplace(name, *bound);
  }
  for (auto& [name, tensor] : perturbed) local.set(name, tensor);

  FiniteDiffReport report;
  for (const std::string& name : leaves) {
    Tensor& t = perturbed.at(name);
    const Tensor& grad = analytic.at(name);
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double saved = t[i];
      t[i] = saved + h;
      const double up = graph.forward(local);
      t[i] = saved - h;
      const double down = graph.forward(local);
      t[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double err = std::fabs(grad[i] - numeric) / std::max(1.0, std::fabs(grad[i]));
      ++report.entries_checked;
      if (err > report.max_rel_error || report.worst_leaf.empty()) {
        report.max_rel_error = std::max(report.max_rel_error, err);
        report.worst_leaf = name;
        report.worst_index = i;
        report.worst_analytic = grad[i];
        report.worst_numeric = numeric;
      }
    }
  }
  graph.forward(bindings);
  graph.backward();
  return report;
}

}  // namespace realcf::diff
