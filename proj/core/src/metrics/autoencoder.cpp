#include "realcf/metrics/autoencoder.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include "realcf/error.hpp"

namespace realcf::metrics {

using diff::Bindings;
using diff::Graph;
using diff::Node;

namespace {

constexpr std::size_t kMinRows = 10;

std::vector<std::size_t> layer_widths(const AutoencoderSpec& spec) {
  std::vector<std::size_t> widths = spec.hidden;
  widths.push_back(spec.latent_dim);
  for (std::size_t k = spec.hidden.size(); k-- > 0;) widths.push_back(spec.hidden[k]);
  return widths;
}

Node network(Graph& g, Node x, std::size_t layers) {
  Node h = x;
  for (std::size_t k = 0; k < layers; ++k) {
    h = diff::dense(g, h, "ae" + std::to_string(k));
    // The bottleneck stays linear.
    if (k + 1 != (layers + 1) / 2) h = g.relu(h);
  }
  return g.sigmoid(diff::dense(g, h, "ae_out"));
}

}  // namespace

Json AutoencoderSpec::to_json() const {
  return Json{{"hidden", hidden},         {"latent_dim", latent_dim},
              {"epochs", epochs},         {"batch_size", batch_size},
              {"learning_rate", learning_rate}};
}

AutoencoderSpec AutoencoderSpec::from_json(const Json& json) {
  AutoencoderSpec s;
  s.hidden = json.value("hidden", s.hidden);
  s.latent_dim = json.value("latent_dim", s.latent_dim);
  s.epochs = json.value("epochs", s.epochs);
  s.batch_size = json.value("batch_size", s.batch_size);
  s.learning_rate = json.value("learning_rate", s.learning_rate);
  if (s.latent_dim == 0 || s.batch_size == 0) throw ConfigError("autoencoder sizes must be >= 1");
  return s;
}

Autoencoder Autoencoder::fit(const Tensor& rows, const AutoencoderSpec& spec, std::uint64_t seed) {
  if (rows.rows() < kMinRows) {
    throw ConfigError("autoencoder needs at least " + std::to_string(kMinRows) +
                      " training rows, got " + std::to_string(rows.rows()));
  }
  Autoencoder ae;
  ae.spec_ = spec;
  ae.width_ = rows.cols();
  std::mt19937_64 rng(seed);
  const auto widths = layer_widths(spec);
  std::size_t fan_in = ae.width_;
  for (std::size_t k = 0; k < widths.size(); ++k) {
    diff::add_dense(ae.params_, "ae" + std::to_string(k), fan_in, widths[k],
                    diff::Init::kGlorotUniform, rng);
    fan_in = widths[k];
  }
  diff::add_dense(ae.params_, "ae_out", fan_in, ae.width_, diff::Init::kGlorotUniform, rng);

  Graph g;
  const Node x = g.input("x");
  const Node recon = network(g, x, widths.size());
  g.set_output(g.batch_mean(g.row_sum(g.square(g.sub(recon, x)))));
  Tensor xb;
  Bindings b;
  ae.params_.bind(b);
  b.set("x", xb);
  diff::Adam adam(spec.learning_rate);
  std::vector<std::size_t> order(rows.rows());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < spec.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += spec.batch_size) {
      const std::size_t n = std::min(spec.batch_size, order.size() - start);
      xb.resize(n, ae.width_);
      for (std::size_t r = 0; r < n; ++r) {
        std::copy_n(rows.row_span(order[start + r]).begin(), ae.width_, xb.row_span(r).begin());
      }
      try {
        g.forward(b);
      } catch (const NumericalError& e) {
        throw TrainingError("autoencoder diverged in epoch " + std::to_string(epoch) + ": " +
                            e.what());
      }
      g.backward();
      adam.step(ae.params_, g);
    }
  }
  return ae;
}

Tensor Autoencoder::reconstruct(const Tensor& rows) const {
  if (rows.cols() != width_) throw ConfigError("autoencoder width mismatch");
  Graph g;
  const Node recon = network(g, g.input("x"), layer_widths(spec_).size());
  g.set_output(g.sum(recon));
  Bindings b;
  params_.bind(b);
  b.set("x", rows);
  g.evaluate(b);
  return g.value(recon);
}

std::vector<double> Autoencoder::errors(const Tensor& rows) const {
  const Tensor recon = reconstruct(rows);
  std::vector<double> out(rows.rows(), 0.0);
  for (std::size_t r = 0; r < rows.rows(); ++r) {
    for (std::size_t c = 0; c < width_; ++c) {
      const double e = rows(r, c) - recon(r, c);
      out[r] += e * e;
    }
  }
  return out;
}

Json Autoencoder::to_json() const {
  Json params = Json::object();
  for (const auto& [name, value] : params_.entries()) params[name] = tensor_to_json(value);
  return Json{{"spec", spec_.to_json()}, {"width", width_}, {"parameters", std::move(params)}};
}

Autoencoder Autoencoder::from_json(const Json& json) {
  Autoencoder ae;
  try {
    ae.spec_ = AutoencoderSpec::from_json(json.at("spec"));
    ae.width_ = json.at("width").get<std::size_t>();
    for (const auto& [name, value] : json.at("parameters").items()) {
      ae.params_.add(name, tensor_from_json(value));
    }
  } catch (const Json::exception& e) {
    throw ParseError(std::string("malformed autoencoder: ") + e.what());
  }
  return ae;
}

}  // namespace realcf::metrics
