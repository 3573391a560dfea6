#include "realcf/realac/cvae.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "realcf/error.hpp"

namespace realcf::realac {

using diff::Bindings;
using diff::Graph;
using diff::Node;

namespace {

constexpr double kLogvarBound = 20.0;

Tensor one_hot(std::span<const int> y) {
  Tensor t = Tensor::zeros(y.size(), 2);
  for (std::size_t r = 0; r < y.size(); ++r) {
    if (y[r] != 0 && y[r] != 1) throw ConfigError("target labels must be 0 or 1");
    t(r, static_cast<std::size_t>(y[r])) = 1.0;
  }
  return t;
}

std::string hidden_name(const char* side, std::size_t k) {
  return std::string(side) + std::to_string(k);
}

struct Network {
  Node mu, logvar, z, xhat;
};

Node decoder(Graph& g, const CvaeModel& model, Node z, Node y) {
  const auto& hidden = model.config().hidden;
  Node h = g.concat_cols({z, y});
  for (std::size_t k = 0; k < hidden.size(); ++k) {
    h = g.relu(diff::dense(g, h, hidden_name("dec", k)));
  }
  const Node raw = diff::dense(g, h, "dec_out");
  const data::FeatureEncoder& enc = model.encoder();
  // Consecutive continuous columns share one sigmoid; each categorical block
  // gets its own softmax.
  std::vector<Node> parts;
  std::size_t j = 0;
  while (j < enc.features()) {
    if (enc.continuous(j)) {
      std::size_t end = j;
      while (end < enc.features() && enc.continuous(end)) ++end;
      const std::size_t begin_col = enc.offset(j);
      const std::size_t count = enc.offset(end - 1) + 1 - begin_col;
      parts.push_back(g.sigmoid(count == enc.width() ? raw : g.slice_cols(raw, begin_col, count)));
      j = end;
    } else {
      parts.push_back(g.softmax(g.slice_cols(raw, enc.offset(j), enc.span(j))));
      ++j;
    }
  }
  return parts.size() == 1 ? parts[0] : g.concat_cols(std::move(parts));
}

Network build_network(Graph& g, const CvaeModel& model, Node x0, Node mask, Node y,
                      Node noise) {
  const auto& hidden = model.config().hidden;
  Network net;
  Node h = g.concat_cols({x0, mask, y});
  for (std::size_t k = 0; k < hidden.size(); ++k) {
    h = g.relu(diff::dense(g, h, hidden_name("enc", k)));
  }
  net.mu = diff::dense(g, h, "enc_mu");
  net.logvar = g.clamp(diff::dense(g, h, "enc_logvar"), -kLogvarBound, kLogvarBound);
  net.z = noise.valid() ? g.reparameterize(net.mu, net.logvar, noise) : net.mu;
  net.xhat = decoder(g, model, net.z, y);
  return net;
}

Json weights_json(const LossWeights& w) {
  return Json{{"lambda_flip", w.flip}, {"lambda_dep", w.dep}, {"lambda_fixed", w.fixed},
              {"lambda_mse", w.dist},  {"lambda_kl", w.kl},   {"lambda_sum", w.sum}};
}

}  // namespace

void LossWeights::validate() const {
  for (double v : {flip, dep, fixed, dist, kl, sum}) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("loss weights must be finite and >= 0");
  }
}

void CvaeConfig::validate() const {
  weights.validate();
  if (latent_dim == 0) throw ConfigError("latent_dim must be >= 1");
  if (hidden.empty()) throw ConfigError("CVAE needs at least one hidden layer");
  for (std::size_t h : hidden) {
    if (h == 0) throw ConfigError("CVAE hidden widths must be >= 1");
  }
  if (batch_size < 2) throw ConfigError("CVAE batch size must be >= 2");
  if (!(learning_rate > 0.0)) throw ConfigError("CVAE learning rate must be positive");
  if (bins < 2) throw ConfigError("bins must be >= 2");
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
}

Json CvaeConfig::to_json() const {
  Json j = weights_json(weights);
  j["latent_dim"] = latent_dim;
  j["hidden"] = hidden;
  j["epochs"] = epochs;
  j["batch_size"] = batch_size;
  j["learning_rate"] = learning_rate;
  j["bins"] = bins;
  j["temperature"] = temperature;
  j["fixed_size"] = n_fixed;
  return j;
}

CvaeConfig CvaeConfig::from_json(const Json& json) {
  CvaeConfig c;
  try {
    c.weights.flip = json.value("lambda_flip", c.weights.flip);
    c.weights.dep = json.value("lambda_dep", json.value("lambda_mi", c.weights.dep));
    c.weights.fixed = json.value("lambda_fixed", c.weights.fixed);
    c.weights.dist = json.value("lambda_mse", json.value("lambda_dist", c.weights.dist));
    c.weights.kl = json.value("lambda_kl", c.weights.kl);
    c.weights.sum = json.value("lambda_sum", c.weights.sum);
    c.latent_dim = json.value("latent_dim", c.latent_dim);
    c.hidden = json.value("hidden", c.hidden);
    c.epochs = json.value("epochs", c.epochs);
    c.batch_size = json.value("batch_size", c.batch_size);
    c.learning_rate = json.value("learning_rate", c.learning_rate);
    c.bins = json.value("bins", c.bins);
    c.temperature = json.value("temperature", c.temperature);
    c.n_fixed = json.value("fixed_size", json.value("n_fixed", c.n_fixed));
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("malformed CVAE config: ") + e.what());
  }
  c.validate();
  return c;
}

CvaeConfig preset_cvae(const std::string& id) {
  CvaeConfig c;
  if (id == "synthetic1") {
    c.latent_dim = 15;
    c.weights = {1.0, 4.0, 0.5, 2.0, 0.05, 2.0};
    c.epochs = 100;
    c.batch_size = 16;
    c.learning_rate = 1e-2;
  } else if (id == "synthetic2") {
    c.latent_dim = 10;
    c.weights = {555.0, 10.0, 0.5, 830.0, 10.0, 0.0};
    c.epochs = 300;
    c.batch_size = 64;
    c.learning_rate = 5e-4;
  } else if (id == "diabetes") {
    c.latent_dim = 15;
    c.weights = {10.0, 2.0, 500.0, 0.6, 0.005, 0.0};
    c.epochs = 500;
    c.batch_size = 16;
    c.learning_rate = 5e-4;
  } else if (id == "sangiovese") {
    c.latent_dim = 15;
    c.weights = {3.0, 10.0, 0.5, 6.5, 1e-4, 0.0};
    c.epochs = 120;
    c.batch_size = 16;
    c.learning_rate = 5e-4;
  } else if (id == "adult") {
    c.latent_dim = 20;
    c.weights = {200.0, 6.0, 0.5, 4.0, 1e-5, 0.0};
    c.epochs = 80;
    c.batch_size = 16;
    c.learning_rate = 1e-3;
    c.n_fixed = 2;
  } else {
    throw ConfigError("no CVAE preset for dataset '" + id + "'");
  }
  c.bins = 50;
  return c;
}

CvaeModel::CvaeModel(const data::Dataset& dataset, data::EdgeList edges, CvaeConfig config,
                     std::uint64_t seed)
    : config_(std::move(config)),
      schema_(dataset.schema),
      scaler_(dataset.scaler),
      encoder_(dataset.schema, dataset.scaler),
      edges_(std::move(edges)) {
  config_.validate();
  edges_.validate(schema_);
  const std::size_t width = encoder_.width();
  std::mt19937_64 rng(seed);
  std::size_t fan_in = 2 * width + 2;  // x0, expanded mask, one-hot target
  for (std::size_t k = 0; k < config_.hidden.size(); ++k) {
    diff::add_dense(params_, hidden_name("enc", k), fan_in, config_.hidden[k],
                    diff::Init::kGlorotUniform, rng);
    fan_in = config_.hidden[k];
  }
  diff::add_dense(params_, "enc_mu", fan_in, config_.latent_dim, diff::Init::kGlorotUniform, rng);
  diff::add_dense(params_, "enc_logvar", fan_in, config_.latent_dim, diff::Init::kGlorotUniform,
                  rng);
  fan_in = config_.latent_dim + 2;
  for (std::size_t k = 0; k < config_.hidden.size(); ++k) {
    const std::size_t out = config_.hidden[config_.hidden.size() - 1 - k];
    diff::add_dense(params_, hidden_name("dec", k), fan_in, out, diff::Init::kGlorotUniform, rng);
    fan_in = out;
  }
  diff::add_dense(params_, "dec_out", fan_in, width, diff::Init::kGlorotUniform, rng);

  const auto& rows = dataset.split.train;
  if (rows.empty()) throw ConfigError("CVAE needs a non-empty training split");
  const Tensor encoded = encoder_.encode(dataset.gather(rows));
  std::vector<std::size_t> features = schema_.continuous_indices();
  std::vector<std::size_t> columns;
  for (std::size_t f : features) columns.push_back(encoder_.offset(f));
  reference_ = dep::ReferenceMi::compute(encoded, features, columns, config_.bins);
  loss_reference_ =
      dep::ReferenceMi::compute(encoded, features, columns, dep::soft_bins(config_.batch_size));
  dep_pairs_ = dep::all_pairs(features);
}

std::pair<Tensor, Tensor> CvaeModel::encode(const Tensor& x0, const Tensor& mask,
                                            std::span<const int> ycf) const {
  if (x0.cols() != encoder_.width()) throw ConfigError("CVAE encoder width mismatch");
  if (!mask.same_shape(x0)) throw ConfigError("CVAE mask must match the encoded rows");
  if (x0.rows() != ycf.size()) throw ConfigError("CVAE targets do not match rows");
  Graph g;
  const Network net =
      build_network(g, *this, g.input("x0"), g.input("mask"), g.input("ycf"), Node{});
  g.set_output(g.add(g.sum(net.mu), g.sum(net.logvar)));
  const Tensor y = one_hot(ycf);
  Bindings b;
  params_.bind(b);
  b.set("x0", x0).set("mask", mask).set("ycf", y);
  g.evaluate(b);
  return {g.value(net.mu), g.value(net.logvar)};
}

Tensor CvaeModel::decode(const Tensor& z, std::span<const int> ycf) const {
  if (z.cols() != config_.latent_dim) throw ConfigError("latent width mismatch");
  if (z.rows() != ycf.size()) throw ConfigError("CVAE targets do not match rows");
  Graph g;
  const Node xhat = decoder(g, *this, g.input("z"), g.input("ycf"));
  g.set_output(g.sum(xhat));
  const Tensor y = one_hot(ycf);
  Bindings b;
  params_.bind(b);
  b.set("z", z).set("ycf", y);
  g.evaluate(b);
  return g.value(xhat);
}

Json CvaeModel::to_json() const {
  Json params = Json::object();
  for (const auto& [name, value] : params_.entries()) params[name] = tensor_to_json(value);
  Json hist = Json::array();
  for (const TermValues& t : history) {
    hist.push_back({{"total", t.total}, {"flip", t.flip}, {"dep", t.dep},
                    {"fixed_cont", t.fixed_cont}, {"fixed_cat", t.fixed_cat},
                    {"dist_cont", t.dist_cont}, {"dist_cat", t.dist_cat}, {"kl", t.kl},
                    {"sum", t.sum}});
  }
  return Json{{"format", "realcf.cvae"},
              {"version", 1},
              {"config", config_.to_json()},
              {"schema", schema_.to_json()},
              {"scaler", scaler_.to_json()},
              {"edges", edges_.to_json(schema_)},
              {"parameters", std::move(params)},
              {"reference_mi", reference_.to_json()},
              {"loss_reference_mi", loss_reference_.to_json()},
              {"history", std::move(hist)}};
}

CvaeModel CvaeModel::from_json(const Json& json) {
  CvaeModel m;
  try {
    if (json.value("format", std::string()) != "realcf.cvae") throw ParseError("not a CVAE document");
    if (json.at("version").get<int>() != 1) throw ParseError("unsupported CVAE version");
    m.config_ = CvaeConfig::from_json(json.at("config"));
    m.schema_ = data::FeatureSchema::from_json(json.at("schema"));
    m.scaler_ = data::Scaler::from_json(json.at("scaler"));
    m.encoder_ = data::FeatureEncoder(m.schema_, m.scaler_);
    m.edges_ = data::EdgeList::from_json(json.at("edges"), m.schema_);
    for (const auto& [name, value] : json.at("parameters").items()) {
      m.params_.add(name, tensor_from_json(value));
    }
    m.reference_ = dep::ReferenceMi::from_json(json.at("reference_mi"));
    m.loss_reference_ = dep::ReferenceMi::from_json(json.at("loss_reference_mi"));
    m.dep_pairs_ = dep::all_pairs(m.schema_.continuous_indices());
    for (const Json& t : json.value("history", Json::array())) {
      TermValues v;
      v.total = t.value("total", 0.0);
      v.flip = t.value("flip", 0.0);
      v.dep = t.value("dep", 0.0);
      v.fixed_cont = t.value("fixed_cont", 0.0);
      v.fixed_cat = t.value("fixed_cat", 0.0);
      v.dist_cont = t.value("dist_cont", 0.0);
      v.dist_cat = t.value("dist_cat", 0.0);
      v.kl = t.value("kl", 0.0);
      v.sum = t.value("sum", 0.0);
      m.history.push_back(v);
    }
  } catch (const Json::exception& e) {
    throw ParseError(std::string("malformed CVAE document: ") + e.what());
  }
  return m;
}

Tensor sample_latent(const Tensor& mu, const Tensor& logvar, std::uint64_t seed) {
  if (!mu.same_shape(logvar)) throw ConfigError("sample_latent: shape mismatch");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor z = mu;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double lv = std::clamp(logvar[i], -kLogvarBound, kLogvarBound);
    z[i] = mu[i] + std::exp(0.5 * lv) * normal(rng);
  }
  return z;
}

Tensor merge_mask(const Tensor& x0, const Tensor& xhat, const Tensor& mask) {
  if (!x0.same_shape(xhat) || !x0.same_shape(mask)) throw ConfigError("merge_mask: shape mismatch");
  Tensor out = xhat;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (mask[i] == 1.0) {
      out[i] = x0[i];
    } else if (mask[i] != 0.0) {
      throw ConfigError("mask entries must be 0 or 1");
    }
  }
  return out;
}

Tensor enforce_immutables(const data::FeatureSchema& schema, Tensor mask) {
  if (mask.cols() != schema.size()) throw ConfigError("mask width does not match the schema");
  for (std::size_t r = 0; r < mask.rows(); ++r) {
    for (std::size_t j = 0; j < schema.size(); ++j) {
      if (mask(r, j) != 0.0 && mask(r, j) != 1.0) throw ConfigError("mask entries must be 0 or 1");
      if (!schema[j].default_mutable) mask(r, j) = 1.0;
    }
  }
  return mask;
}

std::map<std::string, Node> LossGraph::terms() const {
  return {{"flip", flip},           {"dep", dep},        {"fixed_cont", fixed_cont},
          {"fixed_cat", fixed_cat}, {"dist_cont", dist_cont}, {"dist_cat", dist_cat},
          {"kl", kl},               {"sum", sum},        {"total", total}};
}

TermValues LossGraph::values() const {
  auto v = [&](Node n) { return graph.value(n).item(); };
  return {v(flip), v(dep), v(fixed_cont), v(fixed_cat), v(dist_cont), v(dist_cat),
          v(kl),   v(sum), v(total)};
}

std::unique_ptr<LossGraph> build_loss_graph(const CvaeModel& model,
                                            const clf::TrainedClassifier& classifier,
                                            std::optional<LossWeights> weights) {
  const LossWeights w = weights.value_or(model.config().weights);
  w.validate();
  const data::FeatureEncoder& enc = model.encoder();
  if (classifier.input_width() != enc.width()) {
    throw ConfigError("classifier width does not match the CVAE feature layout");
  }
  auto lg = std::make_unique<LossGraph>();
  Graph& g = lg->graph;
  lg->x0 = g.input("x0");
  lg->ycf = g.input("ycf");
  lg->mask = g.input("mask");
  lg->noise = g.input("noise");
  const Network net = build_network(g, model, lg->x0, lg->mask, lg->ycf, lg->noise);
  lg->mu = net.mu;
  lg->logvar = net.logvar;
  lg->z = net.z;
  lg->xhat = net.xhat;

  const Node keep = g.affine(lg->mask, -1.0, 1.0);  // 1 - m
  lg->xcf = g.add(g.mul(lg->mask, lg->x0), g.mul(keep, lg->xhat));
  g.set_label(lg->xcf, "x_cf");
  lg->cf_logits = classifier.logits(g, lg->xcf, "clf");
  lg->flip = g.batch_mean(g.softmax_cross_entropy(lg->cf_logits, lg->ycf));

  const Tensor cont = enc.continuous_indicator();
  Tensor cat = cont;
  for (double& v : cat.values()) v = 1.0 - v;
  const Node cont_ind = g.constant(cont, "continuous_columns");
  const Node cat_ind = g.constant(cat, "categorical_columns");
  const Node sq = g.mul(g.square(g.sub(lg->x0, lg->xhat)), cont_ind);
  // -x0 * log(p) on one-hot columns; summing a block gives the CE of that feature.
  const Node ce = g.mul(g.mul(g.log(lg->xhat), lg->x0), g.affine(cat_ind, -1.0, 0.0));
  lg->fixed_cont = g.batch_mean(g.mul(sq, lg->mask));
  lg->dist_cont = g.batch_mean(g.mul(sq, keep));
  if (model.schema().has_categoricals()) {
    lg->fixed_cat = g.batch_mean(g.mul(ce, lg->mask));
    lg->dist_cat = g.batch_mean(g.mul(ce, keep));
  } else {
    lg->fixed_cat = g.constant(Tensor::scalar(0.0), "no_categoricals");
    lg->dist_cat = lg->fixed_cat;
  }
  lg->kl = g.batch_mean(g.kl_standard_normal(lg->mu, lg->logvar));
  lg->dep = dep::dep_loss(g, lg->xcf, model.loss_reference(), model.dep_pairs(),
                          model.config().temperature);

  const auto& sums = model.edges().sums;
  if (sums.empty()) {
    lg->sum = g.constant(Tensor::scalar(0.0), "no_sum_constraints");
  } else {
    const data::Scaler& s = model.scaler();
    std::vector<Node> parts;
    for (const data::SumConstraint& c : sums) {
      auto original = [&](std::size_t f) {
        return g.affine(g.slice_cols(lg->xhat, enc.offset(f), 1), s.max[f] - s.min[f], s.min[f]);
      };
      const Node total = g.add(original(c.a), original(c.b));
      parts.push_back(g.batch_mean(g.square(g.affine(total, 1.0, -c.total))));
    }
    lg->sum = parts.size() == 1 ? parts[0] : g.mean(g.concat_cols(std::move(parts)));
  }

  const std::pair<Node*, const char*> labels[] = {
      {&lg->flip, "L_flip"},           {&lg->dep, "L_dep"},
      {&lg->fixed_cont, "L_fixed,cont"}, {&lg->fixed_cat, "L_fixed,cat"},
      {&lg->dist_cont, "L_dist,cont"},   {&lg->dist_cat, "L_dist,cat"},
      {&lg->kl, "KL"},                   {&lg->sum, "L_sum"}};
  for (const auto& [node, label] : labels) g.set_label(*node, label);

  Node total = g.affine(lg->flip, w.flip, 0.0);
  total = g.add(total, g.affine(lg->dep, w.dep, 0.0));
  total = g.add(total, g.affine(g.add(lg->fixed_cont, lg->fixed_cat), w.fixed, 0.0));
  total = g.add(total, g.affine(g.add(lg->dist_cont, lg->dist_cat), w.dist, 0.0));
  total = g.add(total, g.affine(lg->kl, w.kl, 0.0));
  total = g.add(total, g.affine(lg->sum, w.sum, 0.0));
  lg->total = total;
  g.set_label(total, "L_total");
  g.set_output(total);
  return lg;
}

void bind_weights(Bindings& bindings, const CvaeModel& model,
                  const clf::TrainedClassifier& classifier) {
  model.parameters().bind(bindings);
  classifier.bind(bindings, "clf");
}

Tensor draw_training_mask(const data::FeatureSchema& schema, std::size_t rows, std::size_t n_fixed,
                          std::mt19937_64& rng) {
  const std::size_t d = schema.size();
  Tensor mask = Tensor::zeros(rows, d);
  const double p = d == 0 ? 0.0 : static_cast<double>(n_fixed) / static_cast<double>(d);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < d; ++j) {
      const bool frozen = p > 0.0 && unit(rng) < p;
      mask(r, j) = (frozen || !schema[j].default_mutable) ? 1.0 : 0.0;
    }
  }
  return mask;
}

CvaeModel train_cf_model(const data::Dataset& dataset, const clf::TrainedClassifier& classifier,
                         const data::EdgeList& edges, const CvaeConfig& config,
                         std::uint64_t seed) {
  CvaeModel model(dataset, edges, config, seed);
  const auto& rows =
      dataset.split.train_balanced.empty() ? dataset.split.train : dataset.split.train_balanced;
  const data::FeatureEncoder& enc = model.encoder();
  const Tensor x = enc.encode(dataset.gather(rows));
  const std::vector<int> pred = classifier.predict(x);
  const std::size_t width = enc.width();

  auto lg = build_loss_graph(model, classifier);
  Tensor xb, yb, mb, nb;
  Bindings bindings;
  bind_weights(bindings, model, classifier);
  bindings.set("x0", xb).set("ycf", yb).set("mask", mb).set("noise", nb);

  diff::Adam adam(config.learning_rate);
  std::mt19937_64 shuffle_rng(seed + 1), mask_rng(seed + 2), noise_rng(seed + 3);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::size_t> order(x.rows());
  std::iota(order.begin(), order.end(), 0);
  const bool any_immutable = std::any_of(dataset.schema.features().begin(),
                                         dataset.schema.features().end(),
                                         [](const auto& f) { return !f.default_mutable; });

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    TermValues mean;
    std::size_t batches = 0;
    for (std::size_t start = 0; start + 2 <= order.size(); start += config.batch_size) {
      const std::size_t n = std::min(config.batch_size, order.size() - start);
      if (n < 2) break;
      xb.resize(n, width);
      yb.resize(n, 2);
      for (std::size_t r = 0; r < n; ++r) {
        const std::size_t src = order[start + r];
        std::copy_n(x.row_span(src).begin(), width, xb.row_span(r).begin());
        yb(r, 0) = pred[src] == 1 ? 1.0 : 0.0;
        yb(r, 1) = pred[src] == 1 ? 0.0 : 1.0;
      }
      if (config.n_fixed > 0 || any_immutable) {
        mb = enc.expand_mask(draw_training_mask(dataset.schema, n, config.n_fixed, mask_rng));
      } else {
        mb.resize(n, width);
        mb.fill(0.0);
      }
      nb.resize(n, config.latent_dim);
      for (double& v : nb.values()) v = normal(noise_rng);
      try {
        lg->graph.forward(bindings);
      } catch (const NumericalError& e) {
        std::ostringstream msg;
        msg << "CVAE diverged in epoch " << epoch << ": " << e.what();
        if (!model.history.empty()) {
          const TermValues& t = model.history.back();
          msg << " (previous epoch: total=" << t.total << " flip=" << t.flip << " dep=" << t.dep
              << " dist=" << t.dist_cont + t.dist_cat << " kl=" << t.kl << " sum=" << t.sum << ")";
        }
        throw TrainingError(msg.str());
      }
      lg->graph.backward();
      adam.step(model.parameters(), lg->graph);
      const TermValues t = lg->values();
      mean.flip += t.flip;
      mean.dep += t.dep;
      mean.fixed_cont += t.fixed_cont;
      mean.fixed_cat += t.fixed_cat;
      mean.dist_cont += t.dist_cont;
      mean.dist_cat += t.dist_cat;
      mean.kl += t.kl;
      mean.sum += t.sum;
      mean.total += t.total;
      ++batches;
    }
    if (batches > 0) {
      const double k = 1.0 / static_cast<double>(batches);
      for (double* v : {&mean.flip, &mean.dep, &mean.fixed_cont, &mean.fixed_cat, &mean.dist_cont,
                        &mean.dist_cat, &mean.kl, &mean.sum, &mean.total}) {
        *v *= k;
      }
    }
    model.history.push_back(mean);
  }
  return model;
}

CfBatch generate(const CvaeModel& model, const clf::TrainedClassifier& classifier,
                 const Tensor& factual, const Tensor& mask, std::optional<std::vector<int>> target,
                 LatentMode mode, std::uint64_t seed) {
  const data::FeatureSchema& schema = model.schema();
  const data::FeatureEncoder& enc = model.encoder();
  const std::size_t d = schema.size();
  if (factual.cols() != d) throw ConfigError("factual rows must have " + std::to_string(d) + " features");
  if (mask.rows() != factual.rows() || mask.cols() != d) throw ConfigError("mask shape mismatch");

  CfBatch out;
  out.factual = factual;
  for (std::size_t r = 0; r < factual.rows(); ++r) {
    for (std::size_t j = 0; j < d; ++j) {
      const auto& f = schema[j];
      double& v = out.factual(r, j);
      if (!std::isfinite(v)) throw ConfigError("non-finite value for feature '" + f.name + "'");
      if (!f.continuous()) continue;
      if (v < f.min || v > f.max) {
        std::ostringstream msg;
        msg << "row " << r << ": " << f.name << "=" << v << " clamped to [" << f.min << ", "
            << f.max << "]";
        out.warnings.push_back(msg.str());
        v = std::clamp(v, f.min, f.max);
      }
    }
  }
  out.mask = enforce_immutables(schema, mask);
  out.factual_encoded = enc.encode(out.factual);
  out.proba_factual = classifier.predict_proba(out.factual_encoded);
  out.factual_pred.resize(factual.rows());
  for (std::size_t r = 0; r < factual.rows(); ++r) {
    out.factual_pred[r] = out.proba_factual(r, 1) > out.proba_factual(r, 0) ? 1 : 0;
  }
  if (target) {
    if (target->size() != factual.rows()) throw ConfigError("one target per factual row is required");
    for (int t : *target) {
      if (t != 0 && t != 1) throw ConfigError("target labels must be 0 or 1");
    }
    out.target = std::move(*target);
  } else {
    out.target.resize(factual.rows());
    for (std::size_t r = 0; r < factual.rows(); ++r) out.target[r] = 1 - out.factual_pred[r];
  }

  const auto [mu, logvar] = model.encode(out.factual_encoded, enc.expand_mask(out.mask), out.target);
  const Tensor z = mode == LatentMode::kMean ? mu : sample_latent(mu, logvar, seed);
  const Tensor xhat = model.decode(z, out.target);
  out.counterfactual = enc.decode(xhat);
  for (std::size_t i = 0; i < out.counterfactual.size(); ++i) {
    if (out.mask[i] == 1.0) out.counterfactual[i] = out.factual[i];
  }
  out.counterfactual_encoded = enc.encode(out.counterfactual);
  out.proba_cf = classifier.predict_proba(out.counterfactual_encoded);
  out.cf_pred.resize(factual.rows());
  for (std::size_t r = 0; r < factual.rows(); ++r) {
    out.cf_pred[r] = out.proba_cf(r, 1) > out.proba_cf(r, 0) ? 1 : 0;
  }
  return out;
}

}  // namespace realcf::realac
