#include "realcf/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>

#include "realcf/error.hpp"

namespace realcf::metrics {

namespace {

constexpr double kRatioEps = 1e-8;

struct Moments {
  double mean = 0.0;
  double sd = 0.0;
};

Moments moments(const std::vector<double>& v) {
  Moments m;
  if (v.empty()) return m;
  for (double x : v) m.mean += x;
  m.mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - m.mean) * (x - m.mean);
  m.sd = std::sqrt(ss / static_cast<double>(v.size()));
  return m;
}

void require_same_shape(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    throw ConfigError("factual and counterfactual shapes differ: " + a.shape_string() + " vs " +
                      b.shape_string());
  }
}

void fill_empty_bins(std::vector<double>& means, const std::vector<std::size_t>& counts) {
  std::vector<std::size_t> filled;
  for (std::size_t b = 0; b < counts.size(); ++b) {
    if (counts[b] > 0) filled.push_back(b);
  }
  if (filled.empty()) return;
  for (std::size_t b = 0; b < counts.size(); ++b) {
    if (counts[b] > 0) continue;
    const auto hi = std::lower_bound(filled.begin(), filled.end(), b);
    if (hi == filled.begin()) {
      means[b] = means[*hi];
    } else if (hi == filled.end()) {
      means[b] = means[filled.back()];
    } else {
      const std::size_t l = *(hi - 1);
      const std::size_t h = *hi;
      const double t = static_cast<double>(b - l) / static_cast<double>(h - l);
      means[b] = means[l] + t * (means[h] - means[l]);
    }
  }
}

std::string edge_name(const data::Edge& e) {
  return "edge " + std::to_string(e.parent) + "->" + std::to_string(e.child);
}

}  // namespace

// ---------------------------------------------------------------------------
// Edge models

double EdgeModel::predict(double parent) const {
  if (edge.form == data::EdgeForm::kLinear) return slope * parent + intercept;
  if (centers.empty()) return intercept;
  if (parent <= centers.front()) return means.front();
  if (parent >= centers.back()) return means.back();
  const auto it = std::upper_bound(centers.begin(), centers.end(), parent);
  const std::size_t h = static_cast<std::size_t>(it - centers.begin());
  const std::size_t l = h - 1;
  const double t = (parent - centers[l]) / (centers[h] - centers[l]);
  return means[l] + t * (means[h] - means[l]);
}

Json EdgeModel::to_json() const {
  return Json{{"child", edge.child},
              {"parent", edge.parent},
              {"form", edge.form == data::EdgeForm::kLinear ? "linear" : "nonlinear"},
              {"slope", slope},
              {"intercept", intercept},
              {"centers", centers},
              {"means", means},
              {"residual_sigma", residual_sigma},
              {"child_sigma", child_sigma}};
}

EdgeModel EdgeModel::from_json(const Json& json) {
  EdgeModel m;
  try {
    m.edge.child = json.at("child").get<std::size_t>();
    m.edge.parent = json.at("parent").get<std::size_t>();
    const auto form = json.at("form").get<std::string>();
    if (form == "linear") {
      m.edge.form = data::EdgeForm::kLinear;
    } else if (form == "nonlinear") {
      m.edge.form = data::EdgeForm::kNonlinear;
    } else {
      throw ParseError("unknown edge form '" + form + "'");
    }
    m.slope = json.at("slope").get<double>();
    m.intercept = json.at("intercept").get<double>();
    m.centers = json.at("centers").get<std::vector<double>>();
    m.means = json.at("means").get<std::vector<double>>();
    m.residual_sigma = json.at("residual_sigma").get<double>();
    m.child_sigma = json.at("child_sigma").get<double>();
  } catch (const Json::exception& e) {
    throw ParseError(std::string("malformed edge model: ") + e.what());
  }
  if (m.centers.size() != m.means.size()) throw ParseError("edge model centers/means mismatch");
  return m;
}

std::vector<EdgeModel> fit_edge_models(const data::Dataset& dataset, const data::EdgeList& edges) {
  if (dataset.scaled) throw ConfigError("edge models are fitted in original units");
  edges.validate(dataset.schema);
  const auto& train = dataset.split.train;
  if (train.size() < 2) throw ConfigError("edge models need at least two training rows");
  std::vector<EdgeModel> out;
  for (const auto& e : edges.edges) {
    EdgeModel m;
    m.edge = e;
    std::vector<double> xp, xc;
    xp.reserve(train.size());
    xc.reserve(train.size());
    for (std::size_t r : train) {
      xp.push_back(dataset.x(r, e.parent));
      xc.push_back(dataset.x(r, e.child));
    }
    const Moments mp = moments(xp);
    const Moments mc = moments(xc);
    m.child_sigma = mc.sd;
    if (e.form == data::EdgeForm::kLinear) {
      double sxy = 0.0, sxx = 0.0;
      for (std::size_t i = 0; i < xp.size(); ++i) {
        sxy += (xp[i] - mp.mean) * (xc[i] - mc.mean);
        sxx += (xp[i] - mp.mean) * (xp[i] - mp.mean);
      }
      m.slope = sxx > 0.0 ? sxy / sxx : 0.0;
      m.intercept = mc.mean - m.slope * mp.mean;
    } else {
      const auto [lo_it, hi_it] = std::minmax_element(xp.begin(), xp.end());
      const double lo = *lo_it;
      const double hi = *hi_it;
      if (hi > lo) {
        const double width = (hi - lo) / EdgeModel::kBins;
        std::vector<double> sums(EdgeModel::kBins, 0.0);
        std::vector<std::size_t> counts(EdgeModel::kBins, 0);
        for (std::size_t i = 0; i < xp.size(); ++i) {
          auto b = static_cast<std::size_t>((xp[i] - lo) / width);
          b = std::min(b, EdgeModel::kBins - 1);
          sums[b] += xc[i];
          ++counts[b];
        }
        m.centers.resize(EdgeModel::kBins);
        m.means.resize(EdgeModel::kBins);
        for (std::size_t b = 0; b < EdgeModel::kBins; ++b) {
          m.centers[b] = lo + (static_cast<double>(b) + 0.5) * width;
          m.means[b] = counts[b] ? sums[b] / static_cast<double>(counts[b]) : 0.0;
        }
        fill_empty_bins(m.means, counts);
      } else {
        m.intercept = mc.mean;
      }
    }
    std::vector<double> resid(xp.size());
    for (std::size_t i = 0; i < xp.size(); ++i) resid[i] = xc[i] - m.predict(xp[i]);
    m.residual_sigma = moments(resid).sd;
    out.push_back(std::move(m));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Metrics

double validity(const CfBatch& batch) {
  if (batch.size() == 0) throw ConfigError("validity of an empty batch");
  if (batch.factual_pred.size() != batch.size() || batch.cf_pred.size() != batch.size()) {
    throw ConfigError("batch predictions are missing");
  }
  std::size_t flipped = 0;
  for (std::size_t r = 0; r < batch.size(); ++r) flipped += batch.cf_pred[r] != batch.factual_pred[r];
  return static_cast<double>(flipped) / static_cast<double>(batch.size());
}

double validity(const CfBatch& batch, const clf::TrainedClassifier& classifier) {
  if (batch.size() == 0) throw ConfigError("validity of an empty batch");
  const auto before = classifier.predict(batch.factual_encoded);
  const auto after = classifier.predict(batch.counterfactual_encoded);
  std::size_t flipped = 0;
  for (std::size_t r = 0; r < before.size(); ++r) flipped += before[r] != after[r];
  return static_cast<double>(flipped) / static_cast<double>(before.size());
}

double distance(const Tensor& factual, const Tensor& counterfactual,
                const data::FeatureSchema& schema, std::vector<std::string>* warnings) {
  require_same_shape(factual, counterfactual);
  if (factual.cols() != schema.size()) throw ConfigError("distance: feature count mismatch");
  if (factual.rows() == 0) return 0.0;
  std::vector<bool> skip(schema.size(), false);
  for (std::size_t j = 0; j < schema.size(); ++j) {
    if (schema[j].continuous() && !(schema[j].range() > 0.0)) {
      skip[j] = true;
      if (warnings) warnings->push_back("distance: feature '" + schema[j].name + "' has zero range, skipped");
    }
  }
  double total = 0.0;
  for (std::size_t r = 0; r < factual.rows(); ++r) {
    for (std::size_t j = 0; j < schema.size(); ++j) {
      if (skip[j]) continue;
      if (schema[j].continuous()) {
        total += std::abs(factual(r, j) - counterfactual(r, j)) / schema[j].range();
      } else {
        total += factual(r, j) != counterfactual(r, j) ? 1.0 : 0.0;
      }
    }
  }
  return total / static_cast<double>(factual.rows());
}

namespace {

template <typename PerRow>
EdgeScores score_edges(std::size_t rows, const std::vector<EdgeModel>& models, bool use_residual,
                       const char* metric, PerRow per_row) {
  EdgeScores out;
  out.per_edge.resize(models.size());
  double sum = 0.0;
  std::size_t used = 0;
  for (std::size_t e = 0; e < models.size(); ++e) {
    const auto& m = models[e];
    const double sigma = use_residual ? m.residual_sigma : m.child_sigma;
    if (!(sigma > 0.0)) {
      out.warnings.push_back(std::string(metric) + ": " + edge_name(m.edge) +
                             " has zero sigma, skipped");
      continue;
    }
    double acc = 0.0;
    for (std::size_t r = 0; r < rows; ++r) acc += per_row(m, sigma, r);
    const double value = rows ? acc / static_cast<double>(rows) : 0.0;
    out.per_edge[e] = value;
    sum += value;
    ++used;
  }
  if (used == 0) {
    out.warnings.push_back(std::string(metric) + ": no edges scored");
  } else {
    out.mean = sum / static_cast<double>(used);
  }
  return out;
}

}  // namespace

EdgeScores causal_edge_score(const Tensor& factual, const Tensor& counterfactual,
                             const std::vector<EdgeModel>& models) {
  require_same_shape(factual, counterfactual);
  return score_edges(factual.rows(), models, true, "ces",
                     [&](const EdgeModel& m, double sigma, std::size_t r) {
                       const double rc = counterfactual(r, m.edge.child) -
                                         m.predict(counterfactual(r, m.edge.parent));
                       const double rf =
                           factual(r, m.edge.child) - m.predict(factual(r, m.edge.parent));
                       return -(rc * rc - rf * rf) / (2.0 * sigma * sigma);
                     });
}

EdgeScores dps(const Tensor& counterfactual, const std::vector<EdgeModel>& models) {
  return score_edges(counterfactual.rows(), models, false, "dps",
                     [&](const EdgeModel& m, double sigma, std::size_t r) {
                       const double gap = m.predict(counterfactual(r, m.edge.parent)) -
                                          counterfactual(r, m.edge.child);
                       return std::exp(-std::abs(gap) / sigma);
                     });
}

ClassAutoencoders ClassAutoencoders::fit(const data::Dataset& dataset, const AutoencoderSpec& spec,
                                         std::uint64_t seed) {
  const data::FeatureEncoder enc(dataset.schema, dataset.scaler);
  std::vector<std::size_t> members[2];
  for (std::size_t r : dataset.split.train) members[dataset.y[r] == 1 ? 1 : 0].push_back(r);
  for (int c = 0; c < 2; ++c) {
    if (members[c].size() < 10) {
      throw ConfigError("class " + std::to_string(c) + " has " +
                        std::to_string(members[c].size()) +
                        " training rows; im1 autoencoders need at least 10");
    }
  }
  ClassAutoencoders out;
  for (int c = 0; c < 2; ++c) {
    Tensor rows = dataset.gather(members[c]);
    if (!dataset.scaled) rows = enc.encode(rows);
    (c == 1 ? out.positive : out.negative) = Autoencoder::fit(rows, spec, seed + static_cast<std::uint64_t>(c));
  }
  return out;
}

Json ClassAutoencoders::to_json() const {
  return Json{{"negative", negative.to_json()}, {"positive", positive.to_json()}};
}

ClassAutoencoders ClassAutoencoders::from_json(const Json& json) {
  try {
    return ClassAutoencoders{Autoencoder::from_json(json.at("negative")),
                             Autoencoder::from_json(json.at("positive"))};
  } catch (const Json::exception& e) {
    throw ParseError(std::string("malformed autoencoders: ") + e.what());
  }
}

double im1_recon(const Tensor& counterfactual_encoded, const std::vector<int>& target,
                 const std::vector<int>& original, const ClassAutoencoders& autoencoders) {
  const std::size_t n = counterfactual_encoded.rows();
  if (target.size() != n || original.size() != n) throw ConfigError("im1: label count mismatch");
  if (n == 0) return 0.0;
  const std::vector<double> err_neg = autoencoders.negative.errors(counterfactual_encoded);
  const std::vector<double> err_pos = autoencoders.positive.errors(counterfactual_encoded);
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const double et = target[r] == 1 ? err_pos[r] : err_neg[r];
    const double eo = original[r] == 1 ? err_pos[r] : err_neg[r];
    total += et / (eo + kRatioEps);
  }
  return total / static_cast<double>(n);
}

double im1_sensitive(const Tensor& factual, const Tensor& counterfactual,
                     const std::vector<std::size_t>& sensitive) {
  require_same_shape(factual, counterfactual);
  if (factual.rows() == 0) return 0.0;
  std::size_t changed = 0;
  for (std::size_t r = 0; r < factual.rows(); ++r) {
    for (std::size_t j : sensitive) {
      if (j >= factual.cols()) throw ConfigError("sensitive feature index out of range");
      changed += factual(r, j) != counterfactual(r, j);
    }
  }
  return static_cast<double>(changed) / static_cast<double>(factual.rows());
}

double plausibility(const Tensor& counterfactual, const data::FeatureSchema& schema) {
  if (counterfactual.cols() != schema.size()) throw ConfigError("plausibility: feature count mismatch");
  if (counterfactual.rows() == 0) return 0.0;
  const auto cont = schema.continuous_indices();
  std::size_t inside = 0;
  for (std::size_t r = 0; r < counterfactual.rows(); ++r) {
    bool ok = true;
    for (std::size_t j : cont) {
      const double v = counterfactual(r, j);
      if (!(v >= schema[j].min && v <= schema[j].max)) {
        ok = false;
        break;
      }
    }
    inside += ok;
  }
  return static_cast<double>(inside) / static_cast<double>(counterfactual.rows());
}

// ---------------------------------------------------------------------------
// Report

namespace {

Json optional_array(const std::vector<std::optional<double>>& v) {
  Json out = Json::array();
  for (const auto& x : v) out.push_back(x ? Json(*x) : Json(nullptr));
  return out;
}

std::vector<std::optional<double>> optional_array(const Json& json) {
  std::vector<std::optional<double>> out;
  for (const auto& x : json) {
    if (x.is_null()) {
      out.emplace_back();
    } else {
      out.emplace_back(x.get<double>());
    }
  }
  return out;
}

}  // namespace

Json MetricsReport::to_json() const {
  return Json{{"validity", validity},
              {"distance", distance},
              {"causal_edge_score", causal_edge_score},
              {"dps", dps},
              {"im1_recon", im1_recon},
              {"im1_sensitive", im1_sensitive},
              {"plausibility", plausibility},
              {"n_evaluated", n_evaluated},
              {"ces_per_edge", optional_array(ces_per_edge)},
              {"dps_per_edge", optional_array(dps_per_edge)},
              {"warnings", warnings}};
}

MetricsReport MetricsReport::from_json(const Json& json) {
  MetricsReport r;
  try {
    r.validity = json.at("validity").get<double>();
    r.distance = json.at("distance").get<double>();
    r.causal_edge_score = json.at("causal_edge_score").get<double>();
    r.dps = json.at("dps").get<double>();
    r.im1_recon = json.at("im1_recon").get<double>();
    r.im1_sensitive = json.at("im1_sensitive").get<double>();
    r.plausibility = json.at("plausibility").get<double>();
    r.n_evaluated = json.at("n_evaluated").get<std::size_t>();
    r.ces_per_edge = optional_array(json.value("ces_per_edge", Json::array()));
    r.dps_per_edge = optional_array(json.value("dps_per_edge", Json::array()));
    r.warnings = json.value("warnings", std::vector<std::string>{});
  } catch (const Json::exception& e) {
    throw ParseError(std::string("malformed metrics report: ") + e.what());
  }
  return r;
}

std::string MetricsReport::table_header() {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-24s %8s %8s %9s %8s %8s %10s %8s", "method", "val.", "dist.",
                "ces.", "dps.", "IM1", "IM1(sens.)", "plau.");
  return buf;
}

std::string MetricsReport::table_row(const std::string& method) const {
  char buf[200];
  std::snprintf(buf, sizeof buf, "%-24s %8.3f %8.3f %9.3f %8.3f %8.3f %10.3f %8.3f",
                method.c_str(), validity, distance, causal_edge_score, dps, im1_recon,
                im1_sensitive, plausibility);
  return buf;
}

MetricsReport evaluate(const CfBatch& batch, const EvaluationContext& ctx) {
  if (!ctx.schema || !ctx.edge_models) throw ConfigError("evaluation context is incomplete");
  MetricsReport r;
  r.n_evaluated = batch.size();
  r.validity = validity(batch);
  r.distance = distance(batch.factual, batch.counterfactual, *ctx.schema, &r.warnings);
  const EdgeScores ces = causal_edge_score(batch.factual, batch.counterfactual, *ctx.edge_models);
  r.causal_edge_score = ces.mean;
  r.ces_per_edge = ces.per_edge;
  const EdgeScores d = dps(batch.counterfactual, *ctx.edge_models);
  r.dps = d.mean;
  r.dps_per_edge = d.per_edge;
  r.warnings.insert(r.warnings.end(), ces.warnings.begin(), ces.warnings.end());
  r.warnings.insert(r.warnings.end(), d.warnings.begin(), d.warnings.end());
  if (ctx.autoencoders) {
    r.im1_recon = im1_recon(batch.counterfactual_encoded, batch.target, batch.factual_pred,
                            *ctx.autoencoders);
  }
  r.im1_sensitive = im1_sensitive(batch.factual, batch.counterfactual, ctx.sensitive);
  r.plausibility = plausibility(batch.counterfactual, *ctx.schema);
  return r;
}

// ---------------------------------------------------------------------------
// Random baseline

CfBatch random_flip_baseline(const clf::TrainedClassifier& classifier,
                             const data::FeatureEncoder& encoder,
                             const data::FeatureSchema& schema, const Tensor& factual,
                             const Tensor& mask, std::uint64_t seed, std::size_t attempts) {
  const std::size_t d = schema.size();
  if (factual.cols() != d) throw ConfigError("factual rows must have " + std::to_string(d) + " features");
  if (!mask.same_shape(factual)) throw ConfigError("mask shape mismatch");
  if (attempts == 0) throw ConfigError("random baseline needs at least one attempt");
  const std::size_t n = factual.rows();

  CfBatch out;
  out.factual = factual;
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < d; ++j) {
      if (!schema[j].continuous()) continue;
      double& v = out.factual(r, j);
      if (v < schema[j].min || v > schema[j].max) {
        std::ostringstream msg;
        msg << "row " << r << ": " << schema[j].name << "=" << v << " clamped";
        out.warnings.push_back(msg.str());
        v = std::clamp(v, schema[j].min, schema[j].max);
      }
    }
  }
  out.mask = realac::enforce_immutables(schema, mask);
  out.factual_encoded = encoder.encode(out.factual);
  out.proba_factual = classifier.predict_proba(out.factual_encoded);
  out.factual_pred.resize(n);
  out.target.resize(n);
  for (std::size_t r = 0; r < n; ++r) {
    out.factual_pred[r] = out.proba_factual(r, 1) > out.proba_factual(r, 0) ? 1 : 0;
    out.target[r] = 1 - out.factual_pred[r];
  }

  std::mt19937_64 rng(seed);
  out.counterfactual = out.factual;
  std::vector<std::size_t> pending(n);
  for (std::size_t r = 0; r < n; ++r) pending[r] = r;
  for (std::size_t attempt = 0; attempt < attempts && !pending.empty(); ++attempt) {
    Tensor candidates = Tensor::zeros(pending.size(), d);
    for (std::size_t i = 0; i < pending.size(); ++i) {
      const std::size_t r = pending[i];
      for (std::size_t j = 0; j < d; ++j) {
        double v = out.factual(r, j);
        if (out.mask(r, j) != 1.0) {
          const auto& f = schema[j];
          if (f.continuous()) {
            v = std::uniform_real_distribution<double>(f.min, f.max)(rng);
          } else {
            v = static_cast<double>(
                std::uniform_int_distribution<std::size_t>(0, f.category_count() - 1)(rng));
          }
        }
        candidates(i, j) = v;
      }
    }
    const auto pred = classifier.predict(encoder.encode(candidates));
    std::vector<std::size_t> still;
    for (std::size_t i = 0; i < pending.size(); ++i) {
      const std::size_t r = pending[i];
      std::copy_n(candidates.row_span(i).begin(), d, out.counterfactual.row_span(r).begin());
      if (pred[i] != out.target[r]) still.push_back(r);
    }
    pending.swap(still);
  }
  out.counterfactual_encoded = encoder.encode(out.counterfactual);
  out.proba_cf = classifier.predict_proba(out.counterfactual_encoded);
  out.cf_pred.resize(n);
  for (std::size_t r = 0; r < n; ++r) {
    out.cf_pred[r] = out.proba_cf(r, 1) > out.proba_cf(r, 0) ? 1 : 0;
  }
  return out;
}

}  // namespace realcf::metrics
