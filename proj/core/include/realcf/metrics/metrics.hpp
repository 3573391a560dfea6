#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "realcf/classifier/mlp.hpp"
#include "realcf/data/dataset.hpp"
#include "realcf/data/edges.hpp"
#include "realcf/metrics/autoencoder.hpp"
#include "realcf/realac/cvae.hpp"
#include "realcf/util/json.hpp"

namespace realcf::metrics {

using realac::CfBatch;

/// Predictor child = g(parent) for one known edge, fitted in original units on
/// the training split. Linear edges use least squares; nonlinear edges use a
/// binned conditional mean interpolated between bin centers.
struct EdgeModel {
  static constexpr std::size_t kBins = 25;

  data::Edge edge;
  double slope = 0.0;
  double intercept = 0.0;
  std::vector<double> centers;  // nonlinear: bin centers over the parent range
  std::vector<double> means;    // nonlinear: conditional child mean per bin
  double residual_sigma = 0.0;  // std of child - g(parent) on train
  double child_sigma = 0.0;     // std of the child feature on train

  double predict(double parent) const;

  Json to_json() const;
  static EdgeModel from_json(const Json& json);
};

/// One model per edge of `edges`, fitted on dataset.split.train in original units.
std::vector<EdgeModel> fit_edge_models(const data::Dataset& dataset, const data::EdgeList& edges);

/// Values per edge alongside the mean over edges that were scored.
struct EdgeScores {
  double mean = 0.0;
  std::vector<std::optional<double>> per_edge;  // nullopt = skipped
  std::vector<std::string> warnings;
};

double validity(const CfBatch& batch);
/// Recomputes both predictions with `classifier` instead of the cached ones.
double validity(const CfBatch& batch, const clf::TrainedClassifier& classifier);

/// Mean over rows of sum_j |x_j - cf_j| / R_j (continuous) plus the number of
/// changed categorical features. Features with R_j = 0 are skipped with a warning.
double distance(const Tensor& factual, const Tensor& counterfactual,
                const data::FeatureSchema& schema, std::vector<std::string>* warnings = nullptr);

/// Mean of log N(cf_j; g(cf_k), s^2) - log N(x_j; g(x_k), s^2) over rows and edges.
EdgeScores causal_edge_score(const Tensor& factual, const Tensor& counterfactual,
                             const std::vector<EdgeModel>& models);

/// Mean of exp(-|g(cf_k) - cf_j| / sigma_j) over rows and edges.
EdgeScores dps(const Tensor& counterfactual, const std::vector<EdgeModel>& models);

/// Per-class autoencoders over encoded training rows.
struct ClassAutoencoders {
  Autoencoder negative;
  Autoencoder positive;

  const Autoencoder& for_class(int label) const { return label == 1 ? positive : negative; }

  /// Throws ConfigError when a class has fewer than 10 training rows.
  static ClassAutoencoders fit(const data::Dataset& dataset, const AutoencoderSpec& spec,
                               std::uint64_t seed);
  Json to_json() const;
  static ClassAutoencoders from_json(const Json& json);
};

/// Mean of ||cf - AE_t(cf)||^2 / (||cf - AE_o(cf)||^2 + 1e-8) with t the
/// target class and o the factual's predicted class, over encoded rows.
double im1_recon(const Tensor& counterfactual_encoded, const std::vector<int>& target,
                 const std::vector<int>& original, const ClassAutoencoders& autoencoders);

/// Mean number of changed sensitive features per row.
double im1_sensitive(const Tensor& factual, const Tensor& counterfactual,
                     const std::vector<std::size_t>& sensitive);

/// Fraction of rows whose continuous features all lie in the schema's train range.
double plausibility(const Tensor& counterfactual, const data::FeatureSchema& schema);

struct MetricsReport {
  double validity = 0.0;
  double distance = 0.0;
  double causal_edge_score = 0.0;
  double dps = 0.0;
  double im1_recon = 0.0;
  double im1_sensitive = 0.0;
  double plausibility = 0.0;
  std::size_t n_evaluated = 0;
  double runtime_seconds = 0.0;
  std::vector<std::optional<double>> ces_per_edge;
  std::vector<std::optional<double>> dps_per_edge;
  std::vector<std::string> warnings;

  /// Stable JSON without runtime_seconds, so reruns compare byte for byte.
  Json to_json() const;
  static MetricsReport from_json(const Json& json);

  /// Aligned text table: method | val. | dist. | ces. | dps. | IM1 | IM1(sens.) | plau.
  static std::string table_header();
  std::string table_row(const std::string& method) const;
};

struct EvaluationContext {
  const data::FeatureSchema* schema = nullptr;
  const std::vector<EdgeModel>* edge_models = nullptr;
  const ClassAutoencoders* autoencoders = nullptr;  // im1_recon is 0 when null
  std::vector<std::size_t> sensitive;
};

MetricsReport evaluate(const CfBatch& batch, const EvaluationContext& context);

/// Random-perturbation comparator: each non-frozen feature is resampled
/// uniformly in its train range (categoricals uniformly over codes) until the
/// prediction flips or `attempts` draws are spent; the last draw is kept.
CfBatch random_flip_baseline(const clf::TrainedClassifier& classifier,
                             const data::FeatureEncoder& encoder,
                             const data::FeatureSchema& schema, const Tensor& factual,
                             const Tensor& mask, std::uint64_t seed, std::size_t attempts = 100);

}  // namespace realcf::metrics
