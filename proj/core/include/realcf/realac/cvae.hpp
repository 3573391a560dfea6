#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "realcf/classifier/mlp.hpp"
#include "realcf/data/dataset.hpp"
#include "realcf/data/edges.hpp"
#include "realcf/dependency/mutual_info.hpp"
#include "realcf/diff/graph.hpp"
#include "realcf/diff/layers.hpp"
#include "realcf/util/json.hpp"

namespace realcf::realac {

using diff::Tensor;

struct LossWeights {
  double flip = 1.0;
  double dep = 0.0;
  double fixed = 0.5;
  double dist = 1.0;
  double kl = 0.0;
  double sum = 0.0;

  void validate() const;
  bool operator==(const LossWeights&) const = default;
};

struct CvaeConfig {
  std::size_t latent_dim = 15;
  std::vector<std::size_t> hidden{64, 32};  // encoder widths; the decoder mirrors them
  LossWeights weights;
  std::size_t epochs = 100;
  std::size_t batch_size = 16;
  double learning_rate = 1e-3;
  std::size_t bins = 50;       // reference MI for reporting
  double temperature = 0.1;    // soft-binning temperature
  std::size_t n_fixed = 0;     // expected frozen features per training row

  void validate() const;
  /// Field names follow the hyperparameter tables: lambda_flip, lambda_dep,
  /// lambda_mse (distance), lambda_kl, lambda_fixed, lambda_sum, latent_dim,
  /// epochs, batch_size, learning_rate, bins, fixed_size, temperature, hidden.
  Json to_json() const;
  static CvaeConfig from_json(const Json& json);

  bool operator==(const CvaeConfig&) const = default;
};

CvaeConfig preset_cvae(const std::string& dataset_id);

struct TermValues {
  double flip = 0, dep = 0, fixed_cont = 0, fixed_cat = 0, dist_cont = 0, dist_cat = 0, kl = 0,
         sum = 0, total = 0;
};

/// Class-conditioned VAE over the encoded feature layout. The encoder maps
/// [x0, mask, onehot(ycf)] to (mu, logvar); the decoder maps [z, onehot(ycf)] to
/// sigmoid continuous outputs and per-categorical softmax blocks.
class CvaeModel {
 public:
  CvaeModel() = default;
  /// Fresh model with initialized parameters. Reference MI tables are computed
  /// from the scaled training rows of `dataset`.
  CvaeModel(const data::Dataset& dataset, data::EdgeList edges, CvaeConfig config,
            std::uint64_t seed);

  const CvaeConfig& config() const { return config_; }
  const data::FeatureSchema& schema() const { return schema_; }
  const data::Scaler& scaler() const { return scaler_; }
  const data::FeatureEncoder& encoder() const { return encoder_; }
  const data::EdgeList& edges() const { return edges_; }
  const diff::ParameterSet& parameters() const { return params_; }
  diff::ParameterSet& parameters() { return params_; }
  /// Reference MI at the configured bin count (reporting).
  const dep::ReferenceMi& reference() const { return reference_; }
  /// Reference MI at the soft-estimator bin count, used by L_dep.
  const dep::ReferenceMi& loss_reference() const { return loss_reference_; }
  const std::vector<dep::Pair>& dep_pairs() const { return dep_pairs_; }

  /// (mu, logvar) for encoded scaled rows, their expanded masks and targets.
  /// The encoder sees the mask so the latent code can react to frozen
  /// features. logvar is clamped to [-20, 20].
  std::pair<Tensor, Tensor> encode(const Tensor& x0, const Tensor& mask,
                                   std::span<const int> ycf) const;
  /// Encoded decoder output (continuous in (0, 1), categorical blocks sum to 1).
  Tensor decode(const Tensor& z, std::span<const int> ycf) const;

  std::vector<TermValues> history;

  Json to_json() const;
  static CvaeModel from_json(const Json& json);

 private:
  CvaeConfig config_;
  data::FeatureSchema schema_;
  data::Scaler scaler_;
  data::FeatureEncoder encoder_;
  data::EdgeList edges_;
  diff::ParameterSet params_;
  dep::ReferenceMi reference_;
  dep::ReferenceMi loss_reference_;
  std::vector<dep::Pair> dep_pairs_;
};

/// z = mu + exp(logvar / 2) * eps with eps ~ N(0, 1) drawn from `seed`.
Tensor sample_latent(const Tensor& mu, const Tensor& logvar, std::uint64_t seed);

/// m * x0 + (1 - m) * xhat with masked coordinates copied from x0 verbatim.
/// Throws ConfigError for shape mismatches or non-binary masks.
Tensor merge_mask(const Tensor& x0, const Tensor& xhat, const Tensor& mask);

/// N x d feature mask with structural immutables forced to 1.
Tensor enforce_immutables(const data::FeatureSchema& schema, Tensor mask);

/// The training objective as a graph. Bind with bind(); inputs are "x0"
/// (encoded scaled rows), "ycf" (N x 2 one-hot), "mask" (expanded N x width)
/// and "noise" (N x latent_dim).
struct LossGraph {
  diff::Graph graph;
  diff::Node x0, ycf, mask, noise;
  diff::Node mu, logvar, z, xhat, xcf, cf_logits;
  diff::Node flip, dep, fixed_cont, fixed_cat, dist_cont, dist_cat, kl, sum, total;

  /// Term nodes by name (flip, dep, fixed_cont, ...).
  std::map<std::string, diff::Node> terms() const;
  TermValues values() const;
};

/// Builds the weighted loss for `model` with the frozen `classifier`.
/// `weights` overrides the model's configured weights when given.
std::unique_ptr<LossGraph> build_loss_graph(const CvaeModel& model,
                                            const clf::TrainedClassifier& classifier,
                                            std::optional<LossWeights> weights = std::nullopt);
/// Binds model and classifier weights (the batch inputs are bound by the caller).
void bind_weights(diff::Bindings& bindings, const CvaeModel& model,
                  const clf::TrainedClassifier& classifier);

/// Per-batch training masks: each feature is frozen with probability
/// n_fixed / d; structural immutables are always frozen.
Tensor draw_training_mask(const data::FeatureSchema& schema, std::size_t rows,
                          std::size_t n_fixed, std::mt19937_64& rng);

/// Adam over encoder and decoder parameters on the oversampled training split
/// with ycf = 1 - f(x0). Throws TrainingError naming the epoch and term values
/// on divergence.
CvaeModel train_cf_model(const data::Dataset& dataset, const clf::TrainedClassifier& classifier,
                         const data::EdgeList& edges, const CvaeConfig& config,
                         std::uint64_t seed);

enum class LatentMode { kMean, kSampled };

struct CfBatch {
  Tensor factual;            // N x d, original units (after range clamping)
  Tensor factual_encoded;    // N x width, scaled
  Tensor mask;               // N x d, 1 = frozen
  std::vector<int> target;   // ycf
  std::vector<int> factual_pred;
  Tensor counterfactual;          // N x d, original units
  Tensor counterfactual_encoded;  // N x width, scaled
  Tensor proba_factual;      // N x 2
  Tensor proba_cf;           // N x 2
  std::vector<int> cf_pred;
  std::vector<std::string> warnings;

  std::size_t size() const { return target.size(); }
};

/// Generates counterfactuals for factual rows in original units. Continuous
/// values outside the training range are clamped with a warning. Masked
/// features are copied from the factual bit-exactly.
CfBatch generate(const CvaeModel& model, const clf::TrainedClassifier& classifier,
                 const Tensor& factual, const Tensor& mask,
                 std::optional<std::vector<int>> target = std::nullopt,
                 LatentMode mode = LatentMode::kMean, std::uint64_t seed = 0);

}  // namespace realcf::realac
