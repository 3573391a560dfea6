#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "realcf/data/dataset.hpp"
#include "realcf/diff/graph.hpp"
#include "realcf/diff/layers.hpp"
#include "realcf/util/json.hpp"

namespace realcf::clf {

using diff::Tensor;

/// One hidden layer: Dense(units, activation) -> [BatchNorm] -> [Dropout].
struct LayerSpec {
  std::size_t units = 0;
  diff::Activation activation = diff::Activation::kRelu;
  double alpha = 0.3;  // leaky-relu slope / elu scale
  diff::Init init = diff::Init::kGlorotUniform;
  double l1 = 0.0;  // L1 penalty on this layer's kernel
  bool batch_norm = false;
  double dropout = 0.0;

  bool operator==(const LayerSpec&) const = default;
};

/// Hidden stack followed by a 2-logit softmax head trained with cross-entropy.
struct MlpSpec {
  std::vector<LayerSpec> hidden;
  double learning_rate = 1e-3;
  std::size_t epochs = 10;
  std::size_t batch_size = 16;
  double bn_momentum = 0.9;
  double bn_epsilon = 1e-3;
  /// Continuous inputs are mapped back to original units before the first
  /// layer. The classifier still consumes encoded rows; only its first-layer
  /// conditioning changes.
  bool original_units = false;

  /// Throws ConfigError for empty stacks, zero widths or bad rates.
  void validate() const;

  Json to_json() const;
  static MlpSpec from_json(const Json& json);

  bool operator==(const MlpSpec&) const = default;
};

/// Architecture and optimizer settings of the classifier used for a dataset.
MlpSpec preset_classifier(const std::string& dataset_id);

struct ClassifierMetrics {
  double accuracy = 0.0;
  double f1 = 0.0;
  std::size_t n = 0;
  std::vector<std::string> warnings;
};

/// Accuracy and F1 of the positive class. An undefined F1 (no predicted and no
/// actual positives) is reported as 0 with a warning.
ClassifierMetrics score(std::span<const int> truth, std::span<const int> predicted);

struct EpochLog {
  std::size_t epoch = 0;
  double loss = 0.0;
};

/// A trained, frozen MLP over encoded inputs (see data::FeatureEncoder).
class TrainedClassifier {
 public:
  TrainedClassifier() = default;
  /// `state` holds non-trainable batch-norm running statistics.
  TrainedClassifier(MlpSpec spec, std::size_t input_width, diff::ParameterSet params,
                    diff::ParameterSet state = {});

  const MlpSpec& spec() const { return spec_; }
  std::size_t input_width() const { return input_width_; }
  const diff::ParameterSet& parameters() const { return params_; }
  const diff::ParameterSet& state() const { return state_; }
  /// Covers trainable parameters and running statistics.
  std::uint64_t checksum() const;

  /// N x 2 class probabilities of encoded rows (inference mode).
  Tensor predict_proba(const Tensor& encoded) const;
  std::vector<int> predict(const Tensor& encoded) const;

  /// Appends the frozen inference network to `graph` and returns the logits
  /// node. Weights are graph inputs named "<prefix>/<param>" behind a
  /// stop-gradient, so the classifier never receives gradient.
  diff::Node logits(diff::Graph& graph, diff::Node x, std::string_view prefix = "clf") const;
  /// Binds the weights used by logits().
  void bind(diff::Bindings& bindings, std::string_view prefix = "clf") const;

  ClassifierMetrics test_metrics;
  std::vector<EpochLog> history;

  Json to_json() const;
  static TrainedClassifier from_json(const Json& json);

 private:
  MlpSpec spec_;
  std::size_t input_width_ = 0;
  diff::ParameterSet params_;
  diff::ParameterSet state_;
};

/// Trains on the (oversampled) training split with Adam and records test
/// accuracy and F1. Throws TrainingError naming the epoch if the loss turns
/// non-finite.
TrainedClassifier train_classifier(const data::Dataset& dataset, const MlpSpec& spec,
                                   std::uint64_t seed);

}  // namespace realcf::clf
