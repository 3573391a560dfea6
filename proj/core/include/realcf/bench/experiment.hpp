#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "realcf/classifier/mlp.hpp"
#include "realcf/data/sources.hpp"
#include "realcf/metrics/metrics.hpp"
#include "realcf/realac/cvae.hpp"

namespace realcf::bench {

using diff::Tensor;

struct ExperimentConfig {
  std::string dataset;
  std::uint64_t data_seed = 42;   // generation and train/test split
  std::uint64_t train_seed = 42;  // classifier, CVAE and autoencoder initialization
  std::uint64_t eval_seed = 7;    // evaluation masks and the random baseline
  std::size_t samples = 0;        // synthetic only; 0 = preset count
  std::string csv_path;           // real datasets; empty = $REALCF_DATA_DIR/<id>.csv
  std::string schema_path;
  clf::MlpSpec classifier;
  realac::CvaeConfig cvae;
  metrics::AutoencoderSpec autoencoder;
  std::vector<std::string> sensitive;
  /// Features frozen at random per evaluated row (structural immutables are
  /// always frozen on top).
  std::size_t eval_fixed = 0;
  /// Test rows evaluated; 0 = the whole test split.
  std::size_t eval_rows = 0;
  std::string output_dir;

  /// Presets for every model and the dataset's sensitive set.
  static ExperimentConfig preset(const std::string& dataset);

  void validate() const;
  /// Copy with every epoch count cut to 10% (at least one).
  ExperimentConfig fast() const;

  /// Missing keys fall back to the dataset preset; "classifier", "cvae" and
  /// "autoencoder" may be partial objects.
  Json to_json() const;
  static ExperimentConfig from_json(const Json& json);

  /// Hash of the configuration without output_dir.
  std::string hash() const;
};

/// Data, classifier and evaluation helpers shared by every run of a config.
struct Prepared {
  ExperimentConfig config;
  data::Dataset dataset;
  data::EdgeList edges;
  clf::TrainedClassifier classifier;
  std::vector<metrics::EdgeModel> edge_models;
  metrics::ClassAutoencoders autoencoders;
  std::vector<std::size_t> sensitive;
  Tensor eval_factual;  // original units
  Tensor eval_mask;     // 1 = frozen
  double classifier_seconds = 0.0;
  double seconds = 0.0;
};

/// Resolves the CSV path of a real dataset: the explicit path, else
/// $REALCF_DATA_DIR/<id>.csv. Empty when neither exists.
std::string resolve_csv(const std::string& dataset, const std::string& explicit_path);

/// Loads the dataset, trains the classifier, fits the edge models and the
/// per-class autoencoders, and draws the evaluation masks.
Prepared prepare(const ExperimentConfig& config);

/// N x d evaluation mask: `n_fixed` distinct random features per row plus the
/// schema's structural immutables. Throws ConfigError when n_fixed >= d.
Tensor random_mask(const data::FeatureSchema& schema, std::size_t rows, std::size_t n_fixed,
                   std::uint64_t seed);

struct RunResult {
  realac::CvaeModel model;
  realac::CfBatch batch;
  realac::CfBatch baseline;
  metrics::MetricsReport report;
  metrics::MetricsReport baseline_report;
  double train_seconds = 0.0;
};

/// Trains a CVAE with `cvae` on the prepared data and evaluates it, and the
/// random-flip baseline, on the prepared evaluation rows and `mask`.
RunResult run_cvae(const Prepared& prepared, const realac::CvaeConfig& cvae,
                   const Tensor& mask);

struct ExperimentResult {
  std::string config_hash;
  clf::ClassifierMetrics classifier;
  metrics::MetricsReport realac;
  metrics::MetricsReport baseline;
  std::string table;  // header plus one row per method, tagged with the hash
};

/// Full pipeline. When config.output_dir is set, writes bundle.json,
/// cfs.csv, metrics.json, timing.json and table.txt there. Errors are
/// rethrown with the failing stage in the message.
ExperimentResult run_experiment(const ExperimentConfig& config);

/// Everything the server needs to answer requests for one dataset.
Json make_bundle(const Prepared& prepared, const realac::CvaeModel& model,
                 std::size_t max_rows = 5000);

void write_cfs_csv(const std::string& path, const realac::CfBatch& batch,
                   const data::FeatureSchema& schema);

struct DepAblationRow {
  double lambda_dep = 0.0;
  std::optional<metrics::MetricsReport> report;
  std::string error;
};

/// One CVAE per grid value on a shared classifier. A failing run is recorded
/// in its row and the sweep continues.
std::vector<DepAblationRow> ablation_lambda_dep(const Prepared& prepared,
                                                const std::vector<double>& grid);
std::vector<double> default_dep_grid();

struct FixedAblationRow {
  std::size_t n_fixed = 0;
  metrics::MetricsReport report;
  Tensor mask;
  realac::CfBatch batch;
};

/// One CVAE; for each count, `count` random features per row are frozen at
/// generation. Throws ConfigError when a count is >= d.
std::vector<FixedAblationRow> ablation_n_fixed(const Prepared& prepared,
                                               const std::vector<std::size_t>& counts);

/// CSV with columns lambda_dep,validity,ces,dps,error.
std::string dep_ablation_csv(const std::vector<DepAblationRow>& rows);
/// CSV with columns n_fixed,validity,distance.
std::string fixed_ablation_csv(const std::vector<FixedAblationRow>& rows);

}  // namespace realcf::bench
