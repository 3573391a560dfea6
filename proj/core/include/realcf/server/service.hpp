#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "realcf/classifier/mlp.hpp"
#include "realcf/metrics/metrics.hpp"
#include "realcf/realac/cvae.hpp"
#include "realcf/util/json.hpp"

namespace realcf::server {

using diff::Tensor;

/// A trained model set for one dataset, as written by bench::make_bundle.
struct Bundle {
  std::string dataset;
  clf::TrainedClassifier classifier;
  realac::CvaeModel model;
  std::vector<metrics::EdgeModel> edge_models;
  Tensor train_rows;  // original units

  static Bundle from_json(const Json& json);
  static Bundle load(const std::string& path);
};

struct Response {
  int status = 200;
  Json body;
};

/// Request handlers over read-only bundles. Every method is const and safe to
/// call concurrently.
class Service {
 public:
  Service() = default;

  /// Throws ConfigError when a bundle for the same dataset is already loaded.
  void add(Bundle bundle);
  /// Loads every JSON file below `dir` whose format is "realcf.bundle".
  static Service load_dir(const std::string& dir);

  std::vector<std::string> datasets() const;

  /// {dataset, schema, default_mask, ranges}; 404 for unknown datasets.
  Response schema(const std::string& dataset) const;
  /// Body: {dataset, instance: {name: value}, mask?: {name: bool}, target?,
  /// latent_mode?: "mean" | "sampled", seed?}. 400 for malformed bodies, 404
  /// for unknown datasets, 422 listing out-of-schema names.
  Response counterfactual(const std::string& body) const;
  /// Up to 2000 training points for features i and j (names or indices) and
  /// their reference MI. 422 for categorical or unknown features.
  Response pairs(const std::string& dataset, const std::string& i, const std::string& j,
                 std::uint64_t seed) const;

  static constexpr std::size_t kMaxPairPoints = 2000;

 private:
  const Bundle* find(const std::string& dataset) const;

  std::map<std::string, Bundle> bundles_;
};

}  // namespace realcf::server
