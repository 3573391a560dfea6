#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "realcf/data/schema.hpp"
#include "realcf/diff/tensor.hpp"

namespace realcf::data {

using diff::Tensor;

/// Per-feature min-max parameters fitted on the training split. Categorical
/// features pass through untouched.
struct Scaler {
  std::vector<double> min;
  std::vector<double> max;
  std::vector<bool> constant;
  std::vector<bool> categorical;

  double scale_value(std::size_t feature, double x) const;
  double unscale_value(std::size_t feature, double s) const;
  std::vector<double> scale_row(std::span<const double> row) const;
  std::vector<double> unscale_row(std::span<const double> row) const;

  Json to_json() const;
  static Scaler from_json(const Json& json);
  bool operator==(const Scaler&) const = default;
};

struct Split {
  std::vector<std::size_t> train;           // original training rows
  std::vector<std::size_t> train_balanced;  // train plus oversampled duplicates
  std::vector<std::size_t> test;
};

/// A tabular binary-classification dataset in original units. Categorical
/// values are stored as their integer codes.
struct Dataset {
  std::string id;
  FeatureSchema schema;
  Tensor x;  // N x d
  std::vector<int> y;
  Split split;
  Scaler scaler;
  bool scaled = false;

  std::size_t rows() const { return y.size(); }
  std::size_t features() const { return schema.size(); }

  /// Rows `indices` of x as a new |indices| x d tensor.
  Tensor gather(std::span<const std::size_t> indices) const;
  std::vector<int> labels(std::span<const std::size_t> indices) const;
};

/// Fits the scaler on the training split and records train ranges on the
/// schema. A feature with max == min is flagged constant and scales to 0.
void fit_scaler(Dataset& dataset);

/// Copy of `dataset` with continuous features mapped to (x - min) / (max - min).
Dataset scale(const Dataset& dataset);
/// Inverse of the scaling for a single instance.
std::vector<double> unscale(const Scaler& scaler, std::span<const double> instance);

/// Shuffled train/test split; with `stratify` the test fraction is drawn per class.
Split train_test_split(std::span<const int> labels, double test_fraction, std::uint64_t seed,
                       bool stratify);

/// Duplicates random minority-class training rows (with replacement) until
/// both classes have equal counts. The test split is left untouched.
void oversample(Split& split, std::span<const int> labels, std::uint64_t seed);

/// Maps instances in original units to the network input layout: scaled
/// continuous values followed in schema order by one-hot categorical blocks.
class FeatureEncoder {
 public:
  FeatureEncoder() = default;
  FeatureEncoder(const FeatureSchema& schema, const Scaler& scaler);

  std::size_t features() const { return offsets_.size(); }
  std::size_t width() const { return width_; }
  std::size_t offset(std::size_t feature) const { return offsets_[feature]; }
  std::size_t span(std::size_t feature) const { return widths_[feature]; }
  bool continuous(std::size_t feature) const { return !categorical_[feature]; }

  /// N x d original-unit rows -> N x width encoded rows.
  Tensor encode(const Tensor& rows) const;
  /// Encoded rows -> original units (categoricals by argmax).
  Tensor decode(const Tensor& encoded) const;
  /// N x d feature mask -> N x width column mask.
  Tensor expand_mask(const Tensor& mask) const;
  /// 1 x width row with 1 on continuous columns, 0 on one-hot columns.
  Tensor continuous_indicator() const;

  const Scaler& scaler() const { return scaler_; }

 private:
  Scaler scaler_;
  std::vector<std::size_t> offsets_;
  std::vector<std::size_t> widths_;
  std::vector<bool> categorical_;
  std::size_t width_ = 0;
};

Json dataset_to_json(const Dataset& dataset);
Dataset dataset_from_json(const Json& json);

/// Cache file name for a dataset build, e.g. "synthetic1-seed42-n10000.json".
std::string cache_key(const std::string& dataset_id, std::uint64_t seed, const std::string& split);

}  // namespace realcf::data
