#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "realcf/util/json.hpp"

namespace realcf::data {

enum class FeatureKind { kContinuous, kCategorical };

std::string_view kind_name(FeatureKind kind);
FeatureKind parse_kind(std::string_view name);

struct FeatureSpec {
  std::string name;
  FeatureKind kind = FeatureKind::kContinuous;
  // Observed range on the training split (continuous only).
  double min = 0.0;
  double max = 0.0;
  // Category labels; the integer code of a value is its index here.
  std::vector<std::string> categories;
  bool default_mutable = true;

  bool continuous() const { return kind == FeatureKind::kContinuous; }
  std::size_t category_count() const { return categories.size(); }
  double range() const { return max - min; }

  bool operator==(const FeatureSpec&) const = default;
};

/// Binary label column: rows whose value is in `positive` get label 1.
struct LabelSpec {
  std::string name = "label";
  std::vector<std::string> positive{"1"};

  bool operator==(const LabelSpec&) const = default;
};

class FeatureSchema {
 public:
  FeatureSchema() = default;
  explicit FeatureSchema(std::vector<FeatureSpec> features, LabelSpec label = {});

  std::size_t size() const { return features_.size(); }
  const FeatureSpec& operator[](std::size_t i) const { return features_[i]; }
  FeatureSpec& operator[](std::size_t i) { return features_[i]; }
  const std::vector<FeatureSpec>& features() const { return features_; }
  const LabelSpec& label() const { return label_; }

  std::optional<std::size_t> find(std::string_view name) const;
  /// Throws SchemaError for unknown names.
  std::size_t index_of(std::string_view name) const;

  std::vector<std::size_t> continuous_indices() const;
  std::vector<std::size_t> categorical_indices() const;
  std::vector<std::string> names() const;
  bool has_categoricals() const { return !categorical_indices().empty(); }

  /// Code of `value` for categorical feature `feature` (SchemaError if absent).
  std::size_t category_code(std::size_t feature, std::string_view value) const;

  /// Unique names, K >= 2 for categoricals, min < max for continuous features
  /// that have a recorded range. Throws SchemaError.
  void validate(bool require_ranges = false) const;

  Json to_json() const;
  static FeatureSchema from_json(const Json& json);

  bool operator==(const FeatureSchema&) const = default;

 private:
  std::vector<FeatureSpec> features_;
  LabelSpec label_;
};

}  // namespace realcf::data
