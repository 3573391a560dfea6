#pragma once

#include <cstdint>
#include <istream>
#include <span>
#include <string>
#include <vector>

#include "realcf/data/dataset.hpp"
#include "realcf/data/edges.hpp"

namespace realcf::data {

// ---------------------------------------------------------------------------
// Synthetic structural-equation datasets.

/// Label rule of the first SEM: 1 iff more than two of sin(x1..x5) exceed 0.5.
int synthetic1_label(std::span<const double> row);
/// Label rule of the second SEM: 1 iff sin(x_i) > 0 for every feature.
int synthetic2_label(std::span<const double> row);

/// X1=U1, X2=U2, X3=2X1-X2+U3, X4=-2X3+U4, X5=sin(X3)+U5, X6=U6, X7=100-U6 with
/// U1..U4 ~ N(0, 0.5), U5 ~ N(0, 0.3), U6 ~ N(50, 10) (second argument is the
/// standard deviation). 85/15 split, minority class oversampled in train.
Dataset gen_synthetic1(std::size_t n, std::uint64_t seed, double test_fraction = 0.15);

/// X1 ~ N(1, 0.6), X2 = X1^2 + N(0, 0.25), X3 = 1.5 + sin(-4 X1) + N(0, 0.5),
/// X4 ~ N(2, 1) clipped above at 3.36, X5 = 1 / exp(-1.5 X4) + 2 + N(0, 2).
/// 90/10 split, minority class oversampled in train.
Dataset gen_synthetic2(std::size_t n, std::uint64_t seed, double test_fraction = 0.1);

// ---------------------------------------------------------------------------
// CSV ingestion.

struct SplitSpec {
  double test_fraction = 0.2;
  bool stratify = false;
  /// Randomly drop label-0 rows until both classes have equal counts.
  bool downsample_negative = false;
  /// Column whose value "test" marks test rows; used when present in the file.
  std::string split_column;
  /// Columns that must be present in the file but are not features.
  std::vector<std::string> drop_columns;
  bool oversample = true;
};

/// Header row, comma separated, optional double quotes. Columns are matched
/// to the schema by name; categorical codes follow the schema's category list
/// (inferred as the sorted distinct values when the list is empty).
Dataset parse_csv(std::istream& in, FeatureSchema schema, const SplitSpec& split,
                  std::uint64_t seed, std::string id = "csv");
Dataset load_csv(const std::string& path, const FeatureSchema& schema, const SplitSpec& split,
                 std::uint64_t seed, std::string id = "csv");

/// JSON sidecar: {"label": {...}, "features": [{name, kind, categories?, mutable}]}.
FeatureSchema load_schema(const std::string& path);

/// Splits one CSV line into fields.
std::vector<std::string> split_csv_line(const std::string& line);

// ---------------------------------------------------------------------------
// Per-dataset presets.

std::vector<std::string> known_datasets();
bool is_synthetic(const std::string& id);

/// Feature names, kinds and structural mutability (ranges are filled on load).
FeatureSchema preset_schema(const std::string& id);
/// Known dependency edges and sum constraints.
EdgeList preset_edges(const std::string& id, const FeatureSchema& schema);
/// Protected attributes counted by the sensitive-change metric.
std::vector<std::string> preset_sensitive(const std::string& id);
SplitSpec preset_split(const std::string& id);
std::uint64_t preset_seed(const std::string& id);
std::size_t preset_samples(const std::string& id);
/// File name expected under a data directory, e.g. "diabetes.csv".
std::string preset_csv_name(const std::string& id);

struct DataSource {
  std::string id;
  std::uint64_t seed = 42;
  std::size_t samples = 0;   // synthetic only; 0 = preset count
  std::string csv_path;      // real datasets
  std::string schema_path;   // optional sidecar override
};

/// Builds or loads a dataset with its scaler fitted on the training split.
Dataset load_dataset(const DataSource& source);

}  // namespace realcf::data
