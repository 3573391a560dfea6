#include "realcf/data/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "realcf/error.hpp"

namespace realcf::data {

// ---------------------------------------------------------------------------
// Scaler

double Scaler::scale_value(std::size_t feature, double x) const {
  if (categorical[feature]) return x;
  if (constant[feature]) return 0.0;
  return (x - min[feature]) / (max[feature] - min[feature]);
}

double Scaler::unscale_value(std::size_t feature, double s) const {
  if (categorical[feature]) return s;
  if (constant[feature]) return min[feature];
  return s * (max[feature] - min[feature]) + min[feature];
}

std::vector<double> Scaler::scale_row(std::span<const double> row) const {
  std::vector<double> out(row.size());
  for (std::size_t j = 0; j < row.size(); ++j) out[j] = scale_value(j, row[j]);
  return out;
}

std::vector<double> Scaler::unscale_row(std::span<const double> row) const {
  std::vector<double> out(row.size());
  for (std::size_t j = 0; j < row.size(); ++j) out[j] = unscale_value(j, row[j]);
  return out;
}

Json Scaler::to_json() const {
  return Json{{"min", min},
              {"max", max},
              {"constant", std::vector<bool>(constant)},
              {"categorical", std::vector<bool>(categorical)}};
}

Scaler Scaler::from_json(const Json& json) {
  Scaler s;
  s.min = json.at("min").get<std::vector<double>>();
  s.max = json.at("max").get<std::vector<double>>();
  s.constant = json.at("constant").get<std::vector<bool>>();
  s.categorical = json.at("categorical").get<std::vector<bool>>();
  const std::size_t d = s.min.size();
  if (s.max.size() != d || s.constant.size() != d || s.categorical.size() != d) {
    throw ParseError("scaler arrays have inconsistent lengths");
  }
  return s;
}

// ---------------------------------------------------------------------------
// Dataset

Tensor Dataset::gather(std::span<const std::size_t> indices) const {
  const std::size_t d = features();
  Tensor out = Tensor::zeros(indices.size(), d);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto src = x.row_span(indices[r]);
    std::copy(src.begin(), src.end(), out.row_span(r).begin());
  }
  return out;
}

std::vector<int> Dataset::labels(std::span<const std::size_t> indices) const {
  std::vector<int> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(y[i]);
  return out;
}

void fit_scaler(Dataset& dataset) {
  const std::size_t d = dataset.features();
  if (dataset.split.train.empty()) throw ConfigError("cannot fit scaler on an empty train split");
  Scaler s;
  s.min.assign(d, std::numeric_limits<double>::infinity());
  s.max.assign(d, -std::numeric_limits<double>::infinity());
  s.constant.assign(d, false);
  s.categorical.assign(d, false);
  for (std::size_t i : dataset.split.train) {
    for (std::size_t j = 0; j < d; ++j) {
      s.min[j] = std::min(s.min[j], dataset.x(i, j));
      s.max[j] = std::max(s.max[j], dataset.x(i, j));
    }
  }
  for (std::size_t j = 0; j < d; ++j) {
    auto& spec = dataset.schema[j];
    s.categorical[j] = !spec.continuous();
    s.constant[j] = spec.continuous() && !(s.max[j] > s.min[j]);
    if (spec.continuous()) {
      spec.min = s.min[j];
      spec.max = s.max[j];
    }
  }
  dataset.scaler = std::move(s);
}

Dataset scale(const Dataset& dataset) {
  if (dataset.scaled) throw ConfigError("dataset is already scaled");
  if (dataset.scaler.min.size() != dataset.features()) {
    throw ConfigError("scaler not fitted for dataset '" + dataset.id + "'");
  }
  Dataset out = dataset;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    for (std::size_t j = 0; j < out.features(); ++j) {
      out.x(i, j) = dataset.scaler.scale_value(j, dataset.x(i, j));
    }
  }
  out.scaled = true;
  return out;
}

std::vector<double> unscale(const Scaler& scaler, std::span<const double> instance) {
  return scaler.unscale_row(instance);
}

Split train_test_split(std::span<const int> labels, double test_fraction, std::uint64_t seed,
                       bool stratify) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw ConfigError("test fraction must lie in (0, 1)");
  }
  std::mt19937_64 rng(seed);
  Split split;
  auto take = [&](std::vector<std::size_t> pool) {
    std::shuffle(pool.begin(), pool.end(), rng);
    const auto n_test = static_cast<std::size_t>(
        std::ceil(test_fraction * static_cast<double>(pool.size())));
    split.test.insert(split.test.end(), pool.begin(), pool.begin() + n_test);
    split.train.insert(split.train.end(), pool.begin() + n_test, pool.end());
  };
  if (stratify) {
    for (int cls : {0, 1}) {
      std::vector<std::size_t> pool;
      for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == cls) pool.push_back(i);
      }
      take(std::move(pool));
    }
  } else {
    std::vector<std::size_t> pool(labels.size());
    for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = i;
    take(std::move(pool));
  }
  split.train_balanced = split.train;
  return split;
}

void oversample(Split& split, std::span<const int> labels, std::uint64_t seed) {
  std::vector<std::size_t> by_class[2];
  for (std::size_t i : split.train) {
    const int cls = labels[i];
    if (cls != 0 && cls != 1) throw ConfigError("labels must be 0 or 1");
    by_class[cls].push_back(i);
  }
  split.train_balanced = split.train;
  const std::size_t n0 = by_class[0].size(), n1 = by_class[1].size();
  if (n0 == n1 || n0 == 0 || n1 == 0) return;
  const auto& minority = n0 < n1 ? by_class[0] : by_class[1];
  const std::size_t missing = std::max(n0, n1) - std::min(n0, n1);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_int_distribution<std::size_t> pick(0, minority.size() - 1);
  for (std::size_t k = 0; k < missing; ++k) split.train_balanced.push_back(minority[pick(rng)]);
}

// ---------------------------------------------------------------------------
// FeatureEncoder

FeatureEncoder::FeatureEncoder(const FeatureSchema& schema, const Scaler& scaler)
    : scaler_(scaler) {
  if (scaler.min.size() != schema.size()) throw ConfigError("scaler/schema width mismatch");
  for (std::size_t j = 0; j < schema.size(); ++j) {
    offsets_.push_back(width_);
    const bool cat = !schema[j].continuous();
    categorical_.push_back(cat);
    const std::size_t w = cat ? schema[j].category_count() : 1;
    if (w == 0) throw SchemaError("categorical feature '" + schema[j].name + "' has no categories");
    widths_.push_back(w);
    width_ += w;
  }
}

Tensor FeatureEncoder::encode(const Tensor& rows) const {
  if (rows.cols() != features()) {
    throw ConfigError("expected " + std::to_string(features()) + " features, got " +
                      std::to_string(rows.cols()));
  }
  Tensor out = Tensor::zeros(rows.rows(), width_);
  for (std::size_t r = 0; r < rows.rows(); ++r) {
    for (std::size_t j = 0; j < features(); ++j) {
      const double v = rows(r, j);
      if (categorical_[j]) {
        const auto code = static_cast<long long>(std::llround(v));
        if (code < 0 || static_cast<std::size_t>(code) >= widths_[j] || v != static_cast<double>(code)) {
          throw SchemaError("category code " + std::to_string(v) + " out of range for feature " +
                            std::to_string(j));
        }
        out(r, offsets_[j] + static_cast<std::size_t>(code)) = 1.0;
      } else {
        out(r, offsets_[j]) = scaler_.scale_value(j, v);
      }
    }
  }
  return out;
}

Tensor FeatureEncoder::decode(const Tensor& encoded) const {
  if (encoded.cols() != width_) throw ConfigError("encoded width mismatch");
  Tensor out = Tensor::zeros(encoded.rows(), features());
  for (std::size_t r = 0; r < encoded.rows(); ++r) {
    for (std::size_t j = 0; j < features(); ++j) {
      if (categorical_[j]) {
        std::size_t best = 0;
        for (std::size_t k = 1; k < widths_[j]; ++k) {
          if (encoded(r, offsets_[j] + k) > encoded(r, offsets_[j] + best)) best = k;
        }
        out(r, j) = static_cast<double>(best);
      } else {
        out(r, j) = scaler_.unscale_value(j, encoded(r, offsets_[j]));
      }
    }
  }
  return out;
}

Tensor FeatureEncoder::expand_mask(const Tensor& mask) const {
  if (mask.cols() != features()) throw ConfigError("mask width mismatch");
  Tensor out = Tensor::zeros(mask.rows(), width_);
  for (std::size_t r = 0; r < mask.rows(); ++r) {
    for (std::size_t j = 0; j < features(); ++j) {
      const double m = mask(r, j);
      if (m != 0.0 && m != 1.0) throw ConfigError("mask entries must be 0 or 1");
      for (std::size_t k = 0; k < widths_[j]; ++k) out(r, offsets_[j] + k) = m;
    }
  }
  return out;
}

Tensor FeatureEncoder::continuous_indicator() const {
  Tensor out = Tensor::zeros(1, width_);
  for (std::size_t j = 0; j < features(); ++j) {
    if (!categorical_[j]) out(0, offsets_[j]) = 1.0;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Serialization

Json dataset_to_json(const Dataset& dataset) {
  return Json{{"id", dataset.id},
              {"schema", dataset.schema.to_json()},
              {"x", tensor_to_json(dataset.x)},
              {"y", dataset.y},
              {"split",
               Json{{"train", dataset.split.train},
                    {"train_balanced", dataset.split.train_balanced},
                    {"test", dataset.split.test}}},
              {"scaler", dataset.scaler.to_json()},
              {"scaled", dataset.scaled}};
}

Dataset dataset_from_json(const Json& json) {
  try {
    Dataset d;
    d.id = json.at("id").get<std::string>();
    d.schema = FeatureSchema::from_json(json.at("schema"));
    d.x = tensor_from_json(json.at("x"));
    d.y = json.at("y").get<std::vector<int>>();
    d.split.train = json.at("split").at("train").get<std::vector<std::size_t>>();
    d.split.train_balanced = json.at("split").at("train_balanced").get<std::vector<std::size_t>>();
    d.split.test = json.at("split").at("test").get<std::vector<std::size_t>>();
    d.scaler = Scaler::from_json(json.at("scaler"));
    d.scaled = json.at("scaled").get<bool>();
    return d;
  } catch (const Json::exception& e) {
    throw ParseError(std::string("malformed dataset cache: ") + e.what());
  }
}

std::string cache_key(const std::string& dataset_id, std::uint64_t seed, const std::string& split) {
  return dataset_id + "-seed" + std::to_string(seed) + "-" + split + ".json";
}

}  // namespace realcf::data
