#include <algorithm>
#include <cmath>
#include <random>

#include "realcf/data/sources.hpp"
#include "realcf/error.hpp"

namespace realcf::data {

namespace {

FeatureSchema numbered_schema(std::size_t d) {
  std::vector<FeatureSpec> features;
  for (std::size_t j = 0; j < d; ++j) {
    FeatureSpec f;
    f.name = "X" + std::to_string(j + 1);
    features.push_back(std::move(f));
  }
  return FeatureSchema(std::move(features), LabelSpec{"label", {"1"}});
}

Dataset finish(std::string id, FeatureSchema schema, Tensor x, std::vector<int> y,
               double test_fraction, std::uint64_t seed) {
  Dataset d;
  d.id = std::move(id);
  d.schema = std::move(schema);
  d.x = std::move(x);
  d.y = std::move(y);
  d.split = train_test_split(d.y, test_fraction, seed + 1, false);
  oversample(d.split, d.y, seed + 2);
  fit_scaler(d);
  return d;
}

}  // namespace

int synthetic1_label(std::span<const double> row) {
  int count = 0;
  for (std::size_t i = 0; i < 5 && i < row.size(); ++i) {
    if (std::sin(row[i]) > 0.5) ++count;
  }
  return count > 2 ? 1 : 0;
}

int synthetic2_label(std::span<const double> row) {
  for (double v : row) {
    if (!(std::sin(v) > 0.0)) return 0;
  }
  return 1;
}

Dataset gen_synthetic1(std::size_t n, std::uint64_t seed, double test_fraction) {
  if (n == 0) throw ConfigError("synthetic1 needs n >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> u14(0.0, 0.5), u5(0.0, 0.3), u6(50.0, 10.0);
  Tensor x = Tensor::zeros(n, 7);
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double e1 = u14(rng), e2 = u14(rng), e3 = u14(rng), e4 = u14(rng);
    const double e5 = u5(rng), e6 = u6(rng);
    const double x1 = e1;
    const double x2 = e2;
    const double x3 = 2.0 * x1 - x2 + e3;
    const double x4 = -2.0 * x3 + e4;
    const double x5 = std::sin(x3) + e5;
    const double x6 = e6;
    const double x7 = 100.0 - e6;
    const double row[] = {x1, x2, x3, x4, x5, x6, x7};
    std::copy(std::begin(row), std::end(row), x.row_span(i).begin());
    y[i] = synthetic1_label(row);
  }
  return finish("synthetic1", numbered_schema(7), std::move(x), std::move(y), test_fraction, seed);
}

Dataset gen_synthetic2(std::size_t n, std::uint64_t seed, double test_fraction) {
  if (n == 0) throw ConfigError("synthetic2 needs n >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n1(1.0, 0.6), n2(0.0, 0.25), n3(0.0, 0.5), n4(2.0, 1.0),
      n5(0.0, 2.0);
  Tensor x = Tensor::zeros(n, 5);
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x1 = n1(rng);
    const double x2 = x1 * x1 + n2(rng);
    const double x3 = 1.5 + std::sin(-4.0 * x1) + n3(rng);
    const double x4 = std::min(n4(rng), 3.36);
    const double x5 = 1.0 / std::exp(-1.5 * x4) + 2.0 + n5(rng);
    const double row[] = {x1, x2, x3, x4, x5};
    std::copy(std::begin(row), std::end(row), x.row_span(i).begin());
    y[i] = synthetic2_label(row);
  }
  return finish("synthetic2", numbered_schema(5), std::move(x), std::move(y), test_fraction, seed);
}

}  // namespace realcf::data
