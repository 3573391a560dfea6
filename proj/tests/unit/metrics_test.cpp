#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "realcf/data/sources.hpp"
#include "realcf/error.hpp"
#include "realcf/metrics/metrics.hpp"

namespace realcf::metrics {
namespace {

const std::string kFixtures = REALCF_FIXTURE_DIR;

class MetricsFixture : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dataset = new data::Dataset(data::gen_synthetic1(3000, 42));
    edges = new data::EdgeList(data::preset_edges("synthetic1", dataset->schema));
    models = new std::vector<EdgeModel>(fit_edge_models(*dataset, *edges));
    auto spec = clf::preset_classifier("synthetic1");
    spec.epochs = 3;
    classifier = new clf::TrainedClassifier(clf::train_classifier(*dataset, spec, 1));
  }
  static void TearDownTestSuite() {
    delete classifier;
    delete models;
    delete edges;
    delete dataset;
  }

  // CF = factual for the test split.
  CfBatch identity_batch() const {
    const data::FeatureEncoder enc(dataset->schema, dataset->scaler);
    CfBatch b;
    b.factual = dataset->gather(dataset->split.test);
    b.counterfactual = b.factual;
    b.factual_encoded = enc.encode(b.factual);
    b.counterfactual_encoded = b.factual_encoded;
    b.mask = Tensor::zeros(b.factual.rows(), b.factual.cols());
    b.factual_pred = classifier->predict(b.factual_encoded);
    b.cf_pred = b.factual_pred;
    for (int p : b.factual_pred) b.target.push_back(1 - p);
    return b;
  }

  static data::Dataset* dataset;
  static data::EdgeList* edges;
  static std::vector<EdgeModel>* models;
  static clf::TrainedClassifier* classifier;
};
data::Dataset* MetricsFixture::dataset = nullptr;
data::EdgeList* MetricsFixture::edges = nullptr;
std::vector<EdgeModel>* MetricsFixture::models = nullptr;
clf::TrainedClassifier* MetricsFixture::classifier = nullptr;

TEST_F(MetricsFixture, IdentityBatch) {
  const CfBatch b = identity_batch();
  const EvaluationContext ctx{&dataset->schema, models, nullptr, {}};
  const MetricsReport r = evaluate(b, ctx);
  EXPECT_EQ(r.validity, 0.0);
  EXPECT_EQ(r.distance, 0.0);
  EXPECT_EQ(r.causal_edge_score, 0.0);
  EXPECT_EQ(r.plausibility, 1.0);
  EXPECT_EQ(validity(b, *classifier), 0.0);
  // DPS of the data's own fit.
  double expected = 0.0;
  for (const auto& m : *models) {
    double s = 0.0;
    for (std::size_t row = 0; row < b.size(); ++row) {
      s += std::exp(-std::abs(m.predict(b.factual(row, m.edge.parent)) - b.factual(row, m.edge.child)) /
                    m.child_sigma);
    }
    expected += s / b.size() / models->size();
  }
  EXPECT_NEAR(r.dps, expected, 1e-12);
}

TEST_F(MetricsFixture, EdgeModelsFitTheGeneratingEquations) {
  ASSERT_EQ(models->size(), edges->edges.size());
  for (const auto& m : *models) {
    // X4 = -2 X3 + N(0, 0.5)
    if (m.edge.child == 3 && m.edge.parent == 2) {
      EXPECT_NEAR(m.slope, -2.0, 0.05);
      EXPECT_NEAR(m.residual_sigma, 0.5, 0.03);
    }
    // X5 = sin(X3) + N(0, 0.3)
    if (m.edge.child == 4) {
      EXPECT_EQ(m.edge.form, data::EdgeForm::kNonlinear);
      EXPECT_EQ(m.centers.size(), EdgeModel::kBins);
      EXPECT_NEAR(m.predict(0.0), 0.0, 0.1);
      EXPECT_NEAR(m.predict(1.2), std::sin(1.2), 0.15);
      EXPECT_NEAR(m.residual_sigma, 0.3, 0.03);
    }
    EXPECT_GT(m.child_sigma, 0.0);
    const EdgeModel back = EdgeModel::from_json(m.to_json());
    EXPECT_EQ(back.predict(0.37), m.predict(0.37));
  }
}

TEST_F(MetricsFixture, CausalEdgeScoreClosedForm) {
  const EdgeModel* lin = nullptr;
  for (const auto& m : *models) {
    if (m.edge.child == 3 && m.edge.parent == 2) lin = &m;
  }
  ASSERT_NE(lin, nullptr);
  const std::vector<EdgeModel> one{*lin};
  Tensor x = dataset->gather(std::vector<std::size_t>{0, 1, 2});
  Tensor cf = x;
  const double s = lin->residual_sigma;
  double expected = 0.0;
  for (std::size_t r = 0; r < 3; ++r) {
    const double resid = (x(r, 3) - lin->predict(x(r, 2))) / s;
    cf(r, 3) = lin->predict(x(r, 2)) + 3.0 * s;
    expected += -(9.0 - resid * resid) / 2.0 / 3.0;
  }
  const EdgeScores ces = causal_edge_score(x, cf, one);
  EXPECT_NEAR(ces.mean, expected, 1e-10);
  ASSERT_TRUE(ces.per_edge[0].has_value());
  EXPECT_NEAR(*ces.per_edge[0], expected, 1e-10);
}

TEST_F(MetricsFixture, DpsPointValues) {
  EdgeModel m;
  m.edge = {1, 0, data::EdgeForm::kLinear};
  m.slope = 2.0;
  m.intercept = 1.0;
  m.child_sigma = 0.5;
  m.residual_sigma = 0.1;
  const Tensor on = Tensor::matrix(2, 2, {1.0, 3.0, -1.0, -1.0});
  EXPECT_DOUBLE_EQ(dps(on, {m}).mean, 1.0);
  const Tensor off = Tensor::matrix(1, 2, {1.0, 3.5});
  EXPECT_NEAR(dps(off, {m}).mean, std::exp(-1.0), 1e-15);
  m.child_sigma = 0.0;
  const EdgeScores skipped = dps(off, {m});
  EXPECT_FALSE(skipped.per_edge[0].has_value());
  EXPECT_FALSE(skipped.warnings.empty());
}

TEST_F(MetricsFixture, PerEdgeDecompositionAndIndependence) {
  const CfBatch b = metrics::random_flip_baseline(
      *classifier, data::FeatureEncoder(dataset->schema, dataset->scaler), dataset->schema,
      dataset->gather(dataset->split.test), Tensor::zeros(dataset->split.test.size(), 7), 3);
  const EdgeScores all = dps(b.counterfactual, *models);
  double sum = 0.0;
  for (const auto& v : all.per_edge) sum += *v;
  EXPECT_NEAR(all.mean, sum / models->size(), 1e-12);
  const std::vector<EdgeModel> first_two(models->begin(), models->begin() + 2);
  const EdgeScores partial = dps(b.counterfactual, first_two);
  EXPECT_EQ(*partial.per_edge[0], *all.per_edge[0]);
  EXPECT_EQ(*partial.per_edge[1], *all.per_edge[1]);
  const EdgeScores ces = causal_edge_score(b.factual, b.counterfactual, *models);
  double csum = 0.0;
  for (const auto& v : ces.per_edge) csum += *v;
  EXPECT_NEAR(ces.mean, csum / models->size(), 1e-12);
}

TEST_F(MetricsFixture, RandomBaselineRespectsMasksAndFlips) {
  const Tensor x = dataset->gather(dataset->split.test);
  Tensor mask = Tensor::zeros(x.rows(), 7);
  for (std::size_t r = 0; r < x.rows(); ++r) mask(r, r % 7) = 1.0;
  const data::FeatureEncoder enc(dataset->schema, dataset->scaler);
  const CfBatch b = random_flip_baseline(*classifier, enc, dataset->schema, x, mask, 11);
  for (std::size_t r = 0; r < x.rows(); ++r) EXPECT_EQ(b.counterfactual(r, r % 7), x(r, r % 7));
  EXPECT_GT(validity(b), 0.9);
  EXPECT_EQ(plausibility(b.counterfactual, dataset->schema), 1.0);
  const CfBatch again = random_flip_baseline(*classifier, enc, dataset->schema, x, mask, 11);
  EXPECT_EQ(again.counterfactual, b.counterfactual);
}

TEST_F(MetricsFixture, PermutationInvariance) {
  const data::FeatureEncoder enc(dataset->schema, dataset->scaler);
  const Tensor x = dataset->gather(dataset->split.test);
  const CfBatch b = random_flip_baseline(*classifier, enc, dataset->schema, x,
                                         Tensor::zeros(x.rows(), 7), 5);
  std::vector<std::size_t> perm(b.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::reverse(perm.begin(), perm.end());
  CfBatch p = b;
  auto permute = [&](const Tensor& t) {
    Tensor out = t;
    for (std::size_t r = 0; r < perm.size(); ++r) {
      std::copy_n(t.row_span(perm[r]).begin(), t.cols(), out.row_span(r).begin());
    }
    return out;
  };
  p.factual = permute(b.factual);
  p.counterfactual = permute(b.counterfactual);
  p.factual_encoded = permute(b.factual_encoded);
  p.counterfactual_encoded = permute(b.counterfactual_encoded);
  for (std::size_t r = 0; r < perm.size(); ++r) {
    p.target[r] = b.target[perm[r]];
    p.factual_pred[r] = b.factual_pred[perm[r]];
    p.cf_pred[r] = b.cf_pred[perm[r]];
  }
  const EvaluationContext ctx{&dataset->schema, models, nullptr, {0, 1}};
  const MetricsReport a = evaluate(b, ctx), c = evaluate(p, ctx);
  EXPECT_EQ(a.validity, c.validity);
  EXPECT_NEAR(a.distance, c.distance, 1e-12);
  EXPECT_NEAR(a.causal_edge_score, c.causal_edge_score, 1e-10);
  EXPECT_NEAR(a.dps, c.dps, 1e-12);
  EXPECT_EQ(a.im1_sensitive, c.im1_sensitive);
  EXPECT_EQ(a.plausibility, c.plausibility);
}

TEST(Distance, RangeNormalisedGapPlusHamming) {
  data::FeatureSchema s({{.name = "a", .min = 0.0, .max = 4.0},
                         {.name = "b", .min = 10.0, .max = 10.0},
                         {.name = "c", .kind = data::FeatureKind::kCategorical,
                          .categories = {"x", "y", "z"}}});
  const Tensor x = Tensor::matrix(2, 3, {0.0, 10.0, 0.0, 1.0, 10.0, 2.0});
  EXPECT_EQ(distance(x, x, s), 0.0);
  Tensor cf = x;
  cf(0, 0) = 4.0;  // full range
  std::vector<std::string> warnings;
  EXPECT_DOUBLE_EQ(distance(x, cf, s, &warnings), 0.5);
  EXPECT_EQ(warnings.size(), 1u);
  cf(1, 2) = 1.0;
  cf(1, 1) = 99.0;  // zero-range feature is skipped
  EXPECT_DOUBLE_EQ(distance(x, cf, s), 1.0);
  EXPECT_THROW(distance(x, Tensor::zeros(1, 3), s), ConfigError);
}

TEST(Sensitive, ChangedProtectedAttributes) {
  const Tensor x = Tensor::matrix(4, 3, {0, 1, 0, 1, 1, 0, 0, 0, 1, 1, 0, 1});
  Tensor cf = x;
  EXPECT_EQ(im1_sensitive(x, cf, {}), 0.0);
  cf(0, 2) = 1;
  cf(3, 2) = 0;
  EXPECT_DOUBLE_EQ(im1_sensitive(x, cf, {2}), 0.5);
  EXPECT_DOUBLE_EQ(im1_sensitive(x, cf, {0, 1}), 0.0);
}

TEST(Plausibility, TrainBoxMembership) {
  data::FeatureSchema s({{.name = "a", .min = 0.0, .max = 1.0},
                         {.name = "c", .kind = data::FeatureKind::kCategorical,
                          .categories = {"x", "y"}}});
  Tensor cf = Tensor::matrix(4, 2, {0.0, 0, 1.0, 1, 0.5, 0, 0.2, 1});
  EXPECT_EQ(plausibility(cf, s), 1.0);
  cf(2, 0) = 2.0;
  EXPECT_DOUBLE_EQ(plausibility(cf, s), 0.75);
}

TEST(Autoencoders, RatioProperties) {
  const data::Dataset d = data::gen_synthetic1(800, 2);
  AutoencoderSpec spec;
  spec.epochs = 3;
  const ClassAutoencoders aes = ClassAutoencoders::fit(d, spec, 1);
  const data::FeatureEncoder enc(d.schema, d.scaler);
  const Tensor x = enc.encode(d.gather(d.split.test));
  std::vector<int> t(x.rows(), 1), o(x.rows(), 1);
  // Same autoencoder on both sides.
  EXPECT_NEAR(im1_recon(x, t, o, aes), 1.0, 1e-6);
  std::fill(o.begin(), o.end(), 0);
  const auto ep = aes.positive.errors(x), en = aes.negative.errors(x);
  double expected = 0.0;
  for (std::size_t r = 0; r < x.rows(); ++r) expected += ep[r] / (en[r] + 1e-8) / x.rows();
  EXPECT_NEAR(im1_recon(x, t, o, aes), expected, 1e-12);
  const ClassAutoencoders back = ClassAutoencoders::from_json(aes.to_json());
  EXPECT_EQ(back.positive.reconstruct(x), aes.positive.reconstruct(x));
}

TEST(Autoencoders, PerfectTargetReconstructionDrivesRatioToZero) {
  // A zero-output autoencoder reconstructs zero rows perfectly.
  const Tensor rows = Tensor::zeros(20, 3);
  AutoencoderSpec spec;
  spec.epochs = 0;
  ClassAutoencoders aes{Autoencoder::fit(rows, spec, 1), Autoencoder::fit(rows, spec, 2)};
  Json j = aes.positive.to_json();
  for (auto& [name, value] : j["parameters"].items()) {
    for (auto& v : value["values"]) v = 0.0;
  }
  j["parameters"]["ae_out.b"]["values"] = {-60.0, -60.0, -60.0};
  aes.positive = Autoencoder::from_json(j);
  const std::vector<int> target(20, 1), original(20, 0);
  Json neg = aes.negative.to_json();
  for (auto& [name, value] : neg["parameters"].items()) {
    for (auto& v : value["values"]) v = 0.0;
  }
  aes.negative = Autoencoder::from_json(neg);  // outputs 0.5 everywhere
  EXPECT_LT(im1_recon(rows, target, original, aes), 1e-20);
}

TEST(Autoencoders, TooFewClassMembers) {
  data::Dataset d = data::gen_synthetic1(400, 3);
  std::vector<std::size_t> keep;
  std::size_t positives = 0;
  for (std::size_t r : d.split.train) {
    if (d.y[r] == 1 && positives++ >= 5) continue;
    keep.push_back(r);
  }
  d.split.train = keep;
  EXPECT_THROW(ClassAutoencoders::fit(d, AutoencoderSpec{}, 1), ConfigError);
  EXPECT_THROW(Autoencoder::fit(Tensor::zeros(9, 2), AutoencoderSpec{}, 1), ConfigError);
}

TEST(Report, JsonOmitsRuntimeAndTableAligns) {
  MetricsReport r;
  r.validity = 0.996;
  r.distance = 0.296;
  r.causal_edge_score = -6.558;
  r.dps = 0.7;
  r.plausibility = 1.0;
  r.n_evaluated = 1500;
  r.runtime_seconds = 12.5;
  r.ces_per_edge = {-1.0, std::nullopt};
  const Json j = r.to_json();
  EXPECT_FALSE(j.contains("runtime_seconds"));
  EXPECT_TRUE(j["ces_per_edge"][1].is_null());
  const MetricsReport back = MetricsReport::from_json(j);
  EXPECT_EQ(back.to_json().dump(), j.dump());
  const std::string header = MetricsReport::table_header();
  const std::string row = r.table_row("RealAC");
  EXPECT_EQ(header.size(), row.size());
  EXPECT_NE(row.find("0.996"), std::string::npos);
  EXPECT_NE(header.find("plau."), std::string::npos);
}

}  // namespace
}  // namespace realcf::metrics
