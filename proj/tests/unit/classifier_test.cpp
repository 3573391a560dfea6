#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "realcf/classifier/mlp.hpp"
#include "realcf/data/sources.hpp"
#include "realcf/error.hpp"

namespace realcf::clf {
namespace {

const std::string kFixtures = REALCF_FIXTURE_DIR;

MlpSpec small_spec(std::size_t epochs = 3) {
  MlpSpec s = preset_classifier("synthetic1");
  s.epochs = epochs;
  return s;
}

data::Dataset toy_single_class(std::size_t n) {
  data::FeatureSchema schema({{.name = "a"}, {.name = "b"}});
  data::Dataset d;
  d.id = "toy";
  d.schema = schema;
  d.x = Tensor::zeros(n, 2);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> nd;
  for (double& v : d.x.values()) v = nd(rng);
  d.y.assign(n, 0);
  for (std::size_t r = 0; r < n; ++r) {
    d.split.train.push_back(r);
    d.split.test.push_back(r);
  }
  data::fit_scaler(d);
  return d;
}

TEST(Presets, ArchitecturesFollowTheHyperparameterTable) {
  const MlpSpec s1 = preset_classifier("synthetic1");
  ASSERT_EQ(s1.hidden.size(), 3u);
  EXPECT_EQ(s1.hidden[0].units, 64u);
  EXPECT_EQ(s1.epochs, 100u);
  const MlpSpec s2 = preset_classifier("synthetic2");
  EXPECT_DOUBLE_EQ(s2.hidden[0].l1, 0.01);
  EXPECT_EQ(s2.hidden[2].units, 64u);
  EXPECT_EQ(s2.epochs, 800u);
  const MlpSpec di = preset_classifier("diabetes");
  EXPECT_EQ(di.hidden[0].init, diff::Init::kHeNormal);
  EXPECT_TRUE(di.hidden[1].batch_norm);
  EXPECT_DOUBLE_EQ(di.hidden[2].dropout, 0.2);
  EXPECT_DOUBLE_EQ(di.learning_rate, 0.01);
  const MlpSpec sa = preset_classifier("sangiovese");
  EXPECT_EQ(sa.hidden[0].units, 512u);
  EXPECT_EQ(sa.batch_size, 32u);
  const MlpSpec ad = preset_classifier("adult");
  EXPECT_EQ(ad.hidden[0].activation, diff::Activation::kElu);
  EXPECT_EQ(ad.epochs, 120u);
  EXPECT_THROW(preset_classifier("iris"), ConfigError);
}

TEST(Spec, JsonRoundTripAndValidation) {
  const MlpSpec di = preset_classifier("diabetes");
  EXPECT_EQ(MlpSpec::from_json(di.to_json()), di);
  MlpSpec bad = di;
  bad.hidden[1].units = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = di;
  bad.hidden.clear();
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = di;
  bad.learning_rate = -1;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Score, AccuracyF1AndDegenerateCase) {
  const std::vector<int> truth{1, 0, 1, 1, 0}, pred{1, 0, 0, 1, 1};
  const ClassifierMetrics m = score(truth, pred);
  EXPECT_DOUBLE_EQ(m.accuracy, 0.6);
  // tp 2, fp 1, fn 1
  EXPECT_DOUBLE_EQ(m.f1, 2.0 * 2 / (2.0 * 2 + 1 + 1));
  const std::vector<int> zeros(4, 0);
  const ClassifierMetrics z = score(zeros, zeros);
  EXPECT_DOUBLE_EQ(z.accuracy, 1.0);
  EXPECT_DOUBLE_EQ(z.f1, 0.0);
  EXPECT_EQ(z.warnings.size(), 1u);
}

TEST(Train, SingleClassToyDataset) {
  const data::Dataset d = toy_single_class(40);
  MlpSpec s = small_spec(20);
  const TrainedClassifier c = train_classifier(d, s, 3);
  EXPECT_DOUBLE_EQ(c.test_metrics.accuracy, 1.0);
  EXPECT_DOUBLE_EQ(c.test_metrics.f1, 0.0);
  EXPECT_FALSE(c.test_metrics.warnings.empty());
}

TEST(Train, DeterministicPerSeed) {
  const data::Dataset d = data::gen_synthetic1(600, 5);
  const TrainedClassifier a = train_classifier(d, small_spec(), 9);
  const TrainedClassifier b = train_classifier(d, small_spec(), 9);
  const TrainedClassifier c = train_classifier(d, small_spec(), 10);
  EXPECT_EQ(a.checksum(), b.checksum());
  EXPECT_NE(a.checksum(), c.checksum());
  EXPECT_EQ(a.history.size(), 3u);
}

TEST(Train, DivergenceNamesTheEpoch) {
  const data::Dataset d = data::gen_synthetic1(400, 5);
  MlpSpec s = small_spec(5);
  s.learning_rate = 1e200;
  try {
    train_classifier(d, s, 1);
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch"), std::string::npos) << e.what();
  }
}

class TrainedFixture : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dataset = new data::Dataset(data::gen_synthetic1(1200, 7));
    model = new TrainedClassifier(train_classifier(*dataset, small_spec(5), 4));
  }
  static void TearDownTestSuite() {
    delete model;
    delete dataset;
  }
  Tensor encoded_test() const {
    const data::FeatureEncoder enc(dataset->schema, dataset->scaler);
    return enc.encode(dataset->gather(dataset->split.test));
  }
  static data::Dataset* dataset;
  static TrainedClassifier* model;
};
data::Dataset* TrainedFixture::dataset = nullptr;
TrainedClassifier* TrainedFixture::model = nullptr;

TEST_F(TrainedFixture, ProbabilitiesSumToOneAndPredictIsArgmax) {
  const Tensor x = encoded_test();
  const Tensor p = model->predict_proba(x);
  const auto y = model->predict(x);
  for (std::size_t r = 0; r < p.rows(); ++r) {
    EXPECT_NEAR(p(r, 0) + p(r, 1), 1.0, 1e-9);
    EXPECT_EQ(y[r], p(r, 1) > p(r, 0) ? 1 : 0);
  }
  EXPECT_GT(model->test_metrics.accuracy, 0.6);
  EXPECT_THROW(model->predict_proba(Tensor::zeros(2, 3)), ConfigError);
}

TEST_F(TrainedFixture, InputGradientMatchesFiniteDifferences) {
  Tensor x = Tensor::zeros(3, model->input_width());
  const Tensor t = encoded_test();
  for (std::size_t r = 0; r < 3; ++r) {
    std::copy_n(t.row_span(r).begin(), t.cols(), x.row_span(r).begin());
  }
  diff::Graph g;
  const auto input = g.parameter("x");
  g.set_output(g.sum(g.slice_cols(g.softmax(model->logits(g, input)), 1, 1)));
  diff::Bindings b;
  model->bind(b);
  b.set("x", x);
  const auto report = diff::finite_diff_check(g, b, 1e-6, {"x"});
  EXPECT_LT(report.max_rel_error, 1e-4) << report.worst_index;
  // Frozen weights never receive gradient.
  g.forward(b);
  g.backward();
  for (const auto& [name, grad] : g.gradients()) {
    if (name == "x") continue;
    for (double v : grad.values()) EXPECT_EQ(v, 0.0) << name;
  }
}

TEST_F(TrainedFixture, JsonRoundTripPreservesPredictions) {
  const TrainedClassifier back = TrainedClassifier::from_json(model->to_json());
  EXPECT_EQ(back.checksum(), model->checksum());
  const Tensor x = encoded_test();
  EXPECT_EQ(back.predict_proba(x), model->predict_proba(x));
  Json bad = model->to_json();
  bad["format"] = "something-else";
  EXPECT_THROW(TrainedClassifier::from_json(bad), ParseError);
}

TEST(Inference, EqualLogitsGiveHalfProbabilities) {
  MlpSpec s = small_spec();
  diff::ParameterSet p;
  std::size_t fan_in = 3;
  for (std::size_t k = 0; k < s.hidden.size(); ++k) {
    p.add("h" + std::to_string(k) + ".w", Tensor::zeros(fan_in, s.hidden[k].units));
    p.add("h" + std::to_string(k) + ".b", Tensor::zeros(1, s.hidden[k].units));
    fan_in = s.hidden[k].units;
  }
  p.add("out.w", Tensor::zeros(fan_in, 2));
  p.add("out.b", Tensor::zeros(1, 2));
  const TrainedClassifier c(s, 3, p);
  const Tensor proba = c.predict_proba(Tensor::filled(2, 3, 0.7));
  EXPECT_DOUBLE_EQ(proba(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(proba(1, 1), 0.5);
}

TEST(Inference, BatchNormAndDropoutAreInactiveAtInference) {
  const data::Dataset d = data::load_csv(kFixtures + "/diabetes_small.csv",
                                         data::preset_schema("diabetes"),
                                         data::preset_split("diabetes"), 34, "diabetes");
  MlpSpec s = preset_classifier("diabetes");
  s.epochs = 3;
  const TrainedClassifier c = train_classifier(d, s, 34);
  EXPECT_FALSE(c.state().entries().empty());
  const data::FeatureEncoder enc(d.schema, d.scaler);
  const Tensor x = enc.encode(d.gather(d.split.test));
  EXPECT_EQ(c.predict_proba(x), c.predict_proba(x));
  // Row results do not depend on the other rows in the batch.
  Tensor first = Tensor::zeros(1, x.cols());
  std::copy_n(x.row_span(0).begin(), x.cols(), first.row_span(0).begin());
  EXPECT_NEAR(c.predict_proba(first)(0, 1), c.predict_proba(x)(0, 1), 1e-15);
}

}  // namespace
}  // namespace realcf::clf
