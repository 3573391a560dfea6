#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "realcf/data/sources.hpp"
#include "realcf/dependency/mutual_info.hpp"
#include "realcf/diff/layers.hpp"
#include "realcf/error.hpp"

namespace realcf::dep {
namespace {

// Direct double-loop MI with separately computed marginals.
double mi_oracle(const Tensor& p) {
  const std::size_t bi = p.rows(), bj = p.cols();
  std::vector<double> row(bi, 0.0), col(bj, 0.0);
  for (std::size_t a = 0; a < bi; ++a) {
    for (std::size_t b = 0; b < bj; ++b) row[a] += p(a, b);
  }
  for (std::size_t b = 0; b < bj; ++b) {
    for (std::size_t a = 0; a < bi; ++a) col[b] += p(a, b);
  }
  double mi = 0.0;
  for (std::size_t a = 0; a < bi; ++a) {
    for (std::size_t b = 0; b < bj; ++b) {
      if (p(a, b) > 0.0) mi += p(a, b) * std::log(p(a, b) / (row[a] * col[b]));
    }
  }
  return mi;
}

double max_cell_gap(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

TEST(JointHistogram, IdenticalFeaturesSplitAtMedian) {
  const std::vector<double> x{0.1, 0.2, 0.3, 0.7, 0.8, 0.9};
  const auto h = joint_histogram(x, x, {0.0, 0.5, 1.0}, {0.0, 0.5, 1.0});
  EXPECT_DOUBLE_EQ(h.p(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(h.p(0, 1), 0.0);
  EXPECT_DOUBLE_EQ(h.p(1, 0), 0.0);
  EXPECT_DOUBLE_EQ(h.p(1, 1), 0.5);
}

TEST(JointHistogram, SingleCellAndClamping) {
  const std::vector<double> xi{-5.0, 0.1, 0.2}, xj{0.95, 1.0, 7.0};
  const auto h = joint_histogram(xi, xj, equal_width_edges(0, 1, 4), equal_width_edges(0, 1, 4));
  EXPECT_DOUBLE_EQ(h.p(0, 3), 1.0);
  double total = 0.0;
  for (double v : h.p.values()) total += v;
  EXPECT_DOUBLE_EQ(total, 1.0);
}

TEST(JointHistogram, SevenPointsMatchBruteForceCount) {
  const std::vector<double> xi{0.05, 0.40, 0.41, 0.90, 0.66, 0.10, 1.00};
  const std::vector<double> xj{0.95, 0.20, 0.50, 0.90, 0.34, 0.01, 0.00};
  const std::vector<double> e{0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0};
  const auto h = joint_histogram(xi, xj, e, e);
  Tensor counts = Tensor::zeros(3, 3);
  for (std::size_t n = 0; n < xi.size(); ++n) {
    std::size_t a = 0, b = 0;
    while (a < 2 && xi[n] >= e[a + 1]) ++a;
    while (b < 2 && xj[n] >= e[b + 1]) ++b;
    counts(a, b) += 1.0 / 7.0;
  }
  for (std::size_t i = 0; i < 9; ++i) EXPECT_NEAR(h.p[i], counts[i], 1e-15) << i;
}

TEST(JointHistogram, RejectsEmptyAndMismatchedInput) {
  const std::vector<double> none, one{0.5}, two{0.1, 0.2};
  const auto e = equal_width_edges(0, 1, 2);
  EXPECT_THROW(joint_histogram(none, none, e, e), ConfigError);
  EXPECT_THROW(joint_histogram(one, two, e, e), ConfigError);
  EXPECT_THROW(joint_histogram(one, one, {0.0, 1.0}, e), ConfigError);
}

TEST(MutualInformation, IndependenceAndDeterministicDependence) {
  EXPECT_NEAR(mutual_information(Tensor::matrix(2, 2, {0.25, 0.25, 0.25, 0.25})), 0.0, 1e-15);
  EXPECT_NEAR(mutual_information(Tensor::matrix(2, 2, {0.5, 0, 0, 0.5})), std::log(2.0), 1e-15);
}

TEST(MutualInformation, MatchesDoubleLoopOracleOnRandomHistograms) {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor p = Tensor::zeros(5, 5);
    double total = 0.0;
    for (double& v : p.values()) {
      v = u(rng) < 0.2 ? 0.0 : u(rng);
      total += v;
    }
    for (double& v : p.values()) v /= total;
    EXPECT_NEAR(mutual_information(p), mi_oracle(p), 1e-12) << "trial " << trial;
    EXPECT_GE(mutual_information(p), 0.0);
  }
  const Tensor p3 = Tensor::matrix(3, 3, {0.1, 0.05, 0.0, 0.02, 0.3, 0.08, 0.15, 0.1, 0.2});
  EXPECT_NEAR(mutual_information(p3), mi_oracle(p3), 1e-12);
}

TEST(SoftHistogram, ConvergesToHardHistogramOnSeparatedData) {
  // Points sit at bin centres of a 5-bin grid on [0, 1].
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> bin(0, 4);
  std::vector<double> xi, xj;
  for (int n = 0; n < 200; ++n) {
    xi.push_back(0.1 + 0.2 * bin(rng));
    xj.push_back(0.1 + 0.2 * bin(rng));
  }
  const auto e = equal_width_edges(0, 1, 5);
  const auto hard = joint_histogram(xi, xj, e, e);
  double prev = 1.0, first = 0.0;
  for (double t : {0.5, 0.1, 0.02}) {
    const auto soft = soft_joint_histogram(xi, xj, e, e, t);
    double total = 0.0;
    for (double v : soft.p.values()) total += v;
    EXPECT_NEAR(total, 1.0, 1e-9);
    const double gap = max_cell_gap(soft.p, hard.p);
    EXPECT_LE(gap, prev) << "temperature " << t;
    if (t == 0.5) first = gap;
    prev = gap;
  }
  EXPECT_GT(first, prev);
  EXPECT_LT(prev, 1e-3);
  EXPECT_LT(max_cell_gap(soft_joint_histogram(xi, xj, e, e, 0.01).p, hard.p), 1e-3);
}

TEST(SoftHistogram, SampleAtCentreConcentratesMass) {
  const std::vector<double> x{0.5};
  const auto e = equal_width_edges(0, 1, 5);
  const auto h = soft_joint_histogram(x, x, e, e, 0.05);
  double row = 0.0;
  for (std::size_t q = 0; q < 5; ++q) row += h.p(2, q);
  EXPECT_GE(row, 0.99);
  EXPECT_THROW(soft_joint_histogram(x, x, e, e, 0.0), ConfigError);
}

TEST(SoftHistogram, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor xi = Tensor::zeros(12, 1), xj = Tensor::zeros(12, 1);
  for (std::size_t i = 0; i < 12; ++i) {
    xi[i] = u(rng);
    xj[i] = 0.6 * xi[i] + 0.4 * u(rng);
  }
  diff::Graph g;
  const auto a = g.parameter("xi"), b = g.parameter("xj");
  const auto e = equal_width_edges(0, 1, 4);
  g.set_output(g.mutual_information(g.soft_joint_histogram(a, b, e, e, 0.3)));
  diff::Bindings bind;
  bind.set("xi", xi).set("xj", xj);
  const auto report = diff::finite_diff_check(g, bind, 1e-6);
  EXPECT_LT(report.max_rel_error, 1e-3) << report.worst_leaf << "[" << report.worst_index << "]";
}

TEST(SoftBins, BatchLevelBinCount) {
  EXPECT_EQ(soft_bins(16), 4u);
  EXPECT_EQ(soft_bins(64), 8u);
  EXPECT_EQ(soft_bins(1000), 10u);
  EXPECT_EQ(soft_bins(2), 2u);
}

class ReferenceFixture : public ::testing::Test {
 protected:
  void SetUp() override {
    const data::Dataset d = data::gen_synthetic1(4000, 42);
    const data::FeatureEncoder enc(d.schema, d.scaler);
    train = enc.encode(d.gather(d.split.train));
    for (std::size_t f = 0; f < d.features(); ++f) {
      features.push_back(f);
      columns.push_back(enc.offset(f));
    }
  }
  Tensor train;
  std::vector<std::size_t> features, columns;
};

TEST_F(ReferenceFixture, SymmetricNonNegativeWithEntropyDiagonal) {
  const auto ref = ReferenceMi::compute(train, features, columns, 20);
  for (std::size_t i = 0; i < features.size(); ++i) {
    for (std::size_t j = 0; j < features.size(); ++j) {
      EXPECT_GE(ref.rho(i, j), 0.0);
      EXPECT_NEAR(ref.rho(i, j), ref.rho(j, i), 1e-12);
    }
  }
  // Entropy of the binned marginal of X1.
  std::vector<double> counts(20, 0.0);
  for (std::size_t r = 0; r < train.rows(); ++r) counts[bin_index(train(r, 0), ref.edges(0))] += 1;
  double entropy = 0.0;
  for (double c : counts) {
    if (c > 0) entropy -= c / train.rows() * std::log(c / train.rows());
  }
  EXPECT_NEAR(ref.rho(0, 0), entropy, 1e-12);
  // X3 drives X4 linearly; X1 and X6 are independent.
  EXPECT_GT(ref.rho(2, 3), ref.rho(0, 5) + 0.3);
  EXPECT_EQ(ref.pairs().size(), 21u);
}

TEST_F(ReferenceFixture, JsonRoundTripAndMissingPair) {
  const auto ref = ReferenceMi::compute(train, {0, 2}, {columns[0], columns[2]}, 8);
  EXPECT_EQ(ReferenceMi::from_json(ref.to_json()), ref);
  EXPECT_THROW(ref.rho(0, 3), ConfigError);
  diff::Graph g;
  const Pair missing{0, 3};
  EXPECT_THROW(dep_loss(g, g.input("x"), ref, std::span(&missing, 1), 0.1), ConfigError);
}

double dep_value(const Tensor& batch, const ReferenceMi& ref, const std::vector<Pair>& pairs,
                 double temperature) {
  diff::Graph g;
  g.set_output(dep_loss(g, g.input("x"), ref, pairs, temperature));
  diff::Bindings b;
  b.set("x", batch);
  return g.forward(b);
}

TEST_F(ReferenceFixture, TrainingBatchHasNearZeroLoss) {
  const auto ref = ReferenceMi::compute(train, features, columns, 5);
  EXPECT_LT(dep_value(train, ref, ref.pairs(), 0.02), 0.05);
}

TEST_F(ReferenceFixture, SinglePairEqualsItsAbsoluteGap) {
  const auto ref = ReferenceMi::compute(train, features, columns, 4);
  Tensor batch = Tensor::zeros(64, train.cols());
  for (std::size_t r = 0; r < 64; ++r) {
    std::copy_n(train.row_span(r * 7).begin(), train.cols(), batch.row_span(r).begin());
  }
  const Pair p{2, 4};
  std::vector<double> xi, xj;
  for (std::size_t r = 0; r < 64; ++r) {
    xi.push_back(batch(r, columns[2]));
    xj.push_back(batch(r, columns[4]));
  }
  const double soft = mutual_information(soft_joint_histogram(xi, xj, ref.edges(2), ref.edges(4), 0.1));
  // The graph estimator guards its logs with 1e-12.
  EXPECT_NEAR(dep_value(batch, ref, {p}, 0.1), std::abs(soft - ref.rho(2, 4)), 1e-10);
}

TEST_F(ReferenceFixture, PermutingAColumnIncreasesLoss) {
  const std::size_t n = 256;
  const auto ref = ReferenceMi::compute(train, features, columns, soft_bins(n));
  Tensor batch = Tensor::zeros(n, train.cols());
  for (std::size_t r = 0; r < n; ++r) {
    std::copy_n(train.row_span(r).begin(), train.cols(), batch.row_span(r).begin());
  }
  const std::vector<Pair> pairs{{2, 3}};
  const double before = dep_value(batch, ref, pairs, 0.1);
  std::vector<double> col;
  for (std::size_t r = 0; r < n; ++r) col.push_back(batch(r, columns[3]));
  std::mt19937_64 rng(11);
  std::shuffle(col.begin(), col.end(), rng);
  for (std::size_t r = 0; r < n; ++r) batch(r, columns[3]) = col[r];
  const double after = dep_value(batch, ref, pairs, 0.1);
  EXPECT_GT(after, before);
}

TEST_F(ReferenceFixture, DepLossGradientMatchesFiniteDifferences) {
  const auto ref = ReferenceMi::compute(train, features, columns, 4);
  Tensor batch = Tensor::zeros(16, train.cols());
  for (std::size_t r = 0; r < 16; ++r) {
    std::copy_n(train.row_span(r + 100).begin(), train.cols(), batch.row_span(r).begin());
  }
  diff::Graph g;
  g.set_output(dep_loss(g, g.parameter("x"), ref, ref.pairs(), 0.1));
  diff::Bindings b;
  b.set("x", batch);
  const auto report = diff::finite_diff_check(g, b, 1e-6);
  EXPECT_LT(report.max_rel_error, 1e-3) << report.worst_leaf << "[" << report.worst_index << "]";
}

TEST(DepLoss, EmptyPairSetIsZero) {
  diff::Graph g;
  ReferenceMi ref;
  g.set_output(dep_loss(g, g.input("x"), ref, {}, 0.1));
  Tensor x = Tensor::zeros(3, 2);
  diff::Bindings b;
  b.set("x", x);
  EXPECT_EQ(g.forward(b), 0.0);
}

}  // namespace
}  // namespace realcf::dep
