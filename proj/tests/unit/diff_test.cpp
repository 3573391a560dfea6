#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "realcf/diff/graph.hpp"
#include "realcf/diff/layers.hpp"
#include "realcf/error.hpp"

namespace realcf::diff {
namespace {

Tensor random_tensor(std::size_t r, std::size_t c, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  Tensor t = Tensor::zeros(r, c);
  for (double& v : t.values()) v = n(rng);
  return t;
}

TEST(Tensor, ShapeMismatchThrows) {
  EXPECT_THROW(Tensor({2, 2}, {1.0, 2.0, 3.0}), ConfigError);
  EXPECT_EQ(Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6})(1, 2), 6.0);
}

TEST(Graph, SquareValueAndGradient) {
  Graph g;
  Node x = g.parameter("x");
  g.set_output(g.sum(g.square(x)));
  Tensor three = Tensor::scalar(3.0);
  Bindings b;
  b.set("x", three);
  EXPECT_DOUBLE_EQ(g.forward(b), 9.0);
  g.backward();
  EXPECT_DOUBLE_EQ(g.leaf_gradient("x").item(), 6.0);
}

TEST(Graph, UniformLogitsCrossEntropyIsLn2) {
  Graph g;
  Node logits = g.input("logits");
  Node target = g.input("target");
  g.set_output(g.mean(g.softmax_cross_entropy(logits, target)));
  Tensor l = Tensor::matrix(1, 2, {0.0, 0.0});
  Tensor t = Tensor::matrix(1, 2, {1.0, 0.0});
  Bindings b;
  b.set("logits", l).set("target", t);
  EXPECT_NEAR(g.forward(b), std::log(2.0), 1e-15);
}

TEST(Graph, ConstantOutputHasZeroGradients) {
  Graph g;
  Node x = g.parameter("x");
  Node c = g.constant(Tensor::scalar(5.0));
  g.set_output(c);
  (void)x;
  Tensor v = Tensor::matrix(1, 3, {1, 2, 3});
  Bindings b;
  b.set("x", v);
  EXPECT_DOUBLE_EQ(g.forward(b), 5.0);
  g.backward();
  for (double gv : g.leaf_gradient("x").values()) EXPECT_EQ(gv, 0.0);
}

TEST(Graph, NonParticipatingLeafGetsExactZero) {
  Graph g;
  Node x = g.parameter("x");
  Node y = g.parameter("y");
  (void)y;
  g.set_output(g.sum(g.exp(x)));
  Tensor tx = Tensor::matrix(1, 2, {0.1, 0.2});
  Tensor ty = Tensor::matrix(1, 2, {3.0, 4.0});
  Bindings b;
  b.set("x", tx).set("y", ty);
  g.forward(b);
  g.backward();
  EXPECT_EQ(g.leaf_gradient("y"), Tensor::zeros(1, 2));
}

TEST(Graph, MissingBindingIsConfigError) {
  Graph g;
  g.set_output(g.sum(g.input("x")));
  Bindings b;
  EXPECT_THROW(g.forward(b), ConfigError);
}

TEST(Graph, ShapeMismatchIsConfigError) {
  Graph g;
  g.set_output(g.sum(g.matmul(g.input("a"), g.input("b"))));
  Tensor a = Tensor::zeros(2, 3), bm = Tensor::zeros(2, 3);
  Bindings b;
  b.set("a", a).set("b", bm);
  EXPECT_THROW(g.forward(b), ConfigError);
}

TEST(Graph, NonFiniteValueNamesTheNode) {
  Graph g;
  Node x = g.input("x");
  Node l = g.log(x);
  g.set_label(l, "bad_log");
  g.set_output(g.sum(l));
  Tensor neg = Tensor::scalar(-1.0);
  Bindings b;
  b.set("x", neg);
  try {
    g.forward(b);
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("bad_log"), std::string::npos) << e.what();
  }
}

TEST(Graph, KinkSubgradientsAreZero) {
  for (int which = 0; which < 3; ++which) {
    Graph g;
    Node x = g.parameter("x");
    Node y = which == 0 ? g.abs(x) : which == 1 ? g.relu(x) : g.leaky_relu(x, 0.3);
    g.set_output(g.sum(y));
    Tensor z = Tensor::scalar(0.0);
    Bindings b;
    b.set("x", z);
    g.forward(b);
    g.backward();
    EXPECT_EQ(g.leaf_gradient("x").item(), 0.0) << which;
  }
}

TEST(Graph, KlOfStandardNormalIsZero) {
  Graph g;
  g.set_output(g.sum(g.kl_standard_normal(g.input("mu"), g.input("lv"))));
  Tensor mu = Tensor::zeros(3, 4), lv = Tensor::zeros(3, 4);
  Bindings b;
  b.set("mu", mu).set("lv", lv);
  EXPECT_EQ(g.forward(b), 0.0);
  Tensor mu1 = Tensor::filled(1, 1, 1.0), lv1 = Tensor::filled(1, 1, std::log(2.0));
  b.set("mu", mu1).set("lv", lv1);
  // 0.5 * (1 + 2 - ln 2 - 1)
  EXPECT_NEAR(g.forward(b), 0.5 * (2.0 - std::log(2.0)), 1e-15);
}

TEST(Graph, ReparameterizeZeroVarianceLimit) {
  Graph g;
  Node mu = g.input("mu");
  Node lv = g.clamp(g.input("lv"), -20.0, 20.0);
  g.set_output(g.sum(g.reparameterize(mu, lv, g.input("eps"))));
  Tensor m = Tensor::scalar(0.7), v = Tensor::scalar(-1e6), e = Tensor::scalar(1.5);
  Bindings b;
  b.set("mu", m).set("lv", v).set("eps", e);
  EXPECT_NEAR(g.forward(b), 0.7, 1e-4);
}

TEST(Graph, StopGradientBlocks) {
  Graph g;
  Node x = g.parameter("x");
  g.set_output(g.sum(g.mul(g.stop_gradient(x), x)));
  Tensor v = Tensor::scalar(2.0);
  Bindings b;
  b.set("x", v);
  g.forward(b);
  g.backward();
  EXPECT_DOUBLE_EQ(g.leaf_gradient("x").item(), 2.0);
}

TEST(Graph, BroadcastRowColumnScalar) {
  Graph g;
  Node a = g.input("a");
  g.set_output(g.sum(g.add(g.mul(a, g.input("row")), g.sub(g.input("col"), g.input("s")))));
  Tensor ta = Tensor::matrix(2, 2, {1, 2, 3, 4});
  Tensor row = Tensor::matrix(1, 2, {10, 100});
  Tensor col = Tensor::matrix(2, 1, {1, 2});
  Tensor s = Tensor::scalar(1.0);
  Bindings b;
  b.set("a", ta).set("row", row).set("col", col).set("s", s);
  // a*row = [10 200; 30 400] sums to 640; (col - s) broadcast onto a: [0 0; 1 1] sums to 2.
  EXPECT_DOUBLE_EQ(g.forward(b), 642.0);
}

TEST(FiniteDiff, LinearModelIsExact) {
  Graph g;
  Node y = g.add(g.matmul(g.input("x"), g.parameter("w")), g.parameter("b"));
  g.set_output(g.sum(y));
  Tensor x = random_tensor(5, 3, 1), w = random_tensor(3, 2, 2), bias = random_tensor(1, 2, 3);
  Bindings b;
  b.set("x", x).set("w", w).set("b", bias);
  EXPECT_LT(finite_diff_check(g, b, 1e-5).max_rel_error, 1e-8);
}

struct Mlp {
  Graph g;
  ParameterSet params;
  Tensor x, y;
  Bindings bindings;

  explicit Mlp(Activation act, std::uint64_t seed = 7) {
    std::mt19937_64 rng(seed);
    add_dense(params, "l0", 4, 6, Init::kGlorotUniform, rng);
    add_dense(params, "l1", 6, 2, Init::kGlorotUniform, rng);
    for (auto& [name, t] : params.entries()) {
      if (name.ends_with(".b")) t = random_tensor(t.rows(), t.cols(), seed + name.size(), 0.1);
    }
    Node h = activate(g, dense(g, g.input("x"), "l0"), act, act == Activation::kElu ? 1.0 : 0.3);
    Node logits = dense(g, h, "l1");
    g.set_output(g.batch_mean(g.softmax_cross_entropy(logits, g.input("y"))));
    x = random_tensor(5, 4, seed + 100);
    y = Tensor::zeros(5, 2);
    for (std::size_t r = 0; r < 5; ++r) y(r, r % 2) = 1.0;
    params.bind(bindings);
    bindings.set("x", x).set("y", y);
  }
};

TEST(FiniteDiff, TwoLayerMlpCrossEntropy) {
  for (Activation act : {Activation::kRelu, Activation::kLeakyRelu, Activation::kElu,
                         Activation::kSigmoid}) {
    Mlp m(act);
    const auto report = finite_diff_check(m.g, m.bindings, 1e-5);
    EXPECT_LT(report.max_rel_error, 1e-4) << activation_name(act) << " " << report.worst_leaf;
    EXPECT_EQ(report.entries_checked, m.params.count());
  }
}

TEST(FiniteDiff, InputGradientsOfEveryPrimitive) {
  Graph g;
  Node a = g.parameter("a");
  Node b = g.parameter("b");
  Node p = g.softmax(a);
  Node terms = g.concat_cols({
      g.sigmoid(a),
      g.elu(g.sub(a, b), 1.0),
      g.mul(g.exp(g.affine(a, 0.5, 0.1)), b),
      g.log(g.square(b)),
      g.clamp(a, -0.5, 0.5),
      g.slice_cols(p, 1, 2),
      g.cross_entropy(p, g.input("t")),
      g.kl_standard_normal(a, b),
      g.reparameterize(a, b, g.input("eps")),
      g.batch_norm_train(a, g.parameter("gamma"), g.parameter("beta"), 1e-3),
      g.row_sum(g.abs(g.matmul(a, g.parameter("w")))),
  });
  g.set_output(g.add(g.mean(terms), g.sum(g.square(terms))));
  Tensor ta = random_tensor(4, 3, 11), tb = random_tensor(4, 3, 12);
  Tensor t = Tensor::zeros(4, 3);
  for (std::size_t r = 0; r < 4; ++r) t(r, r % 3) = 1.0;
  Tensor eps = random_tensor(4, 3, 13);
  Tensor gamma = random_tensor(1, 3, 14), beta = random_tensor(1, 3, 15);
  Tensor w = random_tensor(3, 2, 16);
  Bindings bind;
  bind.set("a", ta).set("b", tb).set("t", t).set("eps", eps).set("gamma", gamma)
      .set("beta", beta).set("w", w);
  const auto report = finite_diff_check(g, bind, 1e-6);
  EXPECT_LT(report.max_rel_error, 1e-5) << report.worst_leaf << "[" << report.worst_index << "]";
}

TEST(FiniteDiff, BatchNormInference) {
  Graph g;
  Node y = g.batch_norm_infer(g.parameter("x"), g.parameter("gamma"), g.parameter("beta"),
                              g.input("mean"), g.input("var"), 1e-3);
  g.set_output(g.sum(g.square(y)));
  Tensor x = random_tensor(3, 2, 1), gamma = random_tensor(1, 2, 2), beta = random_tensor(1, 2, 3);
  Tensor mean = random_tensor(1, 2, 4), var = Tensor::matrix(1, 2, {0.5, 2.0});
  Bindings b;
  b.set("x", x).set("gamma", gamma).set("beta", beta).set("mean", mean).set("var", var);
  EXPECT_LT(finite_diff_check(g, b, 1e-6).max_rel_error, 1e-6);
}

TEST(Backprop, Linearity) {
  auto build = [](Graph& g, double a, double b) {
    Node x = g.parameter("x");
    Node f = g.sum(g.sigmoid(g.matmul(x, g.input("m"))));
    Node h = g.sum(g.square(g.exp(x)));
    g.set_output(g.add(g.affine(f, a, 0.0), g.affine(h, b, 0.0)));
  };
  Tensor x = random_tensor(3, 2, 5), m = random_tensor(2, 4, 6);
  Bindings bind;
  bind.set("x", x).set("m", m);
  Graph gf, gh, gc;
  build(gf, 1.0, 0.0);
  build(gh, 0.0, 1.0);
  build(gc, 2.5, -1.5);
  const auto df = gradients(gf, bind).at("x");
  const auto dh = gradients(gh, bind).at("x");
  const auto dc = gradients(gc, bind).at("x");
  for (std::size_t i = 0; i < dc.size(); ++i) {
    EXPECT_NEAR(dc[i], 2.5 * df[i] - 1.5 * dh[i], 1e-12);
  }
}

TEST(Backprop, DeterministicAcrossRuns) {
  Mlp a(Activation::kRelu, 3), b(Activation::kRelu, 3);
  EXPECT_EQ(forward(a.g, a.bindings), forward(b.g, b.bindings));
  EXPECT_EQ(gradients(a.g, a.bindings), gradients(b.g, b.bindings));
}

TEST(Adam, FirstStepMovesByLearningRate) {
  ParameterSet params;
  params.add("x", Tensor::matrix(1, 2, {1.0, -1.0}));
  Graph g;
  g.set_output(g.sum(g.square(g.parameter("x"))));
  Bindings b;
  params.bind(b);
  g.forward(b);
  g.backward();
  Adam adam(0.1);
  adam.step(params, g);
  // Bias-corrected first step is lr * g / (|g| + eps').
  EXPECT_NEAR(params.at("x")[0], 0.9, 1e-6);
  EXPECT_NEAR(params.at("x")[1], -0.9, 1e-6);
  EXPECT_EQ(adam.iterations(), 1);
}

TEST(ParameterSet, ChecksumTracksValues) {
  ParameterSet p;
  p.add("a", Tensor::matrix(1, 2, {1.0, 2.0}));
  const auto before = p.checksum();
  p.at("a")[1] = 2.0000001;
  EXPECT_NE(before, p.checksum());
}

TEST(Init, HeNormalIsTruncatedAndScaled) {
  std::mt19937_64 rng(1);
  Tensor w = init_weight(200, 100, Init::kHeNormal, rng);
  const double stddev = std::sqrt(2.0 / 200.0);
  double sq = 0.0;
  for (double v : w.values()) {
    EXPECT_LE(std::abs(v), 2.0 * stddev / 0.87962566103423978 + 1e-12);
    sq += v * v;
  }
  EXPECT_NEAR(std::sqrt(sq / w.size()), stddev, 0.05 * stddev);
}

}  // namespace
}  // namespace realcf::diff
