#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "realcf/classifier/mlp.hpp"
#include "realcf/data/sources.hpp"
#include "realcf/dependency/mutual_info.hpp"
#include "realcf/realac/cvae.hpp"

namespace {

using namespace realcf;
using diff::Tensor;

std::vector<double> normal_column(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist;
  std::vector<double> out(n);
  for (double& v : out) v = dist(rng);
  return out;
}

void BM_HardHistogramMi(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto x = normal_column(n, 1), y = normal_column(n, 2);
  const auto edges = dep::equal_width_edges(-4.0, 4.0, 50);
  for (auto _ : state) {
    const auto h = dep::joint_histogram(x, y, edges, edges);
    benchmark::DoNotOptimize(dep::mutual_information(h));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_HardHistogramMi)->Arg(1000)->Arg(10000);

void BM_SoftHistogram(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto x = normal_column(n, 3), y = normal_column(n, 4);
  const auto edges = dep::equal_width_edges(-4.0, 4.0, dep::soft_bins(n));
  for (auto _ : state) {
    benchmark::DoNotOptimize(dep::soft_joint_histogram(x, y, edges, edges, 0.1).p);
  }
}
BENCHMARK(BM_SoftHistogram)->Arg(16)->Arg(64);

struct Synthetic1 {
  data::Dataset dataset;
  clf::TrainedClassifier classifier;
  realac::CvaeModel model;

  Synthetic1()
      : dataset(data::load_dataset({"synthetic1", 42, 800, "", ""})),
        classifier([&] {
          auto spec = clf::preset_classifier("synthetic1");
          spec.epochs = 1;
          return clf::train_classifier(dataset, spec, 42);
        }()),
        model(dataset, data::preset_edges("synthetic1", dataset.schema),
              realac::preset_cvae("synthetic1"), 42) {}

  static const Synthetic1& get() {
    static const Synthetic1 instance;
    return instance;
  }
};

void BM_LossForwardBackward(benchmark::State& state) {
  const Synthetic1& s = Synthetic1::get();
  const auto n = static_cast<std::size_t>(state.range(0));
  std::vector<std::size_t> rows(s.dataset.split.train.begin(), s.dataset.split.train.begin() + n);
  const Tensor x0 = s.model.encoder().encode(s.dataset.gather(rows));
  Tensor y = Tensor::zeros(n, 2);
  for (std::size_t r = 0; r < n; ++r) y(r, r % 2) = 1.0;
  auto lg = realac::build_loss_graph(s.model, s.classifier);
  diff::Bindings b;
  realac::bind_weights(b, s.model, s.classifier);
  const Tensor mask = Tensor::zeros(n, x0.cols());
  const Tensor noise = Tensor::zeros(n, s.model.config().latent_dim);
  b.set("x0", x0).set("ycf", y).set("mask", mask).set("noise", noise);
  for (auto _ : state) {
    benchmark::DoNotOptimize(lg->graph.forward(b));
    lg->graph.backward();
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_LossForwardBackward)->Arg(16)->Arg(64);

void BM_Generate(benchmark::State& state) {
  const Synthetic1& s = Synthetic1::get();
  const Tensor x = s.dataset.gather(s.dataset.split.test);
  const Tensor mask = Tensor::zeros(x.rows(), x.cols());
  for (auto _ : state) {
    benchmark::DoNotOptimize(realac::generate(s.model, s.classifier, x, mask).cf_pred);
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(x.rows()));
}
BENCHMARK(BM_Generate);

}  // namespace

BENCHMARK_MAIN();
