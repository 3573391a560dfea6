#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "realcf/diff/graph.hpp"
#include "realcf/diff/tensor.hpp"

namespace realcf::diff {

/// Named trainable tensors, iterated in name order.
class ParameterSet {
 public:
  Tensor& add(std::string name, Tensor value);
  Tensor& at(std::string_view name);
  const Tensor& at(std::string_view name) const;
  bool contains(std::string_view name) const { return values_.find(name) != values_.end(); }

  void bind(Bindings& bindings) const;
  std::size_t count() const;  // total number of scalar entries

  /// FNV-1a over names, shapes and the raw bytes of every value.
  std::uint64_t checksum() const;

  const std::map<std::string, Tensor, std::less<>>& entries() const { return values_; }
  std::map<std::string, Tensor, std::less<>>& entries() { return values_; }

 private:
  std::map<std::string, Tensor, std::less<>> values_;
};

enum class Activation { kLinear, kRelu, kLeakyRelu, kElu, kSigmoid, kSoftmax };

Activation parse_activation(std::string_view name);
std::string_view activation_name(Activation activation);
Node activate(Graph& graph, Node x, Activation activation, double alpha);

enum class Init { kGlorotUniform, kHeNormal, kZeros };

Init parse_init(std::string_view name);
std::string_view init_name(Init init);

/// fan_in x fan_out weight matrix drawn from the given scheme.
Tensor init_weight(std::size_t fan_in, std::size_t fan_out, Init init, std::mt19937_64& rng);

/// Adds `<prefix>.w` (in x out) and `<prefix>.b` (1 x out) to `params`.
void add_dense(ParameterSet& params, const std::string& prefix, std::size_t in, std::size_t out,
               Init init, std::mt19937_64& rng);

/// x * W + b. Frozen layers bind their weights as inputs behind a
/// stop-gradient, so they never receive gradient.
Node dense(Graph& graph, Node x, const std::string& prefix, bool frozen = false);

/// Adam with Keras defaults (beta1 0.9, beta2 0.999, epsilon 1e-7).
class Adam {
 public:
  explicit Adam(double learning_rate, double beta1 = 0.9, double beta2 = 0.999,
                double epsilon = 1e-7);

  /// Applies one update to every entry of `params` using the gradients the
  /// graph holds for the same-named leaves.
  void step(ParameterSet& params, const Graph& graph);
  std::int64_t iterations() const { return t_; }

 private:
  double lr_, beta1_, beta2_, epsilon_;
  std::int64_t t_ = 0;
  std::map<std::string, Tensor, std::less<>> m_, v_;
};

struct FiniteDiffReport {
  double max_rel_error = 0.0;
  std::string worst_leaf;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t entries_checked = 0;
};

/// Compares analytic gradients with central differences. The error of each
/// entry is |analytic - numeric| / max(1, |analytic|). `leaves` defaults to
/// every parameter leaf of the graph.
FiniteDiffReport finite_diff_check(Graph& graph, const Bindings& bindings, double h,
                                   std::vector<std::string> leaves = {});

}  // namespace realcf::diff
