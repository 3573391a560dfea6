#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "realcf/diff/tensor.hpp"

namespace realcf::diff {

/// Guard added inside every logarithm of a quantity that can be exactly zero.
inline constexpr double kLogEps = 1e-12;

/// Handle to a node in a Graph.
struct Node {
  static constexpr std::size_t kInvalid = std::numeric_limits<std::size_t>::max();
  std::size_t id = kInvalid;

  bool valid() const { return id != kInvalid; }
  bool operator==(const Node&) const = default;
};

enum class LeafKind { kInput, kParameter };

/// Name -> tensor lookup for the leaves of a graph. Stores non-owning
/// pointers; the bound tensors must outlive the evaluation.
class Bindings {
 public:
  Bindings& set(std::string name, const Tensor& value) {
    map_[std::move(name)] = &value;
    return *this;
  }
  // Bindings keep pointers; a temporary would dangle.
  Bindings& set(std::string name, Tensor&& value) = delete;
  const Tensor* find(std::string_view name) const {
    auto it = map_.find(name);
    return it == map_.end() ? nullptr : it->second;
  }
  std::size_t size() const { return map_.size(); }

 private:
  std::map<std::string, const Tensor*, std::less<>> map_;
};

/// Define-then-run reverse-mode differentiable computation over rank-2
/// tensors. The batch (row) dimension may change between evaluations; every
/// other dimension is fixed by the bound tensors.
///
/// Broadcasting in add/sub/mul applies to the second operand only: it may be
/// the same shape as the first, a 1xC row, an Rx1 column or a 1x1 scalar.
///
/// Evaluation is single-threaded; a Graph owns its caches and must not be
/// shared between threads.
class Graph {
 public:
  Graph() = default;

  // Leaves. Requesting an existing name returns the existing leaf.
  Node input(std::string name);
  Node parameter(std::string name);
  Node constant(Tensor value, std::string label = {});

  // Linear algebra and elementwise arithmetic.
  Node matmul(Node a, Node b);
  Node add(Node a, Node b);
  Node sub(Node a, Node b);
  Node mul(Node a, Node b);
  Node affine(Node x, double scale, double shift);  // scale * x + shift
  Node square(Node x);
  Node abs(Node x);
  Node exp(Node x);
  Node log(Node x, double eps = kLogEps);  // log(x + eps)
  Node clamp(Node x, double lo, double hi);

  // Activations. Subgradient of relu/leaky_relu at exactly 0 is 0.
  Node sigmoid(Node x);
  Node relu(Node x);
  Node leaky_relu(Node x, double alpha);
  Node elu(Node x, double alpha = 1.0);
  Node softmax(Node x);  // row-wise

  // Losses, returning one value per row (Nx1).
  Node softmax_cross_entropy(Node logits, Node target);
  Node cross_entropy(Node probabilities, Node target, double eps = kLogEps);
  Node kl_standard_normal(Node mu, Node logvar);

  // Reductions.
  Node sum(Node x);         // 1x1
  Node mean(Node x);        // 1x1, mean over all entries
  Node row_sum(Node x);     // Nx1
  Node batch_mean(Node x);  // 1x1, sum of all entries / rows

  // Structure.
  Node slice_cols(Node x, std::size_t begin, std::size_t count);
  Node concat_cols(std::vector<Node> parts);
  Node stop_gradient(Node x);

  // z = mu + exp(logvar / 2) * noise
  Node reparameterize(Node mu, Node logvar, Node noise);

  // Batch normalization over rows. The training variant exposes the batch
  // mean (row 0) and biased variance (row 1) through aux().
  Node batch_norm_train(Node x, Node gamma, Node beta, double eps);
  Node batch_norm_infer(Node x, Node gamma, Node beta, Node mean, Node var, double eps);

  /// Soft co-occurrence histogram of two Nx1 columns. Each sample's bin
  /// membership is softmax_p(-((x - center_p) / (temperature * width_p))^2);
  /// the result is the batch average of the membership outer products (BxB).
  Node soft_joint_histogram(Node xi, Node xj, std::vector<double> edges_i,
                            std::vector<double> edges_j, double temperature);
  /// sum_pq P_pq * (log(P_pq + eps) - log(r_p * c_q + eps)) of a BxB matrix.
  Node mutual_information(Node joint, double eps = kLogEps);

  void set_output(Node node);
  Node output() const { return output_; }
  void set_label(Node node, std::string label);
  std::string describe(Node node) const;

  /// Evaluates every node. Throws ConfigError on a missing binding or shape
  /// mismatch and NumericalError naming the node on a non-finite value.
  void evaluate(const Bindings& bindings);
  /// evaluate() and return the scalar output.
  double forward(const Bindings& bindings);
  /// Gradient of the scalar output with respect to every node.
  void backward();

  const Tensor& value(Node node) const;
  const Tensor& gradient(Node node) const;
  const Tensor& aux(Node node) const;
  /// Gradient with respect to a named leaf (zero when it does not participate).
  const Tensor& leaf_gradient(std::string_view name) const;
  std::map<std::string, Tensor> gradients() const;

  std::vector<std::string> leaf_names(LeafKind kind) const;
  std::optional<Node> find_leaf(std::string_view name) const;
  /// Names of leaves feeding `node`, not traversing through `stop_at`.
  std::set<std::string> leaf_dependencies(Node node, std::span<const Node> stop_at = {}) const;

  std::size_t size() const { return nodes_.size(); }

 private:
  enum class Op {
    kLeaf, kConstant, kMatMul, kAdd, kSub, kMul, kAffine, kSquare, kAbs, kExp, kLog,
    kClamp, kSigmoid, kRelu, kLeakyRelu, kElu, kSoftmax, kSoftmaxCe, kCrossEntropy,
    kKlStdNormal, kSum, kMean, kRowSum, kBatchMean, kSliceCols, kConcatCols,
    kStopGradient, kReparam, kBatchNormTrain, kBatchNormInfer, kSoftHist, kMutualInfo,
  };

  struct HistogramSpec {
    std::vector<double> centers_i, widths_i, centers_j, widths_j;
    double temperature = 0.1;
  };

  struct NodeData {
    Op op = Op::kLeaf;
    std::vector<std::size_t> inputs;
    double a = 0.0;
    double b = 0.0;
    std::size_t i0 = 0;
    std::size_t i1 = 0;
    LeafKind leaf_kind = LeafKind::kInput;
    std::string name;
    std::shared_ptr<const Tensor> constant;
    std::shared_ptr<const HistogramSpec> histogram;
    Tensor value;
    Tensor grad;
    Tensor aux1;
    Tensor aux2;
  };

  Node push(NodeData data);
  Node leaf(std::string name, LeafKind kind);
  void check(Node node) const;
  void forward_node(NodeData& n);
  void backward_node(NodeData& n);
  void refresh_flags();
  static const char* op_name(Op op);

  std::vector<NodeData> nodes_;
  std::map<std::string, std::size_t, std::less<>> leaves_;
  Node output_;
  bool evaluated_ = false;
  bool flags_valid_ = false;
  std::vector<char> needs_grad_;
  Tensor empty_;
};

/// Free-function forms of Graph::forward / Graph::gradients.
double forward(Graph& graph, const Bindings& bindings);
std::map<std::string, Tensor> gradients(Graph& graph, const Bindings& bindings);

}  // namespace realcf::diff
