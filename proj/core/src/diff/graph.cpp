#include "realcf/diff/graph.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "realcf/error.hpp"

namespace realcf::diff {

namespace {

enum class Broadcast { kSame, kRow, kCol, kScalar };

Broadcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() == b.rows() && a.cols() == b.cols()) return Broadcast::kSame;
  if (b.rows() == 1 && b.cols() == 1) return Broadcast::kScalar;
  if (b.rows() == 1 && b.cols() == a.cols()) return Broadcast::kRow;
  if (b.cols() == 1 && b.rows() == a.rows()) return Broadcast::kCol;
  throw ConfigError(std::string(op) + ": cannot broadcast " + b.shape_string() + " onto " +
                    a.shape_string());
}

inline std::size_t bindex(Broadcast k, std::size_t r, std::size_t c, std::size_t bcols) {
  switch (k) {
    case Broadcast::kSame: return r * bcols + c;
    case Broadcast::kRow: return c;
    case Broadcast::kCol: return r;
    case Broadcast::kScalar: return 0;
  }
  return 0;
}

inline double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void softmax_rows(const Tensor& in, Tensor& out) {
  const std::size_t rows = in.rows(), cols = in.cols();
  out.resize(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = in.data() + r * cols;
    double* y = out.data() + r * cols;
    double mx = x[0];
    for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, x[c]);
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      y[c] = std::exp(x[c] - mx);
      total += y[c];
    }
    for (std::size_t c = 0; c < cols; ++c) y[c] /= total;
  }
}

void centers_and_widths(const std::vector<double>& edges, std::vector<double>& centers,
                        std::vector<double>& widths) {
  if (edges.size() < 3) throw ConfigError("soft histogram needs at least 2 bins");
  for (std::size_t p = 0; p + 1 < edges.size(); ++p) {
    const double w = edges[p + 1] - edges[p];
    if (!(w > 0)) throw ConfigError("soft histogram edges must be strictly increasing");
    centers.push_back(0.5 * (edges[p] + edges[p + 1]));
    widths.push_back(w);
  }
}

// Row-wise softmax over -((x - c_p) / (t * w_p))^2 for an Nx1 column.
void soft_membership(const Tensor& x, const std::vector<double>& centers,
                     const std::vector<double>& widths, double temperature, Tensor& out) {
  const std::size_t n = x.size(), bins = centers.size();
  out.resize(n, bins);
  for (std::size_t i = 0; i < n; ++i) {
    double* m = out.data() + i * bins;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t p = 0; p < bins; ++p) {
      const double u = (x[i] - centers[p]) / (temperature * widths[p]);
      m[p] = -u * u;
      mx = std::max(mx, m[p]);
    }
    double total = 0.0;
    for (std::size_t p = 0; p < bins; ++p) {
      m[p] = std::exp(m[p] - mx);
      total += m[p];
    }
    for (std::size_t p = 0; p < bins; ++p) m[p] /= total;
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Construction

Node Graph::push(NodeData data) {
  for (std::size_t in : data.inputs) {
    if (in >= nodes_.size()) throw ConfigError("graph input refers to an unknown node");
  }
  nodes_.push_back(std::move(data));
  flags_valid_ = false;
  evaluated_ = false;
  return Node{nodes_.size() - 1};
}

void Graph::check(Node node) const {
  if (!node.valid() || node.id >= nodes_.size()) throw ConfigError("invalid graph node handle");
}

Node Graph::leaf(std::string name, LeafKind kind) {
  if (auto it = leaves_.find(name); it != leaves_.end()) {
    if (nodes_[it->second].leaf_kind != kind) {
      throw ConfigError("leaf '" + name + "' declared as both input and parameter");
    }
    return Node{it->second};
  }
  NodeData d;
  d.op = Op::kLeaf;
  d.leaf_kind = kind;
  d.name = name;
  Node n = push(std::move(d));
  leaves_.emplace(std::move(name), n.id);
  return n;
}

Node Graph::input(std::string name) { return leaf(std::move(name), LeafKind::kInput); }
Node Graph::parameter(std::string name) { return leaf(std::move(name), LeafKind::kParameter); }

Node Graph::constant(Tensor value, std::string label) {
  NodeData d;
  d.op = Op::kConstant;
  d.name = std::move(label);
  d.constant = std::make_shared<const Tensor>(std::move(value));
  return push(std::move(d));
}

#define REALCF_UNARY(fn, opcode)          \
  Node Graph::fn(Node x) {                \
    check(x);                             \
    NodeData d;                           \
    d.op = Op::opcode;                    \
    d.inputs = {x.id};                    \
    return push(std::move(d));            \
  }

#define REALCF_BINARY(fn, opcode)         \
  Node Graph::fn(Node a, Node b) {        \
    check(a);                             \
    check(b);                             \
    NodeData d;                           \
    d.op = Op::opcode;                    \
    d.inputs = {a.id, b.id};              \
    return push(std::move(d));            \
  }

REALCF_BINARY(matmul, kMatMul)
REALCF_BINARY(add, kAdd)
REALCF_BINARY(sub, kSub)
REALCF_BINARY(mul, kMul)
REALCF_BINARY(softmax_cross_entropy, kSoftmaxCe)
REALCF_BINARY(kl_standard_normal, kKlStdNormal)
REALCF_UNARY(square, kSquare)
REALCF_UNARY(abs, kAbs)
REALCF_UNARY(exp, kExp)
REALCF_UNARY(sigmoid, kSigmoid)
REALCF_UNARY(relu, kRelu)
REALCF_UNARY(softmax, kSoftmax)
REALCF_UNARY(sum, kSum)
REALCF_UNARY(mean, kMean)
REALCF_UNARY(row_sum, kRowSum)
REALCF_UNARY(batch_mean, kBatchMean)
REALCF_UNARY(stop_gradient, kStopGradient)

#undef REALCF_UNARY
#undef REALCF_BINARY

Node Graph::affine(Node x, double scale, double shift) {
  check(x);
  NodeData d;
  d.op = Op::kAffine;
  d.inputs = {x.id};
  d.a = scale;
  d.b = shift;
  return push(std::move(d));
}

Node Graph::log(Node x, double eps) {
  check(x);
  NodeData d;
  d.op = Op::kLog;
  d.inputs = {x.id};
  d.a = eps;
  return push(std::move(d));
}

Node Graph::clamp(Node x, double lo, double hi) {
  check(x);
  if (!(lo <= hi)) throw ConfigError("clamp requires lo <= hi");
  NodeData d;
  d.op = Op::kClamp;
  d.inputs = {x.id};
  d.a = lo;
  d.b = hi;
  return push(std::move(d));
}

Node Graph::leaky_relu(Node x, double alpha) {
  check(x);
  NodeData d;
  d.op = Op::kLeakyRelu;
  d.inputs = {x.id};
  d.a = alpha;
  return push(std::move(d));
}

Node Graph::elu(Node x, double alpha) {
  check(x);
  NodeData d;
  d.op = Op::kElu;
  d.inputs = {x.id};
  d.a = alpha;
  return push(std::move(d));
}

Node Graph::cross_entropy(Node probabilities, Node target, double eps) {
  check(probabilities);
  check(target);
  NodeData d;
  d.op = Op::kCrossEntropy;
  d.inputs = {probabilities.id, target.id};
  d.a = eps;
  return push(std::move(d));
}

Node Graph::slice_cols(Node x, std::size_t begin, std::size_t count) {
  check(x);
  if (count == 0) throw ConfigError("slice_cols with zero columns");
  NodeData d;
  d.op = Op::kSliceCols;
  d.inputs = {x.id};
  d.i0 = begin;
  d.i1 = count;
  return push(std::move(d));
}

Node Graph::concat_cols(std::vector<Node> parts) {
  if (parts.empty()) throw ConfigError("concat_cols with no inputs");
  NodeData d;
  d.op = Op::kConcatCols;
  for (Node p : parts) {
    check(p);
    d.inputs.push_back(p.id);
  }
  return push(std::move(d));
}

Node Graph::reparameterize(Node mu, Node logvar, Node noise) {
  check(mu);
  check(logvar);
  check(noise);
  NodeData d;
  d.op = Op::kReparam;
  d.inputs = {mu.id, logvar.id, noise.id};
  return push(std::move(d));
}

Node Graph::batch_norm_train(Node x, Node gamma, Node beta, double eps) {
  check(x);
  check(gamma);
  check(beta);
  NodeData d;
  d.op = Op::kBatchNormTrain;
  d.inputs = {x.id, gamma.id, beta.id};
  d.a = eps;
  return push(std::move(d));
}

Node Graph::batch_norm_infer(Node x, Node gamma, Node beta, Node mean, Node var, double eps) {
  for (Node n : {x, gamma, beta, mean, var}) check(n);
  NodeData d;
  d.op = Op::kBatchNormInfer;
  d.inputs = {x.id, gamma.id, beta.id, mean.id, var.id};
  d.a = eps;
  return push(std::move(d));
}

Node Graph::soft_joint_histogram(Node xi, Node xj, std::vector<double> edges_i,
                                 std::vector<double> edges_j, double temperature) {
  check(xi);
  check(xj);
  if (!(temperature > 0)) throw ConfigError("soft histogram temperature must be positive");
  auto spec = std::make_shared<HistogramSpec>();
  centers_and_widths(edges_i, spec->centers_i, spec->widths_i);
  centers_and_widths(edges_j, spec->centers_j, spec->widths_j);
  spec->temperature = temperature;
  NodeData d;
  d.op = Op::kSoftHist;
  d.inputs = {xi.id, xj.id};
  d.histogram = std::move(spec);
  return push(std::move(d));
}

Node Graph::mutual_information(Node joint, double eps) {
  check(joint);
  NodeData d;
  d.op = Op::kMutualInfo;
  d.inputs = {joint.id};
  d.a = eps;
  return push(std::move(d));
}

void Graph::set_output(Node node) {
  check(node);
  output_ = node;
  flags_valid_ = false;
}

void Graph::set_label(Node node, std::string label) {
  check(node);
  if (nodes_[node.id].op == Op::kLeaf) throw ConfigError("cannot relabel a leaf");
  nodes_[node.id].name = std::move(label);
}

const char* Graph::op_name(Op op) {
  switch (op) {
    case Op::kLeaf: return "leaf";
    case Op::kConstant: return "constant";
    case Op::kMatMul: return "matmul";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kAffine: return "affine";
    case Op::kSquare: return "square";
    case Op::kAbs: return "abs";
    case Op::kExp: return "exp";
    case Op::kLog: return "log";
    case Op::kClamp: return "clamp";
    case Op::kSigmoid: return "sigmoid";
    case Op::kRelu: return "relu";
    case Op::kLeakyRelu: return "leaky_relu";
    case Op::kElu: return "elu";
    case Op::kSoftmax: return "softmax";
    case Op::kSoftmaxCe: return "softmax_cross_entropy";
    case Op::kCrossEntropy: return "cross_entropy";
    case Op::kKlStdNormal: return "kl_standard_normal";
    case Op::kSum: return "sum";
    case Op::kMean: return "mean";
    case Op::kRowSum: return "row_sum";
    case Op::kBatchMean: return "batch_mean";
    case Op::kSliceCols: return "slice_cols";
    case Op::kConcatCols: return "concat_cols";
    case Op::kStopGradient: return "stop_gradient";
    case Op::kReparam: return "reparameterize";
    case Op::kBatchNormTrain: return "batch_norm_train";
    case Op::kBatchNormInfer: return "batch_norm_infer";
    case Op::kSoftHist: return "soft_joint_histogram";
    case Op::kMutualInfo: return "mutual_information";
  }
  return "?";
}

std::string Graph::describe(Node node) const {
  check(node);
  const NodeData& n = nodes_[node.id];
  std::ostringstream out;
  out << "#" << node.id << " " << op_name(n.op);
  if (!n.name.empty()) out << " '" << n.name << "'";
  return out.str();
}

// ---------------------------------------------------------------------------
// Evaluation

void Graph::evaluate(const Bindings& bindings) {
  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    NodeData& n = nodes_[id];
    if (n.op == Op::kLeaf) {
      const Tensor* bound = bindings.find(n.name);
      if (!bound) throw ConfigError("leaf '" + n.name + "' is not bound");
      if (bound->rank() > 2) throw ConfigError("leaf '" + n.name + "' has rank > 2");
      n.value.resize(bound->rows(), bound->cols());
      std::copy(bound->values().begin(), bound->values().end(), n.value.data());
    } else {
      try {
        forward_node(n);
      } catch (const ConfigError& e) {
        throw ConfigError(describe(Node{id}) + ": " + e.what());
      }
    }
    if (!n.value.all_finite()) {
      evaluated_ = false;
      throw NumericalError("non-finite value in node " + describe(Node{id}));
    }
  }
  evaluated_ = true;
}

double Graph::forward(const Bindings& bindings) {
  if (!output_.valid()) throw ConfigError("graph has no output");
  evaluate(bindings);
  const Tensor& out = nodes_[output_.id].value;
  if (out.size() != 1) throw ConfigError("graph output is not a scalar: " + out.shape_string());
  return out[0];
}

void Graph::forward_node(NodeData& n) {
  auto in = [&](std::size_t k) -> const Tensor& { return nodes_[n.inputs[k]].value; };
  Tensor& out = n.value;
  switch (n.op) {
    case Op::kLeaf:
      break;
    case Op::kConstant: {
      const Tensor& c = *n.constant;
      out.resize(c.rows(), c.cols());
      std::copy(c.values().begin(), c.values().end(), out.data());
      break;
    }
    case Op::kMatMul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      if (a.cols() != b.rows()) {
        throw ConfigError("matmul shape mismatch " + a.shape_string() + " x " + b.shape_string());
      }
      const std::size_t rows = a.rows(), inner = a.cols(), cols = b.cols();
      out.resize(rows, cols);
      out.fill(0.0);
      for (std::size_t r = 0; r < rows; ++r) {
        double* o = out.data() + r * cols;
        const double* ar = a.data() + r * inner;
        for (std::size_t k = 0; k < inner; ++k) {
          const double av = ar[k];
          if (av == 0.0) continue;
          const double* br = b.data() + k * cols;
          for (std::size_t c = 0; c < cols; ++c) o[c] += av * br[c];
        }
      }
      break;
    }
    case Op::kAdd:
    case Op::kSub:
    case Op::kMul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      const Broadcast kind = broadcast_kind(a, b, op_name(n.op));
      const std::size_t rows = a.rows(), cols = a.cols(), bcols = b.cols();
      out.resize(rows, cols);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
          const double x = a[r * cols + c];
          const double y = b[bindex(kind, r, c, bcols)];
          out[r * cols + c] = n.op == Op::kAdd ? x + y : n.op == Op::kSub ? x - y : x * y;
        }
      }
      break;
    }
    case Op::kAffine:
    case Op::kSquare:
    case Op::kAbs:
    case Op::kExp:
    case Op::kLog:
    case Op::kClamp:
    case Op::kSigmoid:
    case Op::kRelu:
    case Op::kLeakyRelu:
    case Op::kElu:
    case Op::kStopGradient: {
      const Tensor& x = in(0);
      out.resize(x.rows(), x.cols());
      const std::size_t size = x.size();
      for (std::size_t i = 0; i < size; ++i) {
        const double v = x[i];
        double y = v;
        switch (n.op) {
          case Op::kAffine: y = n.a * v + n.b; break;
          case Op::kSquare: y = v * v; break;
          case Op::kAbs: y = std::fabs(v); break;
          case Op::kExp: y = std::exp(v); break;
          case Op::kLog: y = std::log(v + n.a); break;
          case Op::kClamp: y = std::clamp(v, n.a, n.b); break;
          case Op::kSigmoid: y = stable_sigmoid(v); break;
          case Op::kRelu: y = v > 0 ? v : 0.0; break;
          case Op::kLeakyRelu: y = v > 0 ? v : n.a * v; break;
          case Op::kElu: y = v > 0 ? v : n.a * std::expm1(v); break;
          default: break;
        }
        out[i] = y;
      }
      break;
    }
    case Op::kSoftmax:
      softmax_rows(in(0), out);
      break;
    case Op::kSoftmaxCe: {
      const Tensor& z = in(0);
      const Tensor& t = in(1);
      if (!z.same_shape(t)) {
        throw ConfigError("logits " + z.shape_string() + " vs target " + t.shape_string());
      }
      const std::size_t rows = z.rows(), cols = z.cols();
      softmax_rows(z, n.aux1);
      n.aux2.resize(rows, 1);  // log-sum-exp per row
      out.resize(rows, 1);
      for (std::size_t r = 0; r < rows; ++r) {
        const double* zr = z.data() + r * cols;
        const double* tr = t.data() + r * cols;
        double mx = zr[0];
        for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, zr[c]);
        double total = 0.0;
        for (std::size_t c = 0; c < cols; ++c) total += std::exp(zr[c] - mx);
        const double lse = mx + std::log(total);
        n.aux2[r] = lse;
        double loss = 0.0;
        for (std::size_t c = 0; c < cols; ++c) loss += tr[c] * (lse - zr[c]);
        out[r] = loss;
      }
      break;
    }
    case Op::kCrossEntropy: {
      const Tensor& p = in(0);
      const Tensor& t = in(1);
      if (!p.same_shape(t)) {
        throw ConfigError("probabilities " + p.shape_string() + " vs target " + t.shape_string());
      }
      const std::size_t rows = p.rows(), cols = p.cols();
      out.resize(rows, 1);
      for (std::size_t r = 0; r < rows; ++r) {
        double loss = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
          loss -= t[r * cols + c] * std::log(p[r * cols + c] + n.a);
        }
        out[r] = loss;
      }
      break;
    }
    case Op::kKlStdNormal: {
      const Tensor& mu = in(0);
      const Tensor& lv = in(1);
      if (!mu.same_shape(lv)) throw ConfigError("mu/logvar shape mismatch");
      const std::size_t rows = mu.rows(), cols = mu.cols();
      out.resize(rows, 1);
      for (std::size_t r = 0; r < rows; ++r) {
        double kl = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
          const double m = mu[r * cols + c], l = lv[r * cols + c];
          kl += m * m + std::exp(l) - l - 1.0;
        }
        out[r] = 0.5 * kl;
      }
      break;
    }
    case Op::kSum:
    case Op::kMean:
    case Op::kBatchMean: {
      const Tensor& x = in(0);
      double total = 0.0;
      for (double v : x.values()) total += v;
      if (n.op == Op::kMean) total /= static_cast<double>(x.size());
      if (n.op == Op::kBatchMean) total /= static_cast<double>(x.rows());
      out.resize(1, 1);
      out[0] = total;
      break;
    }
    case Op::kRowSum: {
      const Tensor& x = in(0);
      const std::size_t rows = x.rows(), cols = x.cols();
      out.resize(rows, 1);
      for (std::size_t r = 0; r < rows; ++r) {
        double total = 0.0;
        for (std::size_t c = 0; c < cols; ++c) total += x[r * cols + c];
        out[r] = total;
      }
      break;
    }
    case Op::kSliceCols: {
      const Tensor& x = in(0);
      if (n.i0 + n.i1 > x.cols()) {
        throw ConfigError("slice [" + std::to_string(n.i0) + ", +" + std::to_string(n.i1) +
                          ") outside " + x.shape_string());
      }
      const std::size_t rows = x.rows();
      out.resize(rows, n.i1);
      for (std::size_t r = 0; r < rows; ++r) {
        std::copy_n(x.data() + r * x.cols() + n.i0, n.i1, out.data() + r * n.i1);
      }
      break;
    }
    case Op::kConcatCols: {
      const std::size_t rows = in(0).rows();
      std::size_t cols = 0;
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        if (in(k).rows() != rows) throw ConfigError("concat_cols row mismatch");
        cols += in(k).cols();
      }
      out.resize(rows, cols);
      std::size_t offset = 0;
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        const Tensor& part = in(k);
        for (std::size_t r = 0; r < rows; ++r) {
          std::copy_n(part.data() + r * part.cols(), part.cols(), out.data() + r * cols + offset);
        }
        offset += part.cols();
      }
      break;
    }
    case Op::kReparam: {
      const Tensor& mu = in(0);
      const Tensor& lv = in(1);
      const Tensor& eps = in(2);
      if (!mu.same_shape(lv) || !mu.same_shape(eps)) {
        throw ConfigError("reparameterize shape mismatch");
      }
      out.resize(mu.rows(), mu.cols());
      for (std::size_t i = 0; i < mu.size(); ++i) {
        out[i] = mu[i] + std::exp(0.5 * lv[i]) * eps[i];
      }
      break;
    }
    case Op::kBatchNormTrain: {
      const Tensor& x = in(0);
      const Tensor& gamma = in(1);
      const Tensor& beta = in(2);
      const std::size_t rows = x.rows(), cols = x.cols();
      if (gamma.size() != cols || beta.size() != cols) {
        throw ConfigError("batch norm parameter width mismatch");
      }
      n.aux1.resize(rows, cols);  // normalized input
      n.aux2.resize(2, cols);     // batch mean, batch variance
      out.resize(rows, cols);
      for (std::size_t c = 0; c < cols; ++c) {
        double mean = 0.0;
        for (std::size_t r = 0; r < rows; ++r) mean += x[r * cols + c];
        mean /= static_cast<double>(rows);
        double var = 0.0;
        for (std::size_t r = 0; r < rows; ++r) {
          const double d = x[r * cols + c] - mean;
          var += d * d;
        }
        var /= static_cast<double>(rows);
        n.aux2(0, c) = mean;
        n.aux2(1, c) = var;
        const double inv = 1.0 / std::sqrt(var + n.a);
        for (std::size_t r = 0; r < rows; ++r) {
          const double xh = (x[r * cols + c] - mean) * inv;
          n.aux1[r * cols + c] = xh;
          out[r * cols + c] = gamma[c] * xh + beta[c];
        }
      }
      break;
    }
    case Op::kBatchNormInfer: {
      const Tensor& x = in(0);
      const std::size_t rows = x.rows(), cols = x.cols();
      for (std::size_t k = 1; k < 5; ++k) {
        if (in(k).size() != cols) throw ConfigError("batch norm parameter width mismatch");
      }
      out.resize(rows, cols);
      for (std::size_t c = 0; c < cols; ++c) {
        const double inv = 1.0 / std::sqrt(in(4)[c] + n.a);
        for (std::size_t r = 0; r < rows; ++r) {
          out[r * cols + c] = in(1)[c] * (x[r * cols + c] - in(3)[c]) * inv + in(2)[c];
        }
      }
      break;
    }
    case Op::kSoftHist: {
      const Tensor& xi = in(0);
      const Tensor& xj = in(1);
      if (xi.cols() != 1 || xj.cols() != 1 || xi.rows() != xj.rows() || xi.rows() == 0) {
        throw ConfigError("soft histogram needs two non-empty Nx1 columns of equal length");
      }
      const HistogramSpec& h = *n.histogram;
      soft_membership(xi, h.centers_i, h.widths_i, h.temperature, n.aux1);
      soft_membership(xj, h.centers_j, h.widths_j, h.temperature, n.aux2);
      const std::size_t rows = xi.rows(), bi = h.centers_i.size(), bj = h.centers_j.size();
      out.resize(bi, bj);
      out.fill(0.0);
      const double scale = 1.0 / static_cast<double>(rows);
      for (std::size_t s = 0; s < rows; ++s) {
        const double* a = n.aux1.data() + s * bi;
        const double* b = n.aux2.data() + s * bj;
        for (std::size_t p = 0; p < bi; ++p) {
          const double ap = a[p] * scale;
          double* o = out.data() + p * bj;
          for (std::size_t q = 0; q < bj; ++q) o[q] += ap * b[q];
        }
      }
      break;
    }
    case Op::kMutualInfo: {
      const Tensor& joint = in(0);
      const std::size_t bi = joint.rows(), bj = joint.cols();
      n.aux1.resize(1, bi);  // row marginals
      n.aux2.resize(1, bj);  // column marginals
      n.aux1.fill(0.0);
      n.aux2.fill(0.0);
      for (std::size_t p = 0; p < bi; ++p) {
        for (std::size_t q = 0; q < bj; ++q) {
          n.aux1[p] += joint(p, q);
          n.aux2[q] += joint(p, q);
        }
      }
      double mi = 0.0;
      for (std::size_t p = 0; p < bi; ++p) {
        for (std::size_t q = 0; q < bj; ++q) {
          const double v = joint(p, q);
          if (v == 0.0) continue;
          mi += v * (std::log(v + n.a) - std::log(n.aux1[p] * n.aux2[q] + n.a));
        }
      }
      out.resize(1, 1);
      out[0] = mi;
      break;
    }
  }
}

// ---------------------------------------------------------------------------
// Backpropagation

void Graph::refresh_flags() {
  const std::size_t count = nodes_.size();
  std::vector<char> depends(count, 0), reaches(count, 0);
  for (std::size_t id = 0; id < count; ++id) {
    const NodeData& n = nodes_[id];
    if (n.op == Op::kLeaf) {
      depends[id] = 1;
    } else if (n.op != Op::kStopGradient && n.op != Op::kConstant) {
      for (std::size_t in : n.inputs) depends[id] |= depends[in];
    }
  }
  if (output_.valid()) {
    reaches[output_.id] = 1;
    for (std::size_t id = output_.id + 1; id-- > 0;) {
      if (!reaches[id] || nodes_[id].op == Op::kStopGradient) continue;
      for (std::size_t in : nodes_[id].inputs) reaches[in] = 1;
    }
  }
  needs_grad_.assign(count, 0);
  for (std::size_t id = 0; id < count; ++id) needs_grad_[id] = depends[id] && reaches[id];
  flags_valid_ = true;
}

void Graph::backward() {
  if (!output_.valid()) throw ConfigError("graph has no output");
  if (!evaluated_) throw ConfigError("backward() called before a successful forward()");
  if (nodes_[output_.id].value.size() != 1) throw ConfigError("graph output is not a scalar");
  if (!flags_valid_) refresh_flags();
  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    NodeData& n = nodes_[id];
    if (needs_grad_[id] || n.op == Op::kLeaf) {
      n.grad.resize(n.value.rows(), n.value.cols());
      n.grad.fill(0.0);
    }
  }
  if (!needs_grad_[output_.id]) return;
  nodes_[output_.id].grad[0] = 1.0;
  for (std::size_t id = output_.id + 1; id-- > 0;) {
    if (!needs_grad_[id]) continue;
    NodeData& n = nodes_[id];
    if (n.op == Op::kLeaf || n.op == Op::kConstant || n.op == Op::kStopGradient) continue;
    backward_node(n);
  }
}

void Graph::backward_node(NodeData& n) {
  auto in = [&](std::size_t k) -> const Tensor& { return nodes_[n.inputs[k]].value; };
  auto wants = [&](std::size_t k) { return needs_grad_[n.inputs[k]] != 0; };
  auto gin = [&](std::size_t k) -> Tensor& { return nodes_[n.inputs[k]].grad; };
  const Tensor& g = n.grad;
  const Tensor& out = n.value;

  switch (n.op) {
    case Op::kLeaf:
    case Op::kConstant:
    case Op::kStopGradient:
      break;
    case Op::kMatMul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      const std::size_t rows = a.rows(), inner = a.cols(), cols = b.cols();
      if (wants(0)) {
        Tensor& ga = gin(0);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* gr = g.data() + r * cols;
          for (std::size_t k = 0; k < inner; ++k) {
            const double* br = b.data() + k * cols;
            double acc = 0.0;
            for (std::size_t c = 0; c < cols; ++c) acc += gr[c] * br[c];
            ga[r * inner + k] += acc;
          }
        }
      }
      if (wants(1)) {
        Tensor& gb = gin(1);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* gr = g.data() + r * cols;
          const double* ar = a.data() + r * inner;
          for (std::size_t k = 0; k < inner; ++k) {
            const double av = ar[k];
            if (av == 0.0) continue;
            double* gbr = gb.data() + k * cols;
            for (std::size_t c = 0; c < cols; ++c) gbr[c] += av * gr[c];
          }
        }
      }
      break;
    }
    case Op::kAdd:
    case Op::kSub:
    case Op::kMul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      const Broadcast kind = broadcast_kind(a, b, op_name(n.op));
      const std::size_t rows = a.rows(), cols = a.cols(), bcols = b.cols();
      const bool wa = wants(0), wb = wants(1);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
          const std::size_t i = r * cols + c;
          const std::size_t j = bindex(kind, r, c, bcols);
          const double gv = g[i];
          if (n.op == Op::kMul) {
            if (wa) gin(0)[i] += gv * b[j];
            if (wb) gin(1)[j] += gv * a[i];
          } else {
            if (wa) gin(0)[i] += gv;
            if (wb) gin(1)[j] += n.op == Op::kAdd ? gv : -gv;
          }
        }
      }
      break;
    }
    case Op::kAffine:
    case Op::kSquare:
    case Op::kAbs:
    case Op::kExp:
    case Op::kLog:
    case Op::kClamp:
    case Op::kSigmoid:
    case Op::kRelu:
    case Op::kLeakyRelu:
    case Op::kElu: {
      if (!wants(0)) break;
      const Tensor& x = in(0);
      Tensor& gx = gin(0);
      for (std::size_t i = 0; i < x.size(); ++i) {
        const double v = x[i];
        double d = 0.0;
        switch (n.op) {
          case Op::kAffine: d = n.a; break;
          case Op::kSquare: d = 2.0 * v; break;
          case Op::kAbs: d = v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); break;
          case Op::kExp: d = out[i]; break;
          case Op::kLog: d = 1.0 / (v + n.a); break;
          case Op::kClamp: d = (v >= n.a && v <= n.b) ? 1.0 : 0.0; break;
          case Op::kSigmoid: d = out[i] * (1.0 - out[i]); break;
          case Op::kRelu: d = v > 0 ? 1.0 : 0.0; break;
          case Op::kLeakyRelu: d = v > 0 ? 1.0 : (v < 0 ? n.a : 0.0); break;
          case Op::kElu: d = v > 0 ? 1.0 : n.a * std::exp(v); break;
          default: break;
        }
        gx[i] += g[i] * d;
      }
      break;
    }
    case Op::kSoftmax: {
      if (!wants(0)) break;
      Tensor& gx = gin(0);
      const std::size_t rows = out.rows(), cols = out.cols();
      for (std::size_t r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (std::size_t c = 0; c < cols; ++c) dot += g[r * cols + c] * out[r * cols + c];
        for (std::size_t c = 0; c < cols; ++c) {
          gx[r * cols + c] += out[r * cols + c] * (g[r * cols + c] - dot);
        }
      }
      break;
    }
    case Op::kSoftmaxCe: {
      const Tensor& z = in(0);
      const Tensor& t = in(1);
      const std::size_t rows = z.rows(), cols = z.cols();
      for (std::size_t r = 0; r < rows; ++r) {
        const double gr = g[r];
        double tsum = 0.0;
        for (std::size_t c = 0; c < cols; ++c) tsum += t[r * cols + c];
        for (std::size_t c = 0; c < cols; ++c) {
          const std::size_t i = r * cols + c;
          if (wants(0)) gin(0)[i] += gr * (n.aux1[i] * tsum - t[i]);
          if (wants(1)) gin(1)[i] += gr * (n.aux2[r] - z[i]);
        }
      }
      break;
    }
    case Op::kCrossEntropy: {
      const Tensor& p = in(0);
      const Tensor& t = in(1);
      const std::size_t rows = p.rows(), cols = p.cols();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
          const std::size_t i = r * cols + c;
          if (wants(0)) gin(0)[i] -= g[r] * t[i] / (p[i] + n.a);
          if (wants(1)) gin(1)[i] -= g[r] * std::log(p[i] + n.a);
        }
      }
      break;
    }
    case Op::kKlStdNormal: {
      const Tensor& mu = in(0);
      const Tensor& lv = in(1);
      const std::size_t rows = mu.rows(), cols = mu.cols();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
          const std::size_t i = r * cols + c;
          if (wants(0)) gin(0)[i] += g[r] * mu[i];
          if (wants(1)) gin(1)[i] += g[r] * 0.5 * (std::exp(lv[i]) - 1.0);
        }
      }
      break;
    }
    case Op::kSum:
    case Op::kMean:
    case Op::kBatchMean: {
      if (!wants(0)) break;
      Tensor& gx = gin(0);
      double d = g[0];
      if (n.op == Op::kMean) d /= static_cast<double>(gx.size());
      if (n.op == Op::kBatchMean) d /= static_cast<double>(gx.rows());
      for (double& v : gx.values()) v += d;
      break;
    }
    case Op::kRowSum: {
      if (!wants(0)) break;
      Tensor& gx = gin(0);
      const std::size_t rows = gx.rows(), cols = gx.cols();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += g[r];
      }
      break;
    }
    case Op::kSliceCols: {
      if (!wants(0)) break;
      Tensor& gx = gin(0);
      const std::size_t rows = gx.rows(), cols = gx.cols();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < n.i1; ++c) gx[r * cols + n.i0 + c] += g[r * n.i1 + c];
      }
      break;
    }
    case Op::kConcatCols: {
      const std::size_t rows = out.rows(), cols = out.cols();
      std::size_t offset = 0;
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        const std::size_t width = in(k).cols();
        if (wants(k)) {
          Tensor& gp = gin(k);
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < width; ++c) gp[r * width + c] += g[r * cols + offset + c];
          }
        }
        offset += width;
      }
      break;
    }
    case Op::kReparam: {
      const Tensor& lv = in(1);
      const Tensor& eps = in(2);
      for (std::size_t i = 0; i < out.size(); ++i) {
        const double s = std::exp(0.5 * lv[i]);
        if (wants(0)) gin(0)[i] += g[i];
        if (wants(1)) gin(1)[i] += g[i] * eps[i] * 0.5 * s;
        if (wants(2)) gin(2)[i] += g[i] * s;
      }
      break;
    }
    case Op::kBatchNormTrain: {
      const Tensor& gamma = in(1);
      const std::size_t rows = out.rows(), cols = out.cols();
      const double count = static_cast<double>(rows);
      for (std::size_t c = 0; c < cols; ++c) {
        double sum_g = 0.0, sum_gx = 0.0;
        for (std::size_t r = 0; r < rows; ++r) {
          sum_g += g[r * cols + c];
          sum_gx += g[r * cols + c] * n.aux1[r * cols + c];
        }
        if (wants(1)) gin(1)[c] += sum_gx;
        if (wants(2)) gin(2)[c] += sum_g;
        if (wants(0)) {
          const double inv = 1.0 / std::sqrt(n.aux2(1, c) + n.a);
          const double k = gamma[c] * inv / count;
          for (std::size_t r = 0; r < rows; ++r) {
            const std::size_t i = r * cols + c;
            gin(0)[i] += k * (count * g[i] - sum_g - n.aux1[i] * sum_gx);
          }
        }
      }
      break;
    }
    case Op::kBatchNormInfer: {
      const Tensor& x = in(0);
      const Tensor& gamma = in(1);
      const Tensor& mean = in(3);
      const Tensor& var = in(4);
      const std::size_t rows = out.rows(), cols = out.cols();
      for (std::size_t c = 0; c < cols; ++c) {
        const double inv = 1.0 / std::sqrt(var[c] + n.a);
        for (std::size_t r = 0; r < rows; ++r) {
          const std::size_t i = r * cols + c;
          const double centered = x[i] - mean[c];
          if (wants(0)) gin(0)[i] += g[i] * gamma[c] * inv;
          if (wants(1)) gin(1)[c] += g[i] * centered * inv;
          if (wants(2)) gin(2)[c] += g[i];
          if (wants(3)) gin(3)[c] -= g[i] * gamma[c] * inv;
          if (wants(4)) gin(4)[c] -= g[i] * gamma[c] * centered * 0.5 * inv * inv * inv;
        }
      }
      break;
    }
    case Op::kSoftHist: {
      const HistogramSpec& h = *n.histogram;
      const std::size_t rows = in(0).rows(), bi = h.centers_i.size(), bj = h.centers_j.size();
      const double scale = 1.0 / static_cast<double>(rows);
      std::vector<double> da(bi), db(bj);
      for (std::size_t s = 0; s < rows; ++s) {
        const double* a = n.aux1.data() + s * bi;
        const double* b = n.aux2.data() + s * bj;
        // dL/da_p = scale * sum_q G_pq b_q ; dL/db_q = scale * sum_p G_pq a_p
        std::fill(db.begin(), db.end(), 0.0);
        for (std::size_t p = 0; p < bi; ++p) {
          double acc = 0.0;
          const double* gr = g.data() + p * bj;
          for (std::size_t q = 0; q < bj; ++q) {
            acc += gr[q] * b[q];
            db[q] += gr[q] * a[p];
          }
          da[p] = acc * scale;
        }
        for (double& v : db) v *= scale;
        auto chain = [&](const double* m, const std::vector<double>& dm,
                         const std::vector<double>& centers, const std::vector<double>& widths,
                         double x) {
          double dot = 0.0;
          for (std::size_t p = 0; p < centers.size(); ++p) dot += m[p] * dm[p];
          double dx = 0.0;
          for (std::size_t p = 0; p < centers.size(); ++p) {
            const double tw = h.temperature * widths[p];
            const double dlogit = m[p] * (dm[p] - dot);
            dx += dlogit * (-2.0 * (x - centers[p]) / (tw * tw));
          }
          return dx;
        };
        if (wants(0)) gin(0)[s] += chain(a, da, h.centers_i, h.widths_i, in(0)[s]);
        if (wants(1)) gin(1)[s] += chain(b, db, h.centers_j, h.widths_j, in(1)[s]);
      }
      break;
    }
    case Op::kMutualInfo: {
      if (!wants(0)) break;
      const Tensor& joint = in(0);
      const Tensor& r = n.aux1;
      const Tensor& c = n.aux2;
      const std::size_t bi = joint.rows(), bj = joint.cols();
      std::vector<double> row_term(bi, 0.0), col_term(bj, 0.0);
      for (std::size_t p = 0; p < bi; ++p) {
        for (std::size_t q = 0; q < bj; ++q) {
          const double v = joint(p, q);
          const double denom = r[p] * c[q] + n.a;
          row_term[p] += v * c[q] / denom;
          col_term[q] += v * r[p] / denom;
        }
      }
      Tensor& gj = gin(0);
      for (std::size_t p = 0; p < bi; ++p) {
        for (std::size_t q = 0; q < bj; ++q) {
          const double v = joint(p, q);
          const double d = std::log(v + n.a) - std::log(r[p] * c[q] + n.a) + v / (v + n.a) -
                           row_term[p] - col_term[q];
          gj(p, q) += g[0] * d;
        }
      }
      break;
    }
  }
}

// ---------------------------------------------------------------------------
// Accessors

const Tensor& Graph::value(Node node) const {
  check(node);
  return nodes_[node.id].value;
}

const Tensor& Graph::gradient(Node node) const {
  check(node);
  return nodes_[node.id].grad;
}

const Tensor& Graph::aux(Node node) const {
  check(node);
  const NodeData& n = nodes_[node.id];
  return n.op == Op::kBatchNormTrain ? n.aux2 : n.aux1;
}

const Tensor& Graph::leaf_gradient(std::string_view name) const {
  auto it = leaves_.find(name);
  if (it == leaves_.end()) throw ConfigError("no leaf named '" + std::string(name) + "'");
  return nodes_[it->second].grad;
}

std::map<std::string, Tensor> Graph::gradients() const {
  std::map<std::string, Tensor> out;
  for (const auto& [name, id] : leaves_) out.emplace(name, nodes_[id].grad);
  return out;
}

std::vector<std::string> Graph::leaf_names(LeafKind kind) const {
  std::vector<std::string> out;
  for (const auto& [name, id] : leaves_) {
    if (nodes_[id].leaf_kind == kind) out.push_back(name);
  }
  return out;
}

std::optional<Node> Graph::find_leaf(std::string_view name) const {
  auto it = leaves_.find(name);
  if (it == leaves_.end()) return std::nullopt;
  return Node{it->second};
}

std::set<std::string> Graph::leaf_dependencies(Node node, std::span<const Node> stop_at) const {
  check(node);
  std::set<std::string> out;
  std::vector<char> seen(nodes_.size(), 0);
  for (Node s : stop_at) {
    check(s);
    seen[s.id] = 1;
  }
  std::vector<std::size_t> stack{node.id};
  while (!stack.empty()) {
    const std::size_t id = stack.back();
    stack.pop_back();
    if (seen[id]) continue;
    seen[id] = 1;
    const NodeData& n = nodes_[id];
    if (n.op == Op::kLeaf) out.insert(n.name);
    for (std::size_t in : n.inputs) stack.push_back(in);
  }
  return out;
}

double forward(Graph& graph, const Bindings& bindings) { return graph.forward(bindings); }

std::map<std::string, Tensor> gradients(Graph& graph, const Bindings& bindings) {
  graph.forward(bindings);
  graph.backward();
  return graph.gradients();
}

}  // namespace realcf::diff
