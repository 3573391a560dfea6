#include "realcf/dependency/mutual_info.hpp"

#include <algorithm>
#include <cmath>

#include "realcf/error.hpp"

namespace realcf::dep {

std::vector<double> equal_width_edges(double lo, double hi, std::size_t bins) {
  if (bins < 2) throw ConfigError("histograms need at least 2 bins");
  if (!(hi > lo)) {
    lo -= 0.5;
    hi += 0.5;
  }
  std::vector<double> edges(bins + 1);
  const double width = (hi - lo) / static_cast<double>(bins);
  for (std::size_t p = 0; p <= bins; ++p) edges[p] = lo + width * static_cast<double>(p);
  edges[bins] = hi;
  return edges;
}

std::size_t bin_index(double x, std::span<const double> edges) {
  const std::size_t bins = edges.size() - 1;
  if (x < edges[1]) return 0;
  if (x >= edges[bins - 1]) return bins - 1;
  // First edge strictly greater than x closes the bin on the right.
  const auto it = std::upper_bound(edges.begin(), edges.end(), x);
  return static_cast<std::size_t>(it - edges.begin()) - 1;
}

namespace {

void check_edges(const std::vector<double>& edges) {
  if (edges.size() < 3) throw ConfigError("histograms need at least 2 bins");
  for (std::size_t p = 0; p + 1 < edges.size(); ++p) {
    if (!(edges[p + 1] > edges[p])) throw ConfigError("bin edges must be strictly increasing");
  }
}

}  // namespace

JointHistogram joint_histogram(std::span<const double> xi, std::span<const double> xj,
                               std::vector<double> edges_i, std::vector<double> edges_j) {
  if (xi.empty()) throw ConfigError("joint histogram of an empty sample");
  if (xi.size() != xj.size()) throw ConfigError("joint histogram columns differ in length");
  check_edges(edges_i);
  check_edges(edges_j);
  JointHistogram h;
  h.p = Tensor::zeros(edges_i.size() - 1, edges_j.size() - 1);
  const double w = 1.0 / static_cast<double>(xi.size());
  for (std::size_t n = 0; n < xi.size(); ++n) {
    h.p(bin_index(xi[n], edges_i), bin_index(xj[n], edges_j)) += w;
  }
  h.edges_i = std::move(edges_i);
  h.edges_j = std::move(edges_j);
  return h;
}

double mutual_information(const Tensor& joint) {
  const std::size_t rows = joint.rows(), cols = joint.cols();
  std::vector<double> r(rows, 0.0), c(cols, 0.0);
  for (std::size_t p = 0; p < rows; ++p) {
    for (std::size_t q = 0; q < cols; ++q) {
      r[p] += joint(p, q);
      c[q] += joint(p, q);
    }
  }
  double mi = 0.0;
  for (std::size_t p = 0; p < rows; ++p) {
    for (std::size_t q = 0; q < cols; ++q) {
      const double v = joint(p, q);
      if (v > 0.0) mi += v * std::log(v / (r[p] * c[q]));
    }
  }
  return std::max(mi, 0.0);
}

JointHistogram soft_joint_histogram(std::span<const double> xi, std::span<const double> xj,
                                    std::vector<double> edges_i, std::vector<double> edges_j,
                                    double temperature) {
  if (xi.empty() || xi.size() != xj.size()) throw ConfigError("soft histogram column mismatch");
  if (!(temperature > 0)) throw ConfigError("soft histogram temperature must be positive");
  diff::Graph g;
  const diff::Node h =
      g.soft_joint_histogram(g.input("xi"), g.input("xj"), edges_i, edges_j, temperature);
  g.set_output(g.sum(h));
  const Tensor ti = Tensor::column(xi), tj = Tensor::column(xj);
  diff::Bindings b;
  b.set("xi", ti).set("xj", tj);
  g.evaluate(b);
  JointHistogram out;
  out.p = g.value(h);
  out.edges_i = std::move(edges_i);
  out.edges_j = std::move(edges_j);
  return out;
}

std::size_t soft_bins(std::size_t batch_size) {
  const auto root = static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(batch_size))));
  return std::clamp<std::size_t>(root, 2, 10);
}

Pair ordered(std::size_t a, std::size_t b) { return a <= b ? Pair{a, b} : Pair{b, a}; }

std::vector<Pair> all_pairs(std::span<const std::size_t> features) {
  std::vector<Pair> out;
  for (std::size_t a = 0; a < features.size(); ++a) {
    for (std::size_t b = a + 1; b < features.size(); ++b) {
      out.push_back(ordered(features[a], features[b]));
    }
  }
  return out;
}

ReferenceMi ReferenceMi::compute(const Tensor& data, std::vector<std::size_t> features,
                                 std::vector<std::size_t> columns, std::size_t bins) {
  if (features.size() != columns.size()) throw ConfigError("features/columns length mismatch");
  if (data.rows() == 0) throw ConfigError("reference MI needs at least one row");
  ReferenceMi ref;
  ref.bins_ = bins;
  const std::size_t n = data.rows();
  std::vector<std::vector<double>> cols(features.size(), std::vector<double>(n));
  for (std::size_t k = 0; k < features.size(); ++k) {
    if (columns[k] >= data.cols()) throw ConfigError("reference MI column out of range");
    double lo = data(0, columns[k]), hi = lo;
    for (std::size_t r = 0; r < n; ++r) {
      const double v = data(r, columns[k]);
      cols[k][r] = v;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    ref.edges_.push_back(equal_width_edges(lo, hi, bins));
    ref.slot_[features[k]] = k;
  }
  for (std::size_t a = 0; a < features.size(); ++a) {
    for (std::size_t b = a; b < features.size(); ++b) {
      const auto h = joint_histogram(cols[a], cols[b], ref.edges_[a], ref.edges_[b]);
      ref.rho_[ordered(features[a], features[b])] = mutual_information(h);
    }
  }
  ref.features_ = std::move(features);
  ref.columns_ = std::move(columns);
  return ref;
}

std::size_t ReferenceMi::column(std::size_t feature) const {
  auto it = slot_.find(feature);
  if (it == slot_.end()) throw ConfigError("feature " + std::to_string(feature) + " has no reference MI");
  return columns_[it->second];
}

const std::vector<double>& ReferenceMi::edges(std::size_t feature) const {
  auto it = slot_.find(feature);
  if (it == slot_.end()) throw ConfigError("feature " + std::to_string(feature) + " has no reference MI");
  return edges_[it->second];
}

bool ReferenceMi::contains(std::size_t i, std::size_t j) const {
  return rho_.count(ordered(i, j)) != 0;
}

double ReferenceMi::rho(std::size_t i, std::size_t j) const {
  auto it = rho_.find(ordered(i, j));
  if (it == rho_.end()) {
    throw ConfigError("pair (" + std::to_string(i) + ", " + std::to_string(j) +
                      ") is missing from the reference MI");
  }
  return it->second;
}

std::vector<Pair> ReferenceMi::pairs() const {
  std::vector<Pair> out;
  for (const auto& [pair, value] : rho_) {
    if (pair.first != pair.second) out.push_back(pair);
  }
  return out;
}

Json ReferenceMi::to_json() const {
  Json feats = Json::array();
  for (std::size_t k = 0; k < features_.size(); ++k) {
    feats.push_back({{"feature", features_[k]}, {"column", columns_[k]}, {"edges", edges_[k]}});
  }
  Json pairs = Json::array();
  for (const auto& [pair, value] : rho_) {
    pairs.push_back({{"i", pair.first}, {"j", pair.second}, {"rho", value}});
  }
  return Json{{"bins", bins_}, {"features", std::move(feats)}, {"pairs", std::move(pairs)}};
}

ReferenceMi ReferenceMi::from_json(const Json& json) {
  ReferenceMi ref;
  try {
    ref.bins_ = json.at("bins").get<std::size_t>();
    for (const Json& f : json.at("features")) {
      ref.slot_[f.at("feature").get<std::size_t>()] = ref.features_.size();
      ref.features_.push_back(f.at("feature").get<std::size_t>());
      ref.columns_.push_back(f.at("column").get<std::size_t>());
      ref.edges_.push_back(f.at("edges").get<std::vector<double>>());
    }
    for (const Json& p : json.at("pairs")) {
      ref.rho_[ordered(p.at("i").get<std::size_t>(), p.at("j").get<std::size_t>())] =
          p.at("rho").get<double>();
    }
  } catch (const Json::exception& e) {
    throw ParseError(std::string("malformed reference MI: ") + e.what());
  }
  return ref;
}

diff::Node dep_loss(diff::Graph& graph, diff::Node batch, const ReferenceMi& reference,
                    std::span<const Pair> pairs, double temperature) {
  if (pairs.empty()) return graph.constant(Tensor::scalar(0.0), "dep_loss.empty");
  std::vector<diff::Node> gaps;
  for (const Pair& pair : pairs) {
    const double rho = reference.rho(pair.first, pair.second);
    const diff::Node xi = graph.slice_cols(batch, reference.column(pair.first), 1);
    const diff::Node xj = graph.slice_cols(batch, reference.column(pair.second), 1);
    const diff::Node h = graph.soft_joint_histogram(xi, xj, reference.edges(pair.first),
                                                    reference.edges(pair.second), temperature);
    const diff::Node mi = graph.mutual_information(h);
    gaps.push_back(graph.abs(graph.affine(mi, 1.0, -rho)));
  }
  const diff::Node all = gaps.size() == 1 ? gaps[0] : graph.concat_cols(std::move(gaps));
  return graph.mean(all);
}

}  // namespace realcf::dep
