#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <utility>
#include <vector>

#include "realcf/diff/graph.hpp"
#include "realcf/diff/tensor.hpp"
#include "realcf/util/json.hpp"

namespace realcf::dep {

using diff::Tensor;

struct JointHistogram {
  Tensor p;  // B_i x B_j, entries sum to 1
  std::vector<double> edges_i;
  std::vector<double> edges_j;
  std::size_t i = 0;
  std::size_t j = 0;
};

/// bins + 1 equally spaced edges from lo to hi (hi > lo is enforced by
/// widening a degenerate interval).
std::vector<double> equal_width_edges(double lo, double hi, std::size_t bins);

/// Bin of x under `edges`; values outside the edge range clamp to the first
/// or last bin and the last bin is closed on the right.
std::size_t bin_index(double x, std::span<const double> edges);

/// Normalized hard co-occurrence counts. Throws ConfigError for N = 0,
/// length mismatches or fewer than two bins.
JointHistogram joint_histogram(std::span<const double> xi, std::span<const double> xj,
                               std::vector<double> edges_i, std::vector<double> edges_j);

/// sum_pq P log(P / (P_p. P_.q)) in nats. Empty cells contribute nothing;
/// tiny negative round-off is clamped to 0.
double mutual_information(const Tensor& joint);
inline double mutual_information(const JointHistogram& h) { return mutual_information(h.p); }

/// Evaluated soft histogram (see diff::Graph::soft_joint_histogram).
JointHistogram soft_joint_histogram(std::span<const double> xi, std::span<const double> xj,
                                    std::vector<double> edges_i, std::vector<double> edges_j,
                                    double temperature);

/// Bin count of the batch-level estimator: min(10, floor(sqrt(batch))), at least 2.
std::size_t soft_bins(std::size_t batch_size);

/// Unordered feature pair, stored with first < second (or equal for the diagonal).
using Pair = std::pair<std::size_t, std::size_t>;
Pair ordered(std::size_t a, std::size_t b);

/// All unordered pairs of distinct entries of `features`.
std::vector<Pair> all_pairs(std::span<const std::size_t> features);

/// Mutual information of every continuous feature pair on the training split,
/// with per-feature bin edges frozen from the training range.
class ReferenceMi {
 public:
  ReferenceMi() = default;

  /// `data` holds one row per training sample; feature f lives in column
  /// columns[k] for features[k]. The diagonal (binned marginal entropy) is
  /// stored as well.
  static ReferenceMi compute(const Tensor& data, std::vector<std::size_t> features,
                             std::vector<std::size_t> columns, std::size_t bins);

  std::size_t bins() const { return bins_; }
  const std::vector<std::size_t>& features() const { return features_; }
  bool covers(std::size_t feature) const { return slot_.count(feature) != 0; }
  std::size_t column(std::size_t feature) const;
  const std::vector<double>& edges(std::size_t feature) const;

  /// rho(x_i, x_j); throws ConfigError for pairs that were never computed.
  double rho(std::size_t i, std::size_t j) const;
  bool contains(std::size_t i, std::size_t j) const;
  std::vector<Pair> pairs() const;  // off-diagonal pairs

  Json to_json() const;
  static ReferenceMi from_json(const Json& json);

  bool operator==(const ReferenceMi&) const = default;

 private:
  std::size_t bins_ = 0;
  std::vector<std::size_t> features_;
  std::vector<std::size_t> columns_;
  std::vector<std::vector<double>> edges_;
  std::map<std::size_t, std::size_t> slot_;
  std::map<Pair, double> rho_;
};

/// L_dep = mean over `pairs` of |rho_soft(batch) - rho_ref|. `batch` is the
/// N x width matrix that holds the features at the reference's columns; the
/// soft histograms reuse the reference bin edges.
diff::Node dep_loss(diff::Graph& graph, diff::Node batch, const ReferenceMi& reference,
                    std::span<const Pair> pairs, double temperature);

}  // namespace realcf::dep
