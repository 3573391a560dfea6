#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "realcf/data/schema.hpp"
#include "realcf/util/json.hpp"

namespace realcf::data {

enum class EdgeForm { kLinear, kNonlinear };

/// Known dependency x_child <- x_parent.
struct Edge {
  std::size_t child = 0;
  std::size_t parent = 0;
  EdgeForm form = EdgeForm::kLinear;

  bool operator==(const Edge&) const = default;
};

/// x_a + x_b = total, in original units.
struct SumConstraint {
  std::size_t a = 0;
  std::size_t b = 0;
  double total = 0.0;

  bool operator==(const SumConstraint&) const = default;
};

struct EdgeList {
  std::vector<Edge> edges;
  std::vector<SumConstraint> sums;

  /// Indices in range, no self-edges, edge endpoints continuous.
  void validate(const FeatureSchema& schema) const;

  /// Features referenced by name: {"edges": [{"child", "parent", "form"}],
  /// "sums": [{"a", "b", "total"}]}.
  Json to_json(const FeatureSchema& schema) const;
  static EdgeList from_json(const Json& json, const FeatureSchema& schema);

  bool operator==(const EdgeList&) const = default;
};

}  // namespace realcf::data
