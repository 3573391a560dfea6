#include "realcf/data/schema.hpp"

#include <algorithm>
#include <set>

#include "realcf/error.hpp"

namespace realcf::data {

std::string_view kind_name(FeatureKind kind) {
  return kind == FeatureKind::kContinuous ? "continuous" : "categorical";
}

FeatureKind parse_kind(std::string_view name) {
  if (name == "continuous" || name == "numeric" || name == "numerical") {
    return FeatureKind::kContinuous;
  }
  if (name == "categorical") return FeatureKind::kCategorical;
  throw SchemaError("unknown feature kind '" + std::string(name) + "'");
}

FeatureSchema::FeatureSchema(std::vector<FeatureSpec> features, LabelSpec label)
    : features_(std::move(features)), label_(std::move(label)) {}

std::optional<std::size_t> FeatureSchema::find(std::string_view name) const {
  for (std::size_t i = 0; i < features_.size(); ++i) {
    if (features_[i].name == name) return i;
  }
  return std::nullopt;
}

std::size_t FeatureSchema::index_of(std::string_view name) const {
  if (auto i = find(name)) return *i;
  throw SchemaError("unknown feature '" + std::string(name) + "'");
}

std::vector<std::size_t> FeatureSchema::continuous_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < features_.size(); ++i) {
    if (features_[i].continuous()) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> FeatureSchema::categorical_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < features_.size(); ++i) {
    if (!features_[i].continuous()) out.push_back(i);
  }
  return out;
}

std::vector<std::string> FeatureSchema::names() const {
  std::vector<std::string> out;
  for (const auto& f : features_) out.push_back(f.name);
  return out;
}

std::size_t FeatureSchema::category_code(std::size_t feature, std::string_view value) const {
  const auto& cats = features_.at(feature).categories;
  auto it = std::find(cats.begin(), cats.end(), value);
  if (it == cats.end()) {
    throw SchemaError("value '" + std::string(value) + "' is not a category of '" +
                      features_[feature].name + "'");
  }
  return static_cast<std::size_t>(it - cats.begin());
}

void FeatureSchema::validate(bool require_ranges) const {
  std::set<std::string> seen;
  for (const auto& f : features_) {
    if (f.name.empty()) throw SchemaError("feature with empty name");
    if (!seen.insert(f.name).second) throw SchemaError("duplicate feature '" + f.name + "'");
    if (f.name == label_.name) throw SchemaError("feature '" + f.name + "' shadows the label");
    if (!f.continuous() && f.categories.size() < 2) {
      throw SchemaError("categorical feature '" + f.name + "' needs at least 2 categories");
    }
    if (f.continuous() && require_ranges && !(f.min < f.max)) {
      throw SchemaError("continuous feature '" + f.name + "' has empty range");
    }
  }
}

Json FeatureSchema::to_json() const {
  Json features = Json::array();
  for (const auto& f : features_) {
    Json entry{{"name", f.name}, {"kind", kind_name(f.kind)}, {"mutable", f.default_mutable}};
    if (f.continuous()) {
      entry["min"] = f.min;
      entry["max"] = f.max;
    } else {
      entry["categories"] = f.categories;
    }
    features.push_back(std::move(entry));
  }
  return Json{{"features", std::move(features)},
              {"label", Json{{"name", label_.name}, {"positive", label_.positive}}}};
}

FeatureSchema FeatureSchema::from_json(const Json& json) {
  try {
    std::vector<FeatureSpec> features;
    for (const Json& entry : json.at("features")) {
      FeatureSpec f;
      f.name = entry.at("name").get<std::string>();
      f.kind = parse_kind(entry.value("kind", std::string("continuous")));
      f.default_mutable = entry.value("mutable", true);
      if (entry.contains("categories")) {
        f.categories = entry.at("categories").get<std::vector<std::string>>();
      }
      f.min = entry.value("min", 0.0);
      f.max = entry.value("max", 0.0);
      features.push_back(std::move(f));
    }
    LabelSpec label;
    if (json.contains("label")) {
      const Json& l = json.at("label");
      label.name = l.value("name", label.name);
      if (l.contains("positive")) label.positive = l.at("positive").get<std::vector<std::string>>();
    }
    FeatureSchema schema(std::move(features), std::move(label));
    std::set<std::string> seen;
    for (const auto& f : schema.features()) {
      if (!seen.insert(f.name).second) throw SchemaError("duplicate feature '" + f.name + "'");
    }
    return schema;
  } catch (const Json::exception& e) {
    throw SchemaError(std::string("malformed schema: ") + e.what());
  }
}

}  // namespace realcf::data
