#include "realcf/data/edges.hpp"

#include "realcf/error.hpp"

namespace realcf::data {

void EdgeList::validate(const FeatureSchema& schema) const {
  const std::size_t d = schema.size();
  for (const Edge& e : edges) {
    if (e.child >= d || e.parent >= d) throw SchemaError("edge index out of range");
    if (e.child == e.parent) throw SchemaError("self-edge on '" + schema[e.child].name + "'");
    if (!schema[e.child].continuous() || !schema[e.parent].continuous()) {
      throw SchemaError("edge " + schema[e.parent].name + " -> " + schema[e.child].name +
                        " must join continuous features");
    }
  }
  for (const SumConstraint& s : sums) {
    if (s.a >= d || s.b >= d) throw SchemaError("sum constraint index out of range");
    if (s.a == s.b) throw SchemaError("sum constraint repeats a feature");
    if (!schema[s.a].continuous() || !schema[s.b].continuous()) {
      throw SchemaError("sum constraint must join continuous features");
    }
  }
}

Json EdgeList::to_json(const FeatureSchema& schema) const {
  Json e = Json::array();
  for (const Edge& edge : edges) {
    e.push_back({{"child", schema[edge.child].name},
                 {"parent", schema[edge.parent].name},
                 {"form", edge.form == EdgeForm::kLinear ? "linear" : "nonlinear"}});
  }
  Json s = Json::array();
  for (const SumConstraint& c : sums) {
    s.push_back({{"a", schema[c.a].name}, {"b", schema[c.b].name}, {"total", c.total}});
  }
  return Json{{"edges", std::move(e)}, {"sums", std::move(s)}};
}

EdgeList EdgeList::from_json(const Json& json, const FeatureSchema& schema) {
  EdgeList out;
  try {
    for (const Json& e : json.value("edges", Json::array())) {
      const std::string form = e.value("form", std::string("linear"));
      if (form != "linear" && form != "nonlinear") {
        throw SchemaError("unknown edge form '" + form + "'");
      }
      out.edges.push_back({schema.index_of(e.at("child").get<std::string>()),
                           schema.index_of(e.at("parent").get<std::string>()),
                           form == "linear" ? EdgeForm::kLinear : EdgeForm::kNonlinear});
    }
    for (const Json& s : json.value("sums", Json::array())) {
      out.sums.push_back({schema.index_of(s.at("a").get<std::string>()),
                          schema.index_of(s.at("b").get<std::string>()),
                          s.at("total").get<double>()});
    }
  } catch (const Json::exception& e) {
    throw SchemaError(std::string("malformed edge list: ") + e.what());
  }
  out.validate(schema);
  return out;
}

}  // namespace realcf::data
