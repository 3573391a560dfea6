#include "realcf/server/service.hpp"

#include <algorithm>
#include <filesystem>
#include <numeric>
#include <random>

#include "realcf/error.hpp"

namespace realcf::server {

namespace {

Response error(int status, const std::string& message, Json extra = Json::object()) {
  extra["error"] = message;
  return {status, std::move(extra)};
}

Json feature_value(const data::FeatureSpec& f, double v) {
  if (f.kind == data::FeatureKind::kCategorical) {
    const auto code = static_cast<std::size_t>(v);
    if (code < f.categories.size()) return f.categories[code];
  }
  return v;
}

// Resolves a feature given by name or by decimal index.
std::optional<std::size_t> resolve_feature(const data::FeatureSchema& schema,
                                           const std::string& key) {
  if (auto idx = schema.find(key)) return idx;
  if (!key.empty() && std::all_of(key.begin(), key.end(), ::isdigit)) {
    const std::size_t i = std::stoul(key);
    if (i < schema.size()) return i;
  }
  return std::nullopt;
}

}  // namespace

Bundle Bundle::from_json(const Json& json) {
  try {
    if (json.value("format", std::string()) != "realcf.bundle") {
      throw ParseError("not a model bundle");
    }
    if (json.at("version").get<int>() != 1) throw ParseError("unsupported bundle version");
    Bundle b;
    b.dataset = json.at("dataset").get<std::string>();
    b.classifier = clf::TrainedClassifier::from_json(json.at("classifier"));
    b.model = realac::CvaeModel::from_json(json.at("cvae"));
    for (const Json& m : json.at("edge_models")) {
      b.edge_models.push_back(metrics::EdgeModel::from_json(m));
    }
    b.train_rows = tensor_from_json(json.at("train_rows"));
    if (b.train_rows.cols() != b.model.schema().size()) {
      throw ParseError("bundle training rows do not match the schema");
    }
    if (b.classifier.input_width() != b.model.encoder().width()) {
      throw ParseError("bundle classifier and CVAE disagree on the input width");
    }
    return b;
  } catch (const Json::exception& e) {
    throw ParseError(std::string("malformed bundle: ") + e.what());
  }
}

Bundle Bundle::load(const std::string& path) {
  try {
    return from_json(read_json_file(path));
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

void Service::add(Bundle bundle) {
  const std::string id = bundle.dataset;
  if (!bundles_.emplace(id, std::move(bundle)).second) {
    throw ConfigError("two bundles for dataset '" + id + "'");
  }
}

Service Service::load_dir(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw ConfigError("models directory '" + dir + "' does not exist");
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".json") {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  Service service;
  for (const auto& path : files) {
    Json json;
    try {
      json = read_json_file(path.string());
    } catch (const ParseError&) {
      continue;
    }
    if (!json.is_object() || json.value("format", std::string()) != "realcf.bundle") continue;
    service.add(Bundle::load(path.string()));
  }
  if (service.bundles_.empty()) throw ConfigError("no model bundles found under '" + dir + "'");
  return service;
}

std::vector<std::string> Service::datasets() const {
  std::vector<std::string> out;
  for (const auto& [id, b] : bundles_) out.push_back(id);
  return out;
}

const Bundle* Service::find(const std::string& dataset) const {
  const auto it = bundles_.find(dataset);
  return it == bundles_.end() ? nullptr : &it->second;
}

Response Service::schema(const std::string& dataset) const {
  const Bundle* b = find(dataset);
  if (b == nullptr) return error(404, "unknown dataset '" + dataset + "'");
  const data::FeatureSchema& s = b->model.schema();
  Json mask = Json::object(), ranges = Json::object();
  for (const auto& f : s.features()) {
    mask[f.name] = !f.default_mutable;
    if (f.kind == data::FeatureKind::kContinuous) ranges[f.name] = {f.min, f.max};
  }
  return {200, Json{{"dataset", dataset},
                    {"schema", s.to_json()},
                    {"default_mask", std::move(mask)},
                    {"ranges", std::move(ranges)}}};
}

Response Service::counterfactual(const std::string& body) const {
  Json req;
  try {
    req = Json::parse(body);
  } catch (const Json::exception& e) {
    return error(400, std::string("body is not JSON: ") + e.what());
  }
  if (!req.is_object()) return error(400, "body must be a JSON object");
  if (!req.contains("dataset") || !req["dataset"].is_string()) {
    return error(400, "missing string field 'dataset'");
  }
  if (!req.contains("instance") || !req["instance"].is_object()) {
    return error(400, "missing object field 'instance'");
  }
  if (req.contains("mask") && !req["mask"].is_object()) return error(400, "'mask' must be an object");
  const std::string dataset = req["dataset"].get<std::string>();
  const Bundle* b = find(dataset);
  if (b == nullptr) return error(404, "unknown dataset '" + dataset + "'");
  const data::FeatureSchema& s = b->model.schema();
  const std::size_t d = s.size();

  std::string latent = "mean";
  std::uint64_t seed = 0;
  std::optional<std::vector<int>> target;
  try {
    latent = req.value("latent_mode", latent);
    seed = req.value("seed", seed);
    if (req.contains("target") && !req["target"].is_null()) {
      const int t = req["target"].get<int>();
      if (t != 0 && t != 1) return error(400, "'target' must be 0 or 1");
      target = std::vector<int>{t};
    }
  } catch (const Json::exception& e) {
    return error(400, std::string("bad request field: ") + e.what());
  }
  if (latent != "mean" && latent != "sampled") {
    return error(400, "'latent_mode' must be \"mean\" or \"sampled\"");
  }

  const Json request_mask = req.value("mask", Json::object());
  Json unknown = Json::array(), missing = Json::array(), invalid = Json::array();
  for (const auto& [name, value] : req["instance"].items()) {
    if (!s.find(name)) unknown.push_back(name);
  }
  for (const auto& [name, value] : request_mask.items()) {
    if (!s.find(name)) unknown.push_back(name);
  }
  Tensor factual = Tensor::zeros(1, d);
  Tensor mask = Tensor::zeros(1, d);
  for (std::size_t j = 0; j < d; ++j) {
    const auto& f = s[j];
    if (!req["instance"].contains(f.name)) {
      missing.push_back(f.name);
      continue;
    }
    const Json& v = req["instance"][f.name];
    if (v.is_number()) {
      factual(0, j) = v.get<double>();
      if (f.kind == data::FeatureKind::kCategorical &&
          (factual(0, j) < 0 || factual(0, j) >= static_cast<double>(f.categories.size()) ||
           factual(0, j) != std::floor(factual(0, j)))) {
        invalid.push_back(f.name);
      }
    } else if (v.is_string() && f.kind == data::FeatureKind::kCategorical) {
      const auto& cats = f.categories;
      const auto it = std::find(cats.begin(), cats.end(), v.get<std::string>());
      if (it == cats.end()) {
        invalid.push_back(f.name);
      } else {
        factual(0, j) = static_cast<double>(it - cats.begin());
      }
    } else {
      invalid.push_back(f.name);
    }
  }
  if (!unknown.empty() || !missing.empty() || !invalid.empty()) {
    return error(422, "instance does not match the schema",
                 Json{{"unknown", unknown}, {"missing", missing}, {"invalid", invalid}});
  }
  for (const auto& [name, value] : request_mask.items()) {
    if (!value.is_boolean()) return error(400, "mask values must be booleans");
    mask(0, s.index_of(name)) = value.get<bool>() ? 1.0 : 0.0;
  }
  mask = realac::enforce_immutables(s, std::move(mask));

  realac::CfBatch batch;
  try {
    batch = realac::generate(b->model, b->classifier, factual, mask, target,
                             latent == "mean" ? realac::LatentMode::kMean
                                              : realac::LatentMode::kSampled,
                             seed);
  } catch (const ConfigError& e) {
    return error(422, e.what());
  }

  Json cf = Json::object(), fact = Json::object(), changed = Json::array(), frozen = Json::array();
  for (std::size_t j = 0; j < d; ++j) {
    const auto& f = s[j];
    const double a = batch.factual(0, j), c = batch.counterfactual(0, j);
    fact[f.name] = feature_value(f, a);
    cf[f.name] = feature_value(f, c);
    if (batch.mask(0, j) != 0.0) frozen.push_back(f.name);
    if (a != c) {
      changed.push_back({{"name", f.name}, {"from", feature_value(f, a)}, {"to", feature_value(f, c)}});
    }
  }
  Json edges = Json::array();
  const metrics::EdgeScores scores = metrics::dps(batch.counterfactual, b->edge_models);
  for (std::size_t e = 0; e < b->edge_models.size(); ++e) {
    const auto& edge = b->edge_models[e].edge;
    Json row{{"parent", s[edge.parent].name}, {"child", s[edge.child].name}};
    row["dps"] = scores.per_edge[e] ? Json(*scores.per_edge[e]) : Json(nullptr);
    edges.push_back(std::move(row));
  }
  Json warnings = batch.warnings;
  for (const auto& w : scores.warnings) warnings.push_back(w);
  return {200, Json{{"dataset", dataset},
                    {"factual", std::move(fact)},
                    {"counterfactual", std::move(cf)},
                    {"changed", std::move(changed)},
                    {"frozen", std::move(frozen)},
                    {"target", batch.target[0]},
                    {"prediction_before", batch.factual_pred[0]},
                    {"prediction_after", batch.cf_pred[0]},
                    {"proba_before", {batch.proba_factual(0, 0), batch.proba_factual(0, 1)}},
                    {"proba_after", {batch.proba_cf(0, 0), batch.proba_cf(0, 1)}},
                    {"validity", batch.cf_pred[0] != batch.factual_pred[0]},
                    {"plausible", metrics::plausibility(batch.counterfactual, s) == 1.0},
                    {"edge_dps", std::move(edges)},
                    {"warnings", std::move(warnings)}}};
}

Response Service::pairs(const std::string& dataset, const std::string& i, const std::string& j,
                        std::uint64_t seed) const {
  const Bundle* b = find(dataset);
  if (b == nullptr) return error(404, "unknown dataset '" + dataset + "'");
  const data::FeatureSchema& s = b->model.schema();
  const auto fi = resolve_feature(s, i), fj = resolve_feature(s, j);
  Json offenders = Json::array();
  if (!fi) offenders.push_back(i);
  if (!fj) offenders.push_back(j);
  if (!offenders.empty()) return error(422, "unknown features", Json{{"offenders", offenders}});
  for (std::size_t f : {*fi, *fj}) {
    if (s[f].kind != data::FeatureKind::kContinuous) offenders.push_back(s[f].name);
  }
  if (!offenders.empty()) {
    return error(422, "pairs need continuous features", Json{{"offenders", offenders}});
  }
  const dep::ReferenceMi& ref = b->model.reference();
  if (!ref.contains(*fi, *fj)) return error(422, "no reference MI for this pair");

  const std::size_t n = b->train_rows.rows();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(std::min(n, kMaxPairPoints));
  Json points = Json::array();
  for (std::size_t r : order) points.push_back({b->train_rows(r, *fi), b->train_rows(r, *fj)});
  return {200, Json{{"dataset", dataset},
                    {"x", s[*fi].name},
                    {"y", s[*fj].name},
                    {"rho", ref.rho(*fi, *fj)},
                    {"seed", seed},
                    {"points", std::move(points)}}};
}

}  // namespace realcf::server
