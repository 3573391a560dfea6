#include <gtest/gtest.h>

#include <cmath>
#include <future>
#include <memory>
#include <string>

#include "realcf/data/sources.hpp"
#include "realcf/error.hpp"
#include "realcf/server/http.hpp"
#include "realcf/server/service.hpp"

namespace realcf {
namespace {

using server::Bundle;
using server::Response;
using server::Service;

const std::string kFixtures = REALCF_FIXTURE_DIR;

Bundle build_bundle(const data::Dataset& d, std::size_t clf_epochs, std::size_t cvae_epochs) {
  auto spec = clf::preset_classifier(d.id);
  spec.epochs = clf_epochs;
  Bundle b;
  b.dataset = d.id;
  b.classifier = clf::train_classifier(d, spec, 42);
  auto cfg = realac::preset_cvae(d.id);
  cfg.epochs = cvae_epochs;
  const data::EdgeList edges = data::preset_edges(d.id, d.schema);
  b.model = realac::train_cf_model(d, b.classifier, edges, cfg, 42);
  b.edge_models = metrics::fit_edge_models(d, edges);
  b.train_rows = d.gather(d.split.train);
  return b;
}

Json bundle_json(const Bundle& b) {
  Json edges = Json::array();
  for (const auto& m : b.edge_models) edges.push_back(m.to_json());
  return Json{{"format", "realcf.bundle"},
              {"version", 1},
              {"dataset", b.dataset},
              {"classifier", b.classifier.to_json()},
              {"cvae", b.model.to_json()},
              {"edge_models", edges},
              {"train_rows", tensor_to_json(b.train_rows)}};
}

class ServiceTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    const data::Dataset s1 = data::load_dataset({"synthetic1", 42, 1500, "", ""});
    const data::Dataset adult = data::load_csv(kFixtures + "/adult_small.csv",
                                               data::preset_schema("adult"),
                                               data::preset_split("adult"), 42, "adult");
    service_ = new Service();
    // Round trip through JSON so the handlers run on what a bundle file holds.
    service_->add(Bundle::from_json(bundle_json(build_bundle(s1, 5, 3))));
    service_->add(Bundle::from_json(bundle_json(build_bundle(adult, 2, 2))));
  }
  static void TearDownTestSuite() {
    delete service_;
    service_ = nullptr;
  }

  static Json s1_instance() {
    return Json{{"X1", 0.4}, {"X2", -0.2}, {"X3", 1.0}, {"X4", -2.1},
                {"X5", 0.8}, {"X6", 47.0}, {"X7", 53.0}};
  }
  static Response post(const Json& body) { return service_->counterfactual(body.dump()); }

  static Service* service_;
};

Service* ServiceTest::service_ = nullptr;

TEST_F(ServiceTest, SchemaRoundTripsAndReportsRanges) {
  const Response r = service_->schema("synthetic1");
  ASSERT_EQ(r.status, 200);
  const data::FeatureSchema parsed = data::FeatureSchema::from_json(r.body["schema"]);
  const data::FeatureSchema again = data::FeatureSchema::from_json(parsed.to_json());
  EXPECT_EQ(parsed, again);
  EXPECT_EQ(parsed.size(), 7u);
  for (const auto& f : parsed.features()) {
    EXPECT_EQ(r.body["ranges"][f.name][0].get<double>(), f.min);
    EXPECT_EQ(r.body["ranges"][f.name][1].get<double>(), f.max);
    EXPECT_EQ(r.body["default_mask"][f.name].get<bool>(), !f.default_mutable);
  }
  EXPECT_EQ(service_->schema("synthetic1").body, r.body);
}

TEST_F(ServiceTest, SchemaMarksStructuralImmutablesAndSkipsCategoricalRanges) {
  const Response r = service_->schema("adult");
  ASSERT_EQ(r.status, 200);
  EXPECT_TRUE(r.body["default_mask"]["race"].get<bool>());
  EXPECT_TRUE(r.body["default_mask"]["gender"].get<bool>());
  EXPECT_FALSE(r.body["ranges"].contains("race"));
  EXPECT_TRUE(r.body["ranges"].contains("age"));
}

TEST_F(ServiceTest, UnknownDatasetIs404) {
  const Response r = service_->schema("nope");
  EXPECT_EQ(r.status, 404);
  EXPECT_TRUE(r.body.contains("error"));
  EXPECT_EQ(post({{"dataset", "nope"}, {"instance", s1_instance()}}).status, 404);
  EXPECT_EQ(service_->pairs("nope", "0", "1", 0).status, 404);
}

TEST_F(ServiceTest, MalformedBodiesAre400) {
  EXPECT_EQ(service_->counterfactual("{not json").status, 400);
  EXPECT_EQ(service_->counterfactual("[1, 2]").status, 400);
  EXPECT_EQ(post({{"instance", s1_instance()}}).status, 400);
  EXPECT_EQ(post({{"dataset", "synthetic1"}}).status, 400);
  EXPECT_EQ(post({{"dataset", "synthetic1"}, {"instance", s1_instance()}, {"mask", 3}}).status,
            400);
  EXPECT_EQ(post({{"dataset", "synthetic1"}, {"instance", s1_instance()}, {"target", 2}}).status,
            400);
  EXPECT_EQ(
      post({{"dataset", "synthetic1"}, {"instance", s1_instance()}, {"latent_mode", "x"}}).status,
      400);
  EXPECT_EQ(post({{"dataset", "synthetic1"},
                  {"instance", s1_instance()},
                  {"mask", {{"X1", "yes"}}}})
                .status,
            400);
}

TEST_F(ServiceTest, OutOfSchemaNamesAre422WithOffenders) {
  Json inst = s1_instance();
  inst.erase("X2");
  inst["X9"] = 1.0;
  const Response r =
      post({{"dataset", "synthetic1"}, {"instance", inst}, {"mask", {{"Y", true}}}});
  ASSERT_EQ(r.status, 422);
  EXPECT_EQ(r.body["missing"], Json::array({"X2"}));
  EXPECT_EQ(r.body["unknown"], Json::array({"X9", "Y"}));
}

TEST_F(ServiceTest, AllFrozenEchoesInstance) {
  const Json inst = s1_instance();
  Json mask = Json::object();
  for (const auto& [name, v] : inst.items()) mask[name] = true;
  const Response r = post({{"dataset", "synthetic1"}, {"instance", s1_instance()}, {"mask", mask}});
  ASSERT_EQ(r.status, 200);
  EXPECT_EQ(r.body["counterfactual"], s1_instance());
  EXPECT_EQ(r.body["changed"], Json::array());
  EXPECT_FALSE(r.body["validity"].get<bool>());
}

TEST_F(ServiceTest, ResponseShapeAndDeterminism) {
  const Json req{{"dataset", "synthetic1"}, {"instance", s1_instance()}, {"mask", {{"X1", true}}}};
  const Response a = post(req);
  const Response b = post(req);
  ASSERT_EQ(a.status, 200);
  EXPECT_EQ(a.body.dump(), b.body.dump());
  for (const char* key : {"proba_before", "proba_after"}) {
    const double s = a.body[key][0].get<double>() + a.body[key][1].get<double>();
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
  EXPECT_EQ(a.body["counterfactual"]["X1"], s1_instance()["X1"]);
  for (const Json& c : a.body["changed"]) EXPECT_NE(c["name"], "X1");
  EXPECT_EQ(a.body["edge_dps"].size(), 4u);
  EXPECT_EQ(a.body["validity"].get<bool>(),
            a.body["prediction_after"] != a.body["prediction_before"]);
  EXPECT_TRUE(a.body["plausible"].is_boolean());
}

TEST_F(ServiceTest, FreezingAChangedFeatureMovesTheRest) {
  const Response free = post({{"dataset", "synthetic1"}, {"instance", s1_instance()}});
  ASSERT_EQ(free.status, 200);
  ASSERT_FALSE(free.body["changed"].empty());
  const std::string name = free.body["changed"][0]["name"];
  const Response pinned =
      post({{"dataset", "synthetic1"}, {"instance", s1_instance()}, {"mask", {{name, true}}}});
  ASSERT_EQ(pinned.status, 200);
  EXPECT_EQ(pinned.body["counterfactual"][name], s1_instance()[name]);
  bool other_moved = false;
  for (const auto& [key, value] : pinned.body["counterfactual"].items()) {
    if (key != name && value != free.body["counterfactual"][key]) other_moved = true;
  }
  EXPECT_TRUE(other_moved);
}

TEST_F(ServiceTest, OutOfRangeInputsAreClampedWithAWarning) {
  Json inst = s1_instance();
  inst["X1"] = 1e6;
  const Response r = post({{"dataset", "synthetic1"}, {"instance", inst}, {"mask", {{"X1", true}}}});
  ASSERT_EQ(r.status, 200);
  EXPECT_FALSE(r.body["warnings"].empty());
  EXPECT_LT(r.body["counterfactual"]["X1"].get<double>(), 1e6);
}

TEST_F(ServiceTest, CategoricalsAcceptLabelsOrCodes) {
  const data::FeatureSchema schema =
      data::FeatureSchema::from_json(service_->schema("adult").body["schema"]);
  Json inst = Json::object();
  for (const auto& f : schema.features()) {
    if (f.continuous()) {
      inst[f.name] = 0.0;
    } else {
      inst[f.name] = f.categories.front();
    }
  }
  inst["age"] = 40.0;
  inst["educational-num"] = 10.0;
  inst["hours-per-week"] = 40.0;
  const Response by_label = post({{"dataset", "adult"}, {"instance", inst}});
  ASSERT_EQ(by_label.status, 200) << by_label.body.dump();
  for (const auto& f : schema.features()) {
    if (!f.continuous()) inst[f.name] = 0;
  }
  EXPECT_EQ(post({{"dataset", "adult"}, {"instance", inst}}).body, by_label.body);
  for (const Json& c : by_label.body["changed"]) {
    EXPECT_NE(c["name"], "race");
    EXPECT_NE(c["name"], "gender");
  }
  inst["race"] = "Martian";
  const Response bad = post({{"dataset", "adult"}, {"instance", inst}});
  EXPECT_EQ(bad.status, 422);
  EXPECT_EQ(bad.body["invalid"], Json::array({"race"}));
}

TEST_F(ServiceTest, PairsPayload) {
  const Response r = service_->pairs("synthetic1", "X3", "X5", 3);
  ASSERT_EQ(r.status, 200);
  // 85% of 1500 rows, below the cap, so every training point is returned.
  EXPECT_EQ(r.body["points"].size(), 1275u);
  EXPECT_EQ(service_->pairs("synthetic1", "X3", "X5", 3).body, r.body);
  EXPECT_NE(service_->pairs("synthetic1", "X3", "X5", 4).body["points"], r.body["points"]);
  // Indices name the same features.
  EXPECT_EQ(service_->pairs("synthetic1", "2", "4", 3).body, r.body);
  const double strong = r.body["rho"].get<double>();
  const double weak = service_->pairs("synthetic1", "X1", "X6", 3).body["rho"].get<double>();
  EXPECT_GT(strong, weak);
}

TEST_F(ServiceTest, PairsDiagonalIsMarginalEntropy) {
  const Response r = service_->pairs("synthetic1", "X3", "X3", 0);
  ASSERT_EQ(r.status, 200);
  for (const Json& p : r.body["points"]) EXPECT_EQ(p[0], p[1]);
  // Binned entropy lies in (0, log bins].
  const double h = r.body["rho"].get<double>();
  EXPECT_GT(h, 0.0);
  EXPECT_LE(h, std::log(50.0) + 1e-12);
}

TEST_F(ServiceTest, PairsRejectCategoricalAndUnknownFeatures) {
  const Response cat = service_->pairs("adult", "age", "race", 0);
  EXPECT_EQ(cat.status, 422);
  EXPECT_EQ(cat.body["offenders"], Json::array({"race"}));
  const Response unknown = service_->pairs("synthetic1", "X1", "Q", 0);
  EXPECT_EQ(unknown.status, 422);
  EXPECT_EQ(unknown.body["offenders"], Json::array({"Q"}));
}

TEST_F(ServiceTest, BadBundlesAndMissingDirectory) {
  EXPECT_THROW(Bundle::from_json(Json{{"format", "other"}}), ParseError);
  EXPECT_THROW(Bundle::from_json(Json{{"format", "realcf.bundle"}, {"version", 1}}), ParseError);
  EXPECT_THROW(Service::load_dir("/nonexistent/dir"), ConfigError);
  EXPECT_EQ(service_->datasets(), (std::vector<std::string>{"adult", "synthetic1"}));
}

TEST_F(ServiceTest, ConcurrentIdenticalRequestsAgree) {
  const Json req{{"dataset", "synthetic1"}, {"instance", s1_instance()}};
  auto run = [&] { return post(req).body.dump(); };
  auto a = std::async(std::launch::async, run);
  auto b = std::async(std::launch::async, run);
  EXPECT_EQ(a.get(), b.get());
}

TEST_F(ServiceTest, HttpRoundTrip) {
  httplib::Server http;
  server::install_routes(http, *service_);
  const int port = http.bind_to_any_port("127.0.0.1");
  ASSERT_GT(port, 0);
  auto listening = std::async(std::launch::async, [&] { return http.listen_after_bind(); });
  http.wait_until_ready();

  httplib::Client client("127.0.0.1", port);
  auto schema = client.Get("/schema?dataset=synthetic1");
  ASSERT_TRUE(schema);
  EXPECT_EQ(schema->status, 200);
  EXPECT_EQ(schema->get_header_value("Access-Control-Allow-Origin"), "*");
  EXPECT_EQ(Json::parse(schema->body), service_->schema("synthetic1").body);

  const Json req{{"dataset", "synthetic1"}, {"instance", s1_instance()}, {"mask", {{"X2", true}}}};
  auto cf = client.Post("/counterfactual", req.dump(), "application/json");
  ASSERT_TRUE(cf);
  EXPECT_EQ(cf->status, 200);
  EXPECT_EQ(Json::parse(cf->body), post(req).body);

  auto bad = client.Post("/counterfactual", "{", "application/json");
  ASSERT_TRUE(bad);
  EXPECT_EQ(bad->status, 400);

  auto pairs = client.Get("/pairs?dataset=adult&i=age&j=race");
  ASSERT_TRUE(pairs);
  EXPECT_EQ(pairs->status, 422);
  auto missing = client.Get("/pairs?dataset=synthetic1&i=X1");
  ASSERT_TRUE(missing);
  EXPECT_EQ(missing->status, 400);

  auto preflight = client.Options("/counterfactual");
  ASSERT_TRUE(preflight);
  EXPECT_EQ(preflight->status, 204);

  http.stop();
  listening.get();
}

}  // namespace
}  // namespace realcf
