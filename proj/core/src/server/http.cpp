#include "realcf/server/http.hpp"

#include <cstdint>
#include <string>

namespace realcf::server {

namespace {

void send(httplib::Response& res, const Response& r) {
  res.status = r.status;
  res.set_content(r.body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message) {
  send(res, {status, Json{{"error", message}}});
}

}  // namespace

void install_routes(httplib::Server& http, const Service& service) {
  http.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                            {"Access-Control-Allow-Headers", "Content-Type"},
                            {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});

  http.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) {
    res.status = 204;
  });

  http.Get("/schema", [&service](const httplib::Request& req, httplib::Response& res) {
    if (!req.has_param("dataset")) return send_error(res, 400, "missing query parameter 'dataset'");
    send(res, service.schema(req.get_param_value("dataset")));
  });

  http.Post("/counterfactual", [&service](const httplib::Request& req, httplib::Response& res) {
    send(res, service.counterfactual(req.body));
  });

  http.Get("/pairs", [&service](const httplib::Request& req, httplib::Response& res) {
    for (const char* key : {"dataset", "i", "j"}) {
      if (!req.has_param(key)) {
        return send_error(res, 400, std::string("missing query parameter '") + key + "'");
      }
    }
    std::uint64_t seed = 0;
    if (req.has_param("seed")) {
      try {
        seed = std::stoull(req.get_param_value("seed"));
      } catch (const std::exception&) {
        return send_error(res, 400, "'seed' must be a non-negative integer");
      }
    }
    send(res, service.pairs(req.get_param_value("dataset"), req.get_param_value("i"),
                            req.get_param_value("j"), seed));
  });

  http.set_exception_handler(
      [](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
        try {
          std::rethrow_exception(ep);
        } catch (const std::exception& e) {
          send_error(res, 500, e.what());
        }
      });
}

}  // namespace realcf::server
