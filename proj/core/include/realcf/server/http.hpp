#pragma once

#include <httplib.h>

#include "realcf/server/service.hpp"

namespace realcf::server {

/// Registers GET /schema, POST /counterfactual and GET /pairs with
/// permissive CORS headers. `service` must outlive `http`.
void install_routes(httplib::Server& http, const Service& service);

}  // namespace realcf::server
