#include "dtwin/server.hpp"

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "dtwin/api.hpp"

namespace dtwin {

using nlohmann::json;

namespace {

ApiReply error_reply(int status, const std::string& kind, const std::string& message) {
  return {status, json{{"error", kind}, {"message", message}}.dump()};
}

}  // namespace

ApiReply ApiService::handle(const std::string& method, const std::string& path, const std::string& body) const {
  struct Route {
    const char* path;
    const char* method;
  };
  static const Route routes[] = {
      {"/api/simulate", "POST"}, {"/api/schema", "GET"}, {"/api/health", "GET"}, {"/api/model-info", "GET"}};
  for (const auto& r : routes) {
    if (path != r.path) continue;
    if (method != r.method) return error_reply(405, "method_not_allowed", std::string("use ") + r.method);
    if (path == "/api/simulate") return simulate(body);
    if (path == "/api/schema") return schema();
    if (path == "/api/health") return health();
    return model_info();
  }
  return error_reply(404, "not_found", "no route " + path);
}

ApiReply ApiService::simulate(const std::string& body) const {
  ++requests_;
  if (!engine_) {
    ++failures_;
    return error_reply(503, "unavailable", "no model bundle loaded");
  }
  json request;
  try {
    request = json::parse(body);
  } catch (const json::parse_error& e) {
    ++failures_;
    return error_reply(400, "bad_request", e.what());
  }
  try {
    const SimulationRequest req = request_from_json(request);
    return {200, handle_simulate(*engine_, req).to_json().dump()};
  } catch (const ValidationError& e) {
    ++failures_;
    json diags = json::array();
    for (const auto& d : e.diagnostics()) diags.push_back({{"field", d.field}, {"message", d.message}});
    return {422, json{{"error", "validation"}, {"message", e.what()}, {"diagnostics", diags}}.dump()};
  } catch (const std::exception& e) {
    ++failures_;
    spdlog::error("simulate failed: {}", e.what());
    return error_reply(500, "internal", e.what());
  }
}

ApiReply ApiService::schema() const { return {200, api_schema().dump()}; }

ApiReply ApiService::health() const {
  json j{{"status", engine_ ? "ok" : "no_bundle"},
         {"bundle_loaded", engine_ != nullptr},
         {"requests", requests()},
         {"failures", failures()}};
  if (engine_) j["bundle_digest"] = engine_->digest();
  return {200, j.dump()};
}

ApiReply ApiService::model_info() const {
  if (!engine_) return error_reply(503, "unavailable", "no model bundle loaded");
  return {200, dtwin::model_info(*engine_).dump()};
}

struct HttpServer::Impl {
  httplib::Server server;
};

HttpServer::HttpServer(const ApiService& service) : impl_(std::make_unique<Impl>()) {
  auto& s = impl_->server;
  auto dispatch = [&service](const httplib::Request& req, httplib::Response& res) {
    const ApiReply r = service.handle(req.method, req.path, req.body);
    res.status = r.status;
    res.set_content(r.body, "application/json");
    res.set_header("Access-Control-Allow-Origin", "*");
    spdlog::debug("{} {} -> {}", req.method, req.path, r.status);
  };
  for (const char* path : {"/api/simulate", "/api/schema", "/api/health", "/api/model-info"}) {
    s.Get(path, dispatch);
    s.Post(path, dispatch);
  }
  s.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.status = 204;
  });
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  auto& s = impl_->server;
  const int bound = port == 0 ? s.bind_to_any_port(host) : (s.bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw Error("cannot bind " + host + ":" + std::to_string(port));
  return bound;
}

void HttpServer::listen() { impl_->server.listen_after_bind(); }

void HttpServer::stop() {
  if (impl_) impl_->server.stop();
}

void HttpServer::wait_until_ready() const { impl_->server.wait_until_ready(); }

}  // namespace dtwin
