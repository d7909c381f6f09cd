#pragma once

#include <atomic>
#include <memory>
#include <string>

#include "dtwin/engine.hpp"

namespace dtwin {

struct ApiReply {
  int status = 200;
  std::string body;  // JSON
};

// Transport-independent handlers for the HTTP API:
//   POST /api/simulate     200, 400 bad JSON, 422 validation, 503 no bundle
//   GET  /api/schema       feature metadata for the input panel
//   GET  /api/health       liveness and request counters
//   GET  /api/model-info   data provenance, model details, limitations
class ApiService {
 public:
  explicit ApiService(std::shared_ptr<const TwinEngine> engine = nullptr) : engine_(std::move(engine)) {}

  ApiReply handle(const std::string& method, const std::string& path, const std::string& body) const;
  ApiReply simulate(const std::string& body) const;
  ApiReply schema() const;
  ApiReply health() const;
  ApiReply model_info() const;

  std::size_t requests() const noexcept { return requests_.load(); }
  std::size_t failures() const noexcept { return failures_.load(); }

 private:
  std::shared_ptr<const TwinEngine> engine_;
  mutable std::atomic<std::size_t> requests_{0};
  mutable std::atomic<std::size_t> failures_{0};
};

class HttpServer {
 public:
  explicit HttpServer(const ApiService& service);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  // port 0 picks a free port; returns the bound port.
  int bind(const std::string& host, int port);
  // Blocks until stop().
  void listen();
  void stop();
  void wait_until_ready() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace dtwin
