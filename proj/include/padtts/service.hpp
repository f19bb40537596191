#pragma once

// HTTP face of a loaded model: /health, /styles, /synthesize, /model.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>

#include <nlohmann/json.hpp>

#include "padtts/data.hpp"
#include "padtts/model.hpp"

namespace padtts::service {

struct ServiceConfig {
  std::filesystem::path checkpoint;
  std::string model_id;  // defaults to the checkpoint file stem
  std::string host = "127.0.0.1";
  int port = 8080;
  std::size_t griffin_lim_iterations = 32;

  void validate() const;
  static ServiceConfig from_json(const nlohmann::json& j);
  static ServiceConfig load(const std::filesystem::path& path);
};

struct Request {
  std::string method;
  std::string path;
  std::string body;
};

struct Response {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";

  nlohmann::json json() const { return nlohmann::json::parse(body); }
};

// Immutable after construction; handle() may run concurrently.
class Service {
 public:
  Service(std::shared_ptr<const Model> model, std::string model_id,
          std::size_t griffin_lim_iterations = 32);

  Response handle(const Request& req) const;

  const Model& model() const { return *model_; }
  const std::string& model_id() const { return id_; }

  nlohmann::json health() const;
  nlohmann::json styles() const;
  nlohmann::json model_info() const;
  nlohmann::json synthesize(const nlohmann::json& request) const;

 private:
  std::shared_ptr<const Model> model_;
  std::string id_;
  data::FeatureExtractor fx_;
  std::size_t gl_iters_;
};

// Error raised while decoding a request; carries the HTTP status.
class HttpError : public std::runtime_error {
 public:
  HttpError(int status, const std::string& what) : std::runtime_error(what), status_(status) {}
  int status() const { return status_; }

 private:
  int status_;
};

std::string base64_encode(const std::string& bytes);
std::string base64_decode(const std::string& text);

// HTTP server over a Service. Every method on a known path is routed to
// Service::handle; OPTIONS answers CORS preflight.
class HttpServer {
 public:
  explicit HttpServer(const Service& svc);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  // Port 0 picks a free port; returns the bound port.
  int bind(const std::string& host, int port);
  // Blocks until stop().
  void run();
  // bind() then run() on a background thread.
  int start(const std::string& host, int port);
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Blocks serving on host:port until the process is stopped.
void serve(const Service& svc, const std::string& host, int port);

}  // namespace padtts::service
