#include "padtts/service.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iostream>
#include <thread>

#include <httplib.h>

#include "padtts/errors.hpp"

namespace padtts::service {

namespace {

constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

std::string error_body(const std::string& message) {
  return nlohmann::json{{"error", message}}.dump();
}

// Opaque, non-sequential id for correlating a 500 with the server log.
std::string incident_id() {
  static std::atomic<std::uint64_t> counter{0};
  const auto now = static_cast<std::uint64_t>(
      std::chrono::steady_clock::now().time_since_epoch().count());
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(mix64(now ^ mix64(++counter))));
  return buf;
}

double pad_component(const nlohmann::json& style, const char* key) {
  if (!style.contains(key)) throw HttpError(400, std::string("style is missing '") + key + "'");
  const auto& v = style.at(key);
  if (!v.is_number()) throw HttpError(400, std::string("style.") + key + " must be a number");
  const double x = v.get<double>();
  if (!std::isfinite(x) || x < -1.0 || x > 1.0)
    throw HttpError(400, std::string("style.") + key + " = " + v.dump() + " is outside [-1, 1]");
  return x;
}

std::string f64_bytes(const std::vector<double>& values) {
  std::string out(values.size() * 8, '\0');
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint64_t bits;
    std::memcpy(&bits, &values[i], 8);
    for (int b = 0; b < 8; ++b) out[i * 8 + b] = static_cast<char>((bits >> (8 * b)) & 0xFF);
  }
  return out;
}

}  // namespace

void ServiceConfig::validate() const {
  if (checkpoint.empty()) throw ConfigError("service config: checkpoint is required");
  if (port <= 0 || port > 65535) throw ConfigError("service config: port out of range");
  if (griffin_lim_iterations == 0)
    throw ConfigError("service config: griffin_lim_iterations must be >= 1");
}

ServiceConfig ServiceConfig::from_json(const nlohmann::json& j) {
  ServiceConfig c;
  try {
    if (j.contains("checkpoint")) c.checkpoint = j.at("checkpoint").get<std::string>();
    c.model_id = j.value("model_id", c.model_id);
    c.host = j.value("host", c.host);
    c.port = j.value("port", c.port);
    c.griffin_lim_iterations = j.value("griffin_lim_iterations", c.griffin_lim_iterations);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("service config: ") + e.what());
  }
  return c;
}

ServiceConfig ServiceConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  auto c = from_json(j);
  if (!c.checkpoint.empty() && c.checkpoint.is_relative())
    c.checkpoint = path.parent_path() / c.checkpoint;
  return c;
}

std::string base64_encode(const std::string& bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const auto n = (std::uint32_t(std::uint8_t(bytes[i])) << 16) |
                   (std::uint32_t(std::uint8_t(bytes[i + 1])) << 8) | std::uint8_t(bytes[i + 2]);
    out += kAlphabet[(n >> 18) & 63];
    out += kAlphabet[(n >> 12) & 63];
    out += kAlphabet[(n >> 6) & 63];
    out += kAlphabet[n & 63];
  }
  const auto rest = bytes.size() - i;
  if (rest) {
    std::uint32_t n = std::uint32_t(std::uint8_t(bytes[i])) << 16;
    if (rest == 2) n |= std::uint32_t(std::uint8_t(bytes[i + 1])) << 8;
    out += kAlphabet[(n >> 18) & 63];
    out += kAlphabet[(n >> 12) & 63];
    out += rest == 2 ? kAlphabet[(n >> 6) & 63] : '=';
    out += '=';
  }
  return out;
}

std::string base64_decode(const std::string& text) {
  if (text.size() % 4) throw ValueError("base64: length is not a multiple of 4");
  auto value = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  std::string out;
  out.reserve(text.size() / 4 * 3);
  for (std::size_t i = 0; i < text.size(); i += 4) {
    std::uint32_t n = 0;
    int pad = 0;
    for (int k = 0; k < 4; ++k) {
      const char c = text[i + k];
      if (c == '=' && i + 4 == text.size() && k >= 2) {
        ++pad;
        n <<= 6;
        continue;
      }
      const int v = value(c);
      if (v < 0 || pad) throw ValueError("base64: invalid character");
      n = (n << 6) | static_cast<std::uint32_t>(v);
    }
    out += static_cast<char>((n >> 16) & 0xFF);
    if (pad < 2) out += static_cast<char>((n >> 8) & 0xFF);
    if (pad < 1) out += static_cast<char>(n & 0xFF);
  }
  return out;
}

Service::Service(std::shared_ptr<const Model> model, std::string model_id,
                 std::size_t griffin_lim_iterations)
    : model_(std::move(model)),
      id_(std::move(model_id)),
      fx_(model_ ? model_->features() : data::FeatureConfig{}),
      gl_iters_(griffin_lim_iterations) {
  if (!model_) throw ConfigError("service: no model");
  if (gl_iters_ == 0) throw ConfigError("service: griffin_lim_iterations must be >= 1");
}

nlohmann::json Service::health() const { return {{"status", "ok"}, {"model", id_}}; }

nlohmann::json Service::styles() const {
  return {{"model", id_},
          {"labels", style::kEmotionLabels},
          {"pad", model_->projector().current_pad().to_json()}};
}

nlohmann::json Service::model_info() const {
  const auto& cfg = model_->config();
  return {{"id", id_},
          {"preset", cfg.matching_preset()},
          {"injection_type", synth::to_string(cfg.injection_type)},
          {"stage", to_string(model_->stage())},
          {"config_hash", model_->config_hash()},
          {"parameters", model_->params().scalar_count()},
          {"config", cfg.to_json()},
          {"features", model_->features().to_json()}};
}

nlohmann::json Service::synthesize(const nlohmann::json& req) const {
  if (!req.is_object()) throw HttpError(400, "request body must be a JSON object");
  if (req.contains("model")) {
    if (!req["model"].is_string()) throw HttpError(400, "model must be a string");
    if (req["model"].get<std::string>() != id_)
      throw HttpError(404, "unknown model '" + req["model"].get<std::string>() + "'");
  }
  if (!req.contains("text") || !req["text"].is_string())
    throw HttpError(400, "text must be a string");
  const auto text = req["text"].get<std::string>();
  if (text.empty()) throw HttpError(400, "text must not be empty");
  if (!req.contains("style") || !req["style"].is_object())
    throw HttpError(400, "style must be an object with p, a, d or emotion");
  const auto& st = req["style"];
  const bool has_pad = st.contains("p") || st.contains("a") || st.contains("d");
  const bool has_emotion = st.contains("emotion");
  if (has_pad == has_emotion)
    throw HttpError(400, "style needs exactly one of {p, a, d} or emotion");

  StyleSpec spec;
  if (has_emotion) {
    if (!st["emotion"].is_string()) throw HttpError(400, "style.emotion must be a string");
    const auto e = style::try_emotion(st["emotion"].get<std::string>());
    if (!e)
      throw HttpError(422, "unknown emotion '" + st["emotion"].get<std::string>() +
                               "'; valid labels: " + style::valid_labels());
    spec = StyleSpec::of(*e);
  } else {
    spec = StyleSpec::of(style::PadVector{pad_component(st, "p"), pad_component(st, "a"),
                                          pad_component(st, "d")});
  }

  const auto syn = model_->synthesize(text, spec);
  const auto wav = fx_.invert(syn.linear, gl_iters_);
  return {{"model", id_},
          {"mel",
           {{"dtype", "float64"},
            {"byteorder", "little"},
            {"shape", {syn.mel.frames, syn.mel.bins}},
            {"data", base64_encode(f64_bytes(syn.mel.values))}}},
          {"wav", base64_encode(dsp::encode_wav(wav))},
          {"sample_rate", wav.sample_rate},
          {"duration_s", wav.duration_s()},
          {"steps", syn.output.steps},
          {"truncated", syn.output.truncated}};
}

Response Service::handle(const Request& req) const {
  try {
    if (req.path == "/health" && req.method == "GET") return {200, health().dump()};
    if (req.path == "/styles" && req.method == "GET") return {200, styles().dump()};
    if (req.path == "/model" && req.method == "GET") return {200, model_info().dump()};
    if (req.path == "/synthesize" && req.method == "POST") {
      nlohmann::json body;
      try {
        body = nlohmann::json::parse(req.body);
      } catch (const nlohmann::json::exception&) {
        throw HttpError(400, "malformed JSON body");
      }
      return {200, synthesize(body).dump()};
    }
    if (req.path == "/health" || req.path == "/styles" || req.path == "/model" ||
        req.path == "/synthesize")
      return {405, error_body("method " + req.method + " not allowed on " + req.path)};
    return {404, error_body("no route " + req.path)};
  } catch (const HttpError& e) {
    return {e.status(), error_body(e.what())};
  } catch (const ValueError& e) {
    return {400, error_body(e.what())};
  } catch (const std::exception& e) {
    const auto id = incident_id();
    std::cerr << "padtts serve: internal error " << id << ": " << e.what() << "\n";
    return {500, nlohmann::json{{"error", "internal error"}, {"id", id}}.dump()};
  }
}

struct HttpServer::Impl {
  httplib::Server server;
  std::thread thread;
};

HttpServer::HttpServer(const Service& svc) : impl_(std::make_unique<Impl>()) {
  auto& server = impl_->server;
  auto route = [&svc](const httplib::Request& req, httplib::Response& res) {
    const auto out = svc.handle({req.method, req.path, req.body});
    res.status = out.status;
    res.set_content(out.body, out.content_type);
    res.set_header("Access-Control-Allow-Origin", "*");
  };
  // Every method reaches handle() so unsupported ones get a 405.
  for (const char* path : {"/health", "/styles", "/model", "/synthesize"}) {
    server.Get(path, route);
    server.Post(path, route);
    server.Put(path, route);
    server.Delete(path, route);
    server.Patch(path, route);
  }
  server.Options(".*", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.status = 204;
  });
  server.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
    if (res.body.empty()) res.set_content(error_body("no route " + req.path), "application/json");
  });
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  auto& server = impl_->server;
  const int bound = port == 0 ? server.bind_to_any_port(host) : (server.bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw Error("cannot listen on " + host + ":" + std::to_string(port));
  return bound;
}

void HttpServer::run() { impl_->server.listen_after_bind(); }

int HttpServer::start(const std::string& host, int port) {
  const int bound = bind(host, port);
  impl_->thread = std::thread([this] { run(); });
  impl_->server.wait_until_ready();
  return bound;
}

void HttpServer::stop() {
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

void serve(const Service& svc, const std::string& host, int port) {
  HttpServer server(svc);
  const int bound = server.bind(host, port);
  std::cerr << "padtts serve: listening on " << host << ":" << bound << "\n";
  server.run();
}

}  // namespace padtts::service
