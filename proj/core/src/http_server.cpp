#include "vibropsi/http_server.hpp"

#include <atomic>
#include <thread>

#include <httplib.h>

#include "vibropsi/error.hpp"

namespace vibropsi {

namespace {

constexpr const char* kIdPattern = "([A-Za-z0-9_.-]+)";

void send(httplib::Response& res, const ApiResponse& api) {
  res.status = api.status;
  res.set_content(api.body, api.content_type);
}

void send_error(httplib::Response& res, int status, const std::string& code, const std::string& message) {
  Json body;
  body["schema_version"] = kApiSchemaVersion;
  body["error"] = {{"code", code}, {"message", message}};
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

std::size_t parse_count(const std::string& v, const char* name) {
  if (v.empty() || v.size() > 9 || v.find_first_not_of("0123456789") != std::string::npos) {
    throw Error(ErrorCode::kInvalidArgument, std::string(name) + " must be a non-negative integer");
  }
  return static_cast<std::size_t>(std::stoul(v));
}

bool terminal_event(const SessionEvent& ev) {
  const std::string phase = ev.live.at("session").at("phase").get<std::string>();
  return phase == "COMPLETE" || phase == "EXCLUDED" || phase == "ABORTED";
}

}  // namespace

struct HttpServer::Impl {
  SessionService& service;
  std::optional<std::string> token;
  httplib::Server server;
  std::thread thread;
  std::atomic<bool> stopping{false};

  Impl(SessionService& s, std::optional<std::string> t) : service(s), token(std::move(t)) {}

  bool authorized(const httplib::Request& req, httplib::Response& res) const {
    if (!token) return true;
    if (req.get_header_value("Authorization") == "Bearer " + *token) return true;
    send_error(res, 401, "UNAUTHORIZED", "missing or wrong operator token");
    return false;
  }

  void routes() {
    const std::string sid = std::string("/sessions/") + kIdPattern;

    server.Get("/health", [this](const httplib::Request&, httplib::Response& res) {
      send(res, service.health());
    });

    server.Post("/sessions", [this](const httplib::Request& req, httplib::Response& res) {
      if (!authorized(req, res)) return;
      send(res, service.create_session(req.body));
    });

    server.Get("/sessions", [this](const httplib::Request& req, httplib::Response& res) {
      ListFilter f;
      try {
        for (const auto& [key, value] : req.params) {
          if (key == "tsid") {
            f.tsid = value;
          } else if (key == "phase") {
            f.phase = phase_from_string(value);
          } else if (key == "created_after") {
            f.created_after = value;
          } else if (key == "created_before") {
            f.created_before = value;
          } else if (key == "offset") {
            f.offset = parse_count(value, "offset");
          } else if (key == "limit") {
            f.limit = std::min<std::size_t>(parse_count(value, "limit"), 500);
          } else {
            throw Error(ErrorCode::kInvalidArgument, "unknown query parameter '" + key + "'");
          }
        }
      } catch (const Error& e) {
        send_error(res, 400, std::string(to_string(e.code())), e.what());
        return;
      }
      send(res, service.list_sessions(f));
    });

    server.Get(sid, [this](const httplib::Request& req, httplib::Response& res) {
      send(res, service.get_session(req.matches[1]));
    });

    server.Post(sid + "/response", [this](const httplib::Request& req, httplib::Response& res) {
      if (!authorized(req, res)) return;
      send(res, service.submit_response(req.matches[1], req.body));
    });

    server.Post(sid + "/advance", [this](const httplib::Request& req, httplib::Response& res) {
      if (!authorized(req, res)) return;
      send(res, service.advance(req.matches[1]));
    });

    server.Get(sid + "/live", [this](const httplib::Request& req, httplib::Response& res) {
      send(res, service.live_state(req.matches[1]));
    });

    server.Post(sid + "/abort", [this](const httplib::Request& req, httplib::Response& res) {
      if (!authorized(req, res)) return;
      send(res, service.abort(req.matches[1], req.body));
    });

    server.Get(sid + "/record", [this](const httplib::Request& req, httplib::Response& res) {
      send(res, service.record(req.matches[1]));
    });

    server.Get(sid + "/events", [this](const httplib::Request& req, httplib::Response& res) {
      const std::string id = req.matches[1];
      const ApiResponse probe = service.get_session(id);
      if (probe.status != 200) {
        send(res, probe);
        return;
      }
      auto last = std::make_shared<std::uint64_t>(0);
      if (req.has_header("Last-Event-ID")) {
        try {
          *last = std::stoull(req.get_header_value("Last-Event-ID"));
        } catch (const std::exception&) {
          *last = 0;
        }
      }
      res.set_header("Cache-Control", "no-cache");
      res.set_chunked_content_provider(
          "text/event-stream", [this, id, last](std::size_t, httplib::DataSink& sink) {
            if (stopping) {
              sink.done();
              return true;
            }
            std::optional<SessionEvent> ev;
            try {
              ev = service.wait_event(id, *last, 1000);
            } catch (const Error&) {
              sink.done();
              return true;
            }
            std::string chunk;
            if (ev) {
              *last = ev->seq;
              chunk = "id: " + std::to_string(ev->seq) + "\nevent: " + ev->type +
                      "\ndata: " + ev->live.dump() + "\n\n";
            } else {
              chunk = ": keepalive\n\n";
            }
            if (!sink.write(chunk.data(), chunk.size())) return false;
            if (ev && terminal_event(*ev)) sink.done();
            return true;
          });
    });
  }
};

HttpServer::HttpServer(SessionService& service, std::optional<std::string> token)
    : impl_(std::make_unique<Impl>(service, std::move(token))) {
  impl_->routes();
}

HttpServer::~HttpServer() { stop(); }

std::uint16_t HttpServer::bind(const std::string& host, std::uint16_t port) {
  int bound = -1;
  if (port == 0) {
    bound = impl_->server.bind_to_any_port(host);
  } else {
    bound = impl_->server.bind_to_port(host, port) ? port : -1;
  }
  if (bound <= 0) {
    throw Error(ErrorCode::kIo, "cannot bind " + host + ":" + std::to_string(port));
  }
  port_ = static_cast<std::uint16_t>(bound);
  return port_;
}

void HttpServer::serve() { impl_->server.listen_after_bind(); }

void HttpServer::start() {
  impl_->thread = std::thread([this] { serve(); });
  impl_->server.wait_until_ready();
}

void HttpServer::stop() {
  if (!impl_) return;
  impl_->stopping = true;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace vibropsi
