#pragma once

// HTTP/JSON front end for SessionService.
//
//   POST /sessions                    create (201)
//   GET  /sessions                    ?tsid= &phase= &created_after= &created_before= &offset= &limit=
//   GET  /sessions/{id}               handle + pending stimulus (no target)
//   POST /sessions/{id}/response      {"response": "...", "client_timestamp": "..."}
//   POST /sessions/{id}/advance       REORIENTING -> next block
//   GET  /sessions/{id}/live          live document
//   GET  /sessions/{id}/events        text/event-stream of live documents
//   POST /sessions/{id}/abort         {"reason": "..."}
//   GET  /sessions/{id}/record        persisted record, byte for byte
//   GET  /health
//
// With an operator token configured, POST requests need
// "Authorization: Bearer <token>".

#include <cstdint>
#include <memory>
#include <optional>
#include <string>

#include "vibropsi/service.hpp"

namespace vibropsi {

class HttpServer {
 public:
  HttpServer(SessionService& service, std::optional<std::string> token = std::nullopt);
  ~HttpServer();

  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Binds without serving; port 0 picks a free port. Returns the bound port.
  std::uint16_t bind(const std::string& host, std::uint16_t port);
  /// Serves on the calling thread until stop().
  void serve();
  /// Serves on a background thread.
  void start();
  void stop();
  std::uint16_t port() const noexcept { return port_; }

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  std::uint16_t port_ = 0;
};

}  // namespace vibropsi
