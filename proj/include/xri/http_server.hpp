#pragma once

// Thin HTTP front for anything exposing `HttpResponse handle(HttpRequest)`:
// the emulators and the hub's device-event webhook.

#include "xri/devices.hpp"

#include <functional>
#include <memory>
#include <string>
#include <thread>

namespace xri {

class HttpFront {
 public:
  using Handler = std::function<HttpResponse(const HttpRequest&)>;

  HttpFront(std::string host, int port, Handler handler);
  ~HttpFront();
  HttpFront(const HttpFront&) = delete;
  HttpFront& operator=(const HttpFront&) = delete;

  /// Binds and starts serving on a background thread. Returns false when
  /// the port cannot be bound.
  bool start();
  void stop();
  int port() const { return port_; }

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  std::string host_;
  int port_;
  std::thread thread_;
};

/// Plug-to-hub push: POST {callback}/events with the event as JSON.
EventSink http_event_sink(std::string callback_base, std::chrono::milliseconds timeout = std::chrono::milliseconds(300));

}  // namespace xri
