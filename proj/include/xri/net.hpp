#pragma once

// WebSocket and newline-delimited TCP listeners feeding a Hub. One JSON
// frame per WebSocket text message or per line.

#include "xri/hub.hpp"

#include <memory>
#include <string>

namespace xri {

class NetServer {
 public:
  /// Port 0 picks a free port.
  NetServer(Hub& hub, std::string host, int ws_port, int tcp_port);
  ~NetServer();
  NetServer(const NetServer&) = delete;
  NetServer& operator=(const NetServer&) = delete;

  /// Binds both listeners and starts the I/O thread. Throws
  /// std::runtime_error when a port cannot be bound.
  void start();
  void stop();

  int ws_port() const;
  int tcp_port() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace xri
