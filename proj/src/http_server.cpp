#include "xri/http_server.hpp"

#include <httplib.h>

namespace xri {

struct HttpFront::Impl {
  httplib::Server server;
  Handler handler;
};

HttpFront::HttpFront(std::string host, int port, Handler handler)
    : impl_(std::make_unique<Impl>()), host_(std::move(host)), port_(port) {
  impl_->handler = std::move(handler);
  impl_->server.set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
  });
  auto route = [this](const httplib::Request& req, httplib::Response& res) {
    HttpResponse out = impl_->handler(HttpRequest{req.method, req.path, req.body});
    res.status = out.status;
    res.set_content(out.body, "application/json");
  };
  impl_->server.Get(".*", route);
  impl_->server.Put(".*", route);
  impl_->server.Post(".*", route);
}

HttpFront::~HttpFront() { stop(); }

bool HttpFront::start() {
  if (port_ == 0) {
    port_ = impl_->server.bind_to_any_port(host_);
    if (port_ <= 0) return false;
  } else if (!impl_->server.bind_to_port(host_, port_)) {
    return false;
  }
  thread_ = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return true;
}

void HttpFront::stop() {
  impl_->server.stop();
  if (thread_.joinable()) thread_.join();
}

HttpTransport::HttpTransport(std::string base_url, std::chrono::milliseconds timeout)
    : base_url_(std::move(base_url)), timeout_(timeout) {}

HttpResponse HttpTransport::request(const HttpRequest& req) {
  httplib::Client client(base_url_);
  client.set_connection_timeout(timeout_);
  client.set_read_timeout(timeout_);
  client.set_write_timeout(timeout_);

  httplib::Result res;
  if (req.method == "GET") {
    res = client.Get(req.path);
  } else if (req.method == "PUT") {
    res = client.Put(req.path, req.body, "application/json");
  } else {
    res = client.Post(req.path, req.body, "application/json");
  }
  if (!res) throw DeviceUnavailable(base_url_ + req.path + ": " + httplib::to_string(res.error()));
  return {res->status, res->body};
}

EventSink http_event_sink(std::string callback_base, std::chrono::milliseconds timeout) {
  return [base = std::move(callback_base), timeout](const DeviceEvent& e) {
    HttpTransport transport(base, timeout);
    try {
      return transport.request({"POST", "/events", to_json(e).dump()}).status == 200;
    } catch (const DeviceUnavailable&) {
      return false;
    }
  };
}

}  // namespace xri
