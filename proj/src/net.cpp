#include "xri/net.hpp"

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>

#include <deque>
#include <thread>

namespace xri {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;

namespace {

class WsSession : public std::enable_shared_from_this<WsSession> {
 public:
  WsSession(tcp::socket socket, Hub& hub) : ws_(std::move(socket)), hub_(hub) {}

  void run() {
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.text(true);
    ws_.async_accept([self = shared_from_this()](beast::error_code ec) {
      if (ec) return;
      std::weak_ptr<WsSession> weak = self;
      auto executor = self->ws_.get_executor();
      self->id_ = self->hub_.open_session([weak, executor](std::string frame) {
        asio::post(executor, [weak, frame = std::move(frame)]() mutable {
          if (auto s = weak.lock()) s->write(std::move(frame));
        });
      });
      self->open_ = true;
      self->read();
    });
  }

  void close() {
    if (!open_) return;
    open_ = false;
    hub_.close_session(id_);
  }

 private:
  void read() {
    ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) {
        self->close();
        return;
      }
      const std::string text = beast::buffers_to_string(self->buffer_.data());
      self->buffer_.consume(self->buffer_.size());
      self->hub_.on_text(self->id_, text);
      self->read();
    });
  }

  void write(std::string frame) {
    outbox_.push_back(std::move(frame));
    if (outbox_.size() == 1) flush();
  }

  void flush() {
    ws_.async_write(asio::buffer(outbox_.front()), [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) {
        self->close();
        return;
      }
      self->outbox_.pop_front();
      if (!self->outbox_.empty()) self->flush();
    });
  }

  websocket::stream<beast::tcp_stream> ws_;
  Hub& hub_;
  beast::flat_buffer buffer_;
  std::deque<std::string> outbox_;
  std::uint64_t id_ = 0;
  bool open_ = false;
};

class LineSession : public std::enable_shared_from_this<LineSession> {
 public:
  LineSession(tcp::socket socket, Hub& hub) : socket_(std::move(socket)), hub_(hub) {}

  void run() {
    std::weak_ptr<LineSession> weak = shared_from_this();
    auto executor = socket_.get_executor();
    id_ = hub_.open_session([weak, executor](std::string frame) {
      asio::post(executor, [weak, frame = std::move(frame)]() mutable {
        if (auto s = weak.lock()) s->write(std::move(frame) + "\n");
      });
    });
    open_ = true;
    read();
  }

 private:
  void close() {
    if (!open_) return;
    open_ = false;
    hub_.close_session(id_);
    beast::error_code ignored;
    socket_.close(ignored);
  }

  void read() {
    asio::async_read_until(socket_, asio::dynamic_buffer(buffer_), '\n',
                           [self = shared_from_this()](beast::error_code ec, std::size_t n) {
                             if (ec) {
                               self->close();
                               return;
                             }
                             std::string line = self->buffer_.substr(0, n - 1);
                             self->buffer_.erase(0, n);
                             if (!line.empty() && line.back() == '\r') line.pop_back();
                             if (!line.empty()) self->hub_.on_text(self->id_, line);
                             self->read();
                           });
  }

  void write(std::string frame) {
    outbox_.push_back(std::move(frame));
    if (outbox_.size() == 1) flush();
  }

  void flush() {
    asio::async_write(socket_, asio::buffer(outbox_.front()),
                      [self = shared_from_this()](beast::error_code ec, std::size_t) {
                        if (ec) {
                          self->close();
                          return;
                        }
                        self->outbox_.pop_front();
                        if (!self->outbox_.empty()) self->flush();
                      });
  }

  tcp::socket socket_;
  Hub& hub_;
  std::string buffer_;
  std::deque<std::string> outbox_;
  std::uint64_t id_ = 0;
  bool open_ = false;
};

tcp::acceptor listen_on(asio::io_context& io, const std::string& host, int port) {
  const tcp::endpoint ep(asio::ip::make_address(host), static_cast<unsigned short>(port));
  tcp::acceptor acceptor(io);
  beast::error_code ec;
  acceptor.open(ep.protocol(), ec);
  if (!ec) acceptor.set_option(asio::socket_base::reuse_address(true), ec);
  if (!ec) acceptor.bind(ep, ec);
  if (!ec) acceptor.listen(asio::socket_base::max_listen_connections, ec);
  if (ec) throw std::runtime_error("cannot listen on " + host + ":" + std::to_string(port) + ": " + ec.message());
  return acceptor;
}

}  // namespace

struct NetServer::Impl {
  Hub& hub;
  std::string host;
  int ws_port;
  int tcp_port;
  asio::io_context io;
  std::optional<tcp::acceptor> ws_acceptor;
  std::optional<tcp::acceptor> tcp_acceptor;
  std::thread thread;

  Impl(Hub& h, std::string host_, int ws, int tcp_) : hub(h), host(std::move(host_)), ws_port(ws), tcp_port(tcp_) {}

  void accept_ws() {
    ws_acceptor->async_accept(asio::make_strand(io), [this](beast::error_code ec, tcp::socket socket) {
      if (ec) return;
      std::make_shared<WsSession>(std::move(socket), hub)->run();
      accept_ws();
    });
  }

  void accept_tcp() {
    tcp_acceptor->async_accept(asio::make_strand(io), [this](beast::error_code ec, tcp::socket socket) {
      if (ec) return;
      std::make_shared<LineSession>(std::move(socket), hub)->run();
      accept_tcp();
    });
  }
};

NetServer::NetServer(Hub& hub, std::string host, int ws_port, int tcp_port)
    : impl_(std::make_unique<Impl>(hub, std::move(host), ws_port, tcp_port)) {}

NetServer::~NetServer() { stop(); }

void NetServer::start() {
  impl_->ws_acceptor.emplace(listen_on(impl_->io, impl_->host, impl_->ws_port));
  impl_->tcp_acceptor.emplace(listen_on(impl_->io, impl_->host, impl_->tcp_port));
  impl_->ws_port = impl_->ws_acceptor->local_endpoint().port();
  impl_->tcp_port = impl_->tcp_acceptor->local_endpoint().port();
  impl_->accept_ws();
  impl_->accept_tcp();
  impl_->thread = std::thread([this] { impl_->io.run(); });
}

void NetServer::stop() {
  if (!impl_->thread.joinable()) return;
  impl_->io.stop();
  impl_->thread.join();
}

int NetServer::ws_port() const { return impl_->ws_port; }
int NetServer::tcp_port() const { return impl_->tcp_port; }

}  // namespace xri
