#pragma once

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include <atomic>
#include <memory>
#include <string>
#include <thread>

#include "gatelab/session.hpp"

namespace gatelab {

namespace net = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = net::ip::tcp;

/// WebSocket JSON service plus GET /health on the same port. Connections are
/// accepted asynchronously and each one is served on its own thread.
class SessionServer {
 public:
  SessionServer(std::shared_ptr<SessionManager> mgr, unsigned short port, const std::string& address = "127.0.0.1")
      : mgr_(std::move(mgr)), acceptor_(ioc_) {
    const tcp::endpoint ep(net::ip::make_address(address), port);
    acceptor_.open(ep.protocol());
    acceptor_.set_option(net::socket_base::reuse_address(true));
    acceptor_.bind(ep);
    acceptor_.listen();
    port_ = acceptor_.local_endpoint().port();
  }

  ~SessionServer() { stop(); }

  [[nodiscard]] unsigned short port() const { return port_; }

  /// Starts accepting on a background thread.
  void start() {
    accept();
    runner_ = std::thread([this] { ioc_.run(); });
  }

  /// Accepts on the calling thread until stop() is called from elsewhere.
  void run() {
    accept();
    ioc_.run();
  }

  void stop() {
    if (stopped_.exchange(true)) return;
    net::post(ioc_, [this] {
      beast::error_code ec;
      acceptor_.close(ec);
    });
    ioc_.stop();
    if (runner_.joinable()) runner_.join();
  }

 private:
  void accept() {
    acceptor_.async_accept([this](beast::error_code ec, tcp::socket sock) {
      if (ec) return;
      std::thread(&SessionServer::serve, mgr_, std::move(sock)).detach();
      accept();
    });
  }

  static void serve(std::shared_ptr<SessionManager> mgr, tcp::socket sock) {
    try {
      beast::flat_buffer buf;
      http::request<http::string_body> req;
      http::read(sock, buf, req);
      if (websocket::is_upgrade(req)) {
        websocket::stream<tcp::socket> ws(std::move(sock));
        ws.accept(req);
        ProtocolHandler handler(mgr);
        for (;;) {
          beast::flat_buffer msg;
          ws.read(msg);
          const auto reply = handler.handle(beast::buffers_to_string(msg.data()));
          ws.text(true);
          ws.write(net::buffer(reply));
        }
      }
      http::response<http::string_body> res;
      res.version(req.version());
      res.set(http::field::content_type, "text/plain");
      if (req.method() == http::verb::get && req.target() == "/health") {
        res.result(http::status::ok);
        res.body() = "ok";
      } else {
        res.result(http::status::not_found);
        res.body() = "not found";
      }
      res.keep_alive(false);
      res.prepare_payload();
      http::write(sock, res);
      beast::error_code ec;
      sock.shutdown(tcp::socket::shutdown_send, ec);
    } catch (const std::exception&) {
      // Client went away or sent garbage; the connection simply ends.
    }
  }

  std::shared_ptr<SessionManager> mgr_;
  net::io_context ioc_;
  tcp::acceptor acceptor_;
  unsigned short port_ = 0;
  std::thread runner_;
  std::atomic<bool> stopped_{false};
};

}  // namespace gatelab
