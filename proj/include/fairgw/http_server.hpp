#pragma once

// Blocking HTTP server adapter: maps httplib requests onto a single
// http::Request -> http::Response handler and logs one line per request.

#ifndef CPPHTTPLIB_LISTEN_BACKLOG
#define CPPHTTPLIB_LISTEN_BACKLOG 128
#endif
#include <httplib.h>

#include <chrono>
#include <functional>
#include <string>
#include <thread>
#include <utility>

#include "fairgw/error.hpp"
#include "fairgw/http.hpp"

namespace fairgw::http {

enum class Errc { PortInUse, NotBound };

inline std::string_view to_string(Errc e) {
  switch (e) {
    case Errc::PortInUse: return "PortInUse";
    case Errc::NotBound: return "NotBound";
  }
  return "Unknown";
}

using HttpError = Error<Errc>;

struct LogEntry {
  std::string method;
  std::string path;
  int status = 0;
  double duration_ms = 0;
};

inline std::string format_log(const LogEntry& e) {
  char ms[32];
  std::snprintf(ms, sizeof ms, "%.3f", e.duration_ms);
  return e.method + " " + e.path + " " + std::to_string(e.status) + " " + ms + "ms";
}

using Handler = std::function<Response(const Request&)>;
using Logger = std::function<void(const LogEntry&)>;

inline Request from_httplib(const httplib::Request& r) {
  Request out;
  out.method = r.method;
  out.path = r.path;
  for (const auto& [k, v] : r.params) out.add_param(k, v);
  out.body = r.body;
  out.content_type = r.get_header_value("Content-Type");
  return out;
}

class Server {
 public:
  explicit Server(Handler handler, Logger logger = {}) : handler_(std::move(handler)), logger_(std::move(logger)) {
    auto route = [this](const httplib::Request& req, httplib::Response& res) { dispatch(req, res); };
    server_.Get(".*", route);
    server_.Post(".*", route);
    server_.Put(".*", route);
    server_.Delete(".*", route);
    // Plain SO_REUSEADDR: a second server must not share a bound port.
    server_.set_socket_options([](socket_t sock) {
      int yes = 1;
      ::setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const char*>(&yes), sizeof yes);
    });
    server_.set_exception_handler([this](const httplib::Request& req, httplib::Response& res, std::exception_ptr) {
      res.status = 500;
      res.set_content("internal error\n", "text/plain");
      log({req.method, req.path, 500, 0});
    });
  }

  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;
  ~Server() { stop(); }

  /// Binds the listening socket; port 0 picks a free port. Returns the port.
  int bind(const std::string& host, int port) {
    if (port == 0) {
      port_ = server_.bind_to_any_port(host);
      if (port_ < 0) throw HttpError(Errc::PortInUse, "cannot bind " + host);
    } else {
      if (!server_.bind_to_port(host, port))
        throw HttpError(Errc::PortInUse, "cannot bind " + host + ":" + std::to_string(port));
      port_ = port;
    }
    return port_;
  }

  [[nodiscard]] int port() const { return port_; }

  /// Serves until stop(); requires a prior bind().
  void run() {
    if (port_ <= 0) throw HttpError(Errc::NotBound, "server is not bound");
    server_.listen_after_bind();
  }

  /// Serves on a background thread and waits until ready.
  void start() {
    if (port_ <= 0) throw HttpError(Errc::NotBound, "server is not bound");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  void stop() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

 private:
  void dispatch(const httplib::Request& req, httplib::Response& res) {
    const auto t0 = std::chrono::steady_clock::now();
    const Response out = handler_(from_httplib(req));
    res.status = out.status;
    if (req.method != "HEAD") res.set_content(out.body, out.content_type);
    const std::chrono::duration<double, std::milli> dt = std::chrono::steady_clock::now() - t0;
    log({req.method, req.path, out.status, dt.count()});
  }

  void log(const LogEntry& e) const {
    if (logger_) logger_(e);
  }

  Handler handler_;
  Logger logger_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = -1;
};

}  // namespace fairgw::http
