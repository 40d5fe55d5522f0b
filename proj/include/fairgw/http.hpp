#pragma once

// Transport-neutral HTTP request/response used by the service handlers.

#include <algorithm>
#include <cctype>
#include <map>
#include <optional>
#include <string>
#include <string_view>

namespace fairgw::http {

inline std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

struct Request {
  std::string method = "GET";
  std::string path = "/";
  std::map<std::string, std::string> params;  // keys lower-cased
  std::string body;
  std::string content_type;

  /// Adds a parameter; the first value of a repeated name wins.
  void add_param(std::string_view name, std::string value) { params.emplace(lower(name), std::move(value)); }

  [[nodiscard]] std::optional<std::string> param(std::string_view name) const {
    auto it = params.find(lower(name));
    if (it == params.end()) return std::nullopt;
    return it->second;
  }
};

struct Response {
  int status = 200;
  std::string content_type = "text/plain";
  std::string body;
};

inline Response text_response(int status, std::string body) {
  return {status, "text/plain; charset=utf-8", std::move(body) + "\n"};
}

}  // namespace fairgw::http
