#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fairgw {

/// Exception carrying a module-specific error kind.
///
/// Each module declares an `enum class Errc` plus a `to_string(Errc)`
/// overload found by ADL; `what()` is "<Kind>: <message>".
template <class Kind>
class Error : public std::runtime_error {
 public:
  Error(Kind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message),
        kind_(kind),
        message_(message) {}

  [[nodiscard]] Kind kind() const noexcept { return kind_; }
  [[nodiscard]] const std::string& message() const noexcept { return message_; }

 private:
  Kind kind_;
  std::string message_;
};

}  // namespace fairgw
