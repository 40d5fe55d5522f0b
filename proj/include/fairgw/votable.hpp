#pragma once

// VOTable 1.4 (TABLEDATA) and RFC-4180 CSV encodings of query results.

#include <array>
#include <charconv>
#include <cmath>
#include <string>
#include <string_view>

#include "fairgw/adql.hpp"
#include "fairgw/obscore.hpp"

namespace fairgw::votable {

inline constexpr std::string_view kContentType = "application/x-votable+xml";
inline constexpr std::string_view kCsvContentType = "text/csv";

/// Shortest decimal form that parses back to the same double
/// (53000.0 prints as "53000"). Non-finite values use VOTable spellings.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "NaN";
  if (std::isinf(v)) return v > 0 ? "+Inf" : "-Inf";
  std::array<char, 32> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), end);
}

/// Replaces bytes that cannot appear in XML 1.0 text (control characters,
/// malformed UTF-8) with U+FFFD.
inline std::string sanitize_utf8(std::string_view s) {
  static constexpr std::string_view kReplacement = "\xEF\xBF\xBD";
  std::string out;
  out.reserve(s.size());
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    if (c < 0x80) {
      if (c < 0x20 && c != '\t' && c != '\n' && c != '\r')
        out += kReplacement;
      else
        out += static_cast<char>(c);
      ++i;
      continue;
    }
    std::size_t len = 0;
    std::uint32_t cp = 0;
    if ((c & 0xE0) == 0xC0) {
      len = 2;
      cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      len = 3;
      cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      len = 4;
      cp = c & 0x07;
    }
    bool ok = len != 0 && i + len <= s.size();
    for (std::size_t k = 1; ok && k < len; ++k) {
      const auto cc = static_cast<unsigned char>(s[i + k]);
      ok = (cc & 0xC0) == 0x80;
      cp = (cp << 6) | (cc & 0x3F);
    }
    static constexpr std::uint32_t kMin[] = {0, 0, 0x80, 0x800, 0x10000};
    ok = ok && cp >= kMin[len] && cp <= 0x10FFFF && !(cp >= 0xD800 && cp <= 0xDFFF) && cp != 0xFFFE && cp != 0xFFFF;
    if (ok) {
      out.append(s.substr(i, len));
      i += len;
    } else {
      out += kReplacement;
      ++i;
    }
  }
  return out;
}

inline std::string xml_escape(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (char c : sanitize_utf8(s)) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&apos;"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::string_view votable_datatype(obscore::Datatype t) {
  switch (t) {
    case obscore::Datatype::Char: return "char";
    case obscore::Datatype::Int: return "int";
    case obscore::Datatype::Long: return "long";
    case obscore::Datatype::Double: return "double";
  }
  return "char";
}

/// Text of one cell; null is the empty string.
inline std::string cell_text(const obscore::Value& v) {
  if (const auto* i = std::get_if<std::int64_t>(&v)) return std::to_string(*i);
  if (const auto* d = std::get_if<double>(&v)) return format_double(*d);
  if (const auto* s = std::get_if<std::string>(&v)) return *s;
  return {};
}

namespace detail {

inline constexpr std::string_view kHeader =
    "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
    "<VOTABLE version=\"1.4\" xmlns=\"http://www.ivoa.net/xml/VOTable/v1.3\">\n"
    "<RESOURCE type=\"results\">\n";

inline constexpr std::string_view kFooter = "</RESOURCE>\n</VOTABLE>\n";

}  // namespace detail

inline std::string write_votable(const adql::ResultSet& rs) {
  std::string out(detail::kHeader);
  out += "<INFO name=\"QUERY_STATUS\" value=\"OK\"/>\n<TABLE>\n";
  for (std::size_t c : rs.columns) {
    const auto& def = obscore::kSchema[c];
    out += "<FIELD name=\"" + xml_escape(def.name) + "\" datatype=\"" + std::string(votable_datatype(def.type)) + "\"";
    if (def.type == obscore::Datatype::Char) out += " arraysize=\"*\"";
    if (!def.unit.empty()) out += " unit=\"" + xml_escape(def.unit) + "\"";
    if (!def.ucd.empty()) out += " ucd=\"" + xml_escape(def.ucd) + "\"";
    out += "><DESCRIPTION>" + xml_escape(def.description) + "</DESCRIPTION></FIELD>\n";
  }
  out += "<DATA><TABLEDATA>\n";
  for (const auto& row : rs.rows) {
    out += "<TR>";
    for (const auto& v : row) {
      const std::string text = cell_text(v);
      out += text.empty() ? "<TD/>" : "<TD>" + xml_escape(text) + "</TD>";
    }
    out += "</TR>\n";
  }
  out += "</TABLEDATA></DATA>\n</TABLE>\n";
  if (rs.overflow) out += "<INFO name=\"QUERY_STATUS\" value=\"OVERFLOW\"/>\n";
  out += detail::kFooter;
  return out;
}

inline std::string write_votable_error(std::string_view message) {
  std::string out(detail::kHeader);
  out += "<INFO name=\"QUERY_STATUS\" value=\"ERROR\">" + xml_escape(message) + "</INFO>\n";
  out += detail::kFooter;
  return out;
}

inline std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

/// Header line of column names, then one line per row; CRLF line endings.
inline std::string write_csv(const adql::ResultSet& rs) {
  std::string out;
  for (std::size_t i = 0; i < rs.columns.size(); ++i)
    out += (i ? "," : "") + csv_field(obscore::kSchema[rs.columns[i]].name);
  out += "\r\n";
  for (const auto& row : rs.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) out += (i ? "," : "") + csv_field(cell_text(row[i]));
    out += "\r\n";
  }
  return out;
}

}  // namespace fairgw::votable
