#pragma once

// TAP sync endpoint, VOSI resources, DL3 file access and the VO registry
// record, over the transport-neutral http::Request/Response.

#include <charconv>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <utility>

#include "fairgw/adql.hpp"
#include "fairgw/error.hpp"
#include "fairgw/http.hpp"
#include "fairgw/obscore.hpp"
#include "fairgw/votable.hpp"

namespace fairgw::tap {

enum class Errc { MissingParam, BadRequest, BadLang, BadFormat, BadMaxrec, ParseError, EvaluationError, InvalidConfig };

inline std::string_view to_string(Errc e) {
  switch (e) {
    case Errc::MissingParam: return "MissingParam";
    case Errc::BadRequest: return "BadRequest";
    case Errc::BadLang: return "BadLang";
    case Errc::BadFormat: return "BadFormat";
    case Errc::BadMaxrec: return "BadMaxrec";
    case Errc::ParseError: return "ParseError";
    case Errc::EvaluationError: return "EvaluationError";
    case Errc::InvalidConfig: return "InvalidConfig";
  }
  return "Unknown";
}

using TapError = Error<Errc>;

inline constexpr std::size_t kDefaultMaxrec = 10000;

enum class Format { VOTable, Csv };

/// Validated /sync parameters.
struct SyncRequest {
  std::string query;
  Format format = Format::VOTable;
  std::optional<std::size_t> maxrec;
};

inline SyncRequest parse_sync_request(const http::Request& req) {
  const auto request = req.param("REQUEST");
  if (!request) throw TapError(Errc::MissingParam, "REQUEST");
  if (http::lower(*request) != "doquery") throw TapError(Errc::BadRequest, "REQUEST must be doQuery, got " + *request);
  const auto lang = req.param("LANG");
  if (!lang) throw TapError(Errc::MissingParam, "LANG");
  const std::string l = http::lower(*lang);
  if (l != "adql" && l != "adql-2.0" && l != "adql-2.1") throw TapError(Errc::BadLang, "unsupported language " + *lang);
  const auto query = req.param("QUERY");
  if (!query) throw TapError(Errc::MissingParam, "QUERY");

  SyncRequest out;
  out.query = *query;
  auto format = req.param("RESPONSEFORMAT");
  if (!format) format = req.param("FORMAT");
  if (format) {
    const std::string f = http::lower(*format);
    if (f == "votable" || f == "application/x-votable+xml" || f == "text/xml" || f == "votable/td")
      out.format = Format::VOTable;
    else if (f == "csv" || f == "text/csv")
      out.format = Format::Csv;
    else
      throw TapError(Errc::BadFormat, "unsupported format " + *format);
  }
  if (const auto maxrec = req.param("MAXREC")) {
    std::size_t v = 0;
    auto [p, ec] = std::from_chars(maxrec->data(), maxrec->data() + maxrec->size(), v);
    if (maxrec->empty() || ec != std::errc{} || p != maxrec->data() + maxrec->size())
      throw TapError(Errc::BadMaxrec, "MAXREC must be a non-negative integer, got " + *maxrec);
    out.maxrec = v;
  }
  return out;
}

struct ServiceConfig {
  std::string base_url = "http://localhost:8080";
  std::size_t default_maxrec = kDefaultMaxrec;
  std::filesystem::path data_dir = "data";
};

struct RegistryConfig {
  std::string authority;
  std::string title;
  std::string base_url;
};

namespace detail {

inline constexpr std::string_view kXmlDecl = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";

/// Path component of a URL ("http://h:80/tap/" -> "/tap"), without trailing slash.
inline std::string base_path(std::string_view url) {
  auto scheme = url.find("://");
  std::string_view rest = scheme == std::string_view::npos ? url : url.substr(scheme + 3);
  auto slash = rest.find('/');
  if (slash == std::string_view::npos) return {};
  std::string path(rest.substr(slash));
  while (!path.empty() && path.back() == '/') path.pop_back();
  return path;
}

inline std::string trim_slash(std::string s) {
  while (!s.empty() && s.back() == '/') s.pop_back();
  return s;
}

inline bool safe_file_stem(std::string_view s) {
  if (s.empty() || s.front() == '.') return false;
  return std::all_of(s.begin(), s.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.';
  });
}

}  // namespace detail

inline std::string availability_xml() {
  return std::string(detail::kXmlDecl) +
         "<availability xmlns=\"http://www.ivoa.net/xml/VOSIAvailability/v1.0\">\n"
         "  <available>true</available>\n"
         "</availability>\n";
}

inline std::string capabilities_xml(const ServiceConfig& c) {
  using votable::xml_escape;
  const std::string base = xml_escape(detail::trim_slash(c.base_url));
  auto vosi = [&](std::string_view what) {
    return "  <capability standardID=\"ivo://ivoa.net/std/VOSI#" + std::string(what) +
           "\">\n    <interface xsi:type=\"vs:ParamHTTP\">\n      <accessURL use=\"full\">" + base + "/" +
           std::string(what) + "</accessURL>\n    </interface>\n  </capability>\n";
  };
  return std::string(detail::kXmlDecl) +
         "<vosi:capabilities xmlns:vosi=\"http://www.ivoa.net/xml/VOSICapabilities/v1.0\"\n"
         "    xmlns:xsi=\"http://www.w3.org/2001/XMLSchema-instance\"\n"
         "    xmlns:vs=\"http://www.ivoa.net/xml/VODataService/v1.1\"\n"
         "    xmlns:tr=\"http://www.ivoa.net/xml/TAPRegExt/v1.0\">\n"
         "  <capability standardID=\"ivo://ivoa.net/std/TAP\" xsi:type=\"tr:TableAccess\">\n"
         "    <interface xsi:type=\"vs:ParamHTTP\" role=\"std\">\n"
         "      <accessURL use=\"base\">" + base + "</accessURL>\n"
         "    </interface>\n"
         "    <interface xsi:type=\"vs:ParamHTTP\">\n"
         "      <accessURL use=\"full\">" + base + "/sync</accessURL>\n"
         "    </interface>\n"
         "    <language>\n"
         "      <name>ADQL</name>\n"
         "      <version ivo-id=\"ivo://ivoa.net/std/ADQL#v2.0\">2.0</version>\n"
         "      <description>Subset: SELECT [TOP n] columns FROM ivoa.obscore [WHERE ...] [ORDER BY ...] "
         "with CONTAINS/POINT/CIRCLE in ICRS; synchronous queries only</description>\n"
         "    </language>\n"
         "    <outputFormat>\n      <mime>application/x-votable+xml</mime>\n      <alias>votable</alias>\n"
         "    </outputFormat>\n"
         "    <outputFormat>\n      <mime>text/csv</mime>\n      <alias>csv</alias>\n    </outputFormat>\n"
         "    <outputLimit>\n      <default unit=\"row\">" + std::to_string(c.default_maxrec) +
         "</default>\n    </outputLimit>\n"
         "  </capability>\n" +
         vosi("availability") + vosi("capabilities") + vosi("tables") + "</vosi:capabilities>\n";
}

inline std::string tables_xml() {
  using votable::xml_escape;
  std::string out = std::string(detail::kXmlDecl) +
                    "<vosi:tableset xmlns:vosi=\"http://www.ivoa.net/xml/VOSITables/v1.0\"\n"
                    "    xmlns:xsi=\"http://www.w3.org/2001/XMLSchema-instance\"\n"
                    "    xmlns:vs=\"http://www.ivoa.net/xml/VODataService/v1.1\">\n"
                    "  <schema>\n    <name>ivoa</name>\n"
                    "    <table type=\"table\">\n      <name>" + std::string(obscore::kTableName) + "</name>\n"
                    "      <description>ObsCore metadata of the DL3 observations</description>\n";
  for (const auto& col : obscore::kSchema) {
    out += "      <column>\n        <name>" + xml_escape(col.name) + "</name>\n        <description>" +
           xml_escape(col.description) + "</description>\n";
    if (!col.unit.empty()) out += "        <unit>" + xml_escape(col.unit) + "</unit>\n";
    if (!col.ucd.empty()) out += "        <ucd>" + xml_escape(col.ucd) + "</ucd>\n";
    out += "        <dataType xsi:type=\"vs:VOTableType\"";
    if (col.type == obscore::Datatype::Char) out += " arraysize=\"*\"";
    out += ">" + std::string(votable::votable_datatype(col.type)) + "</dataType>\n      </column>\n";
  }
  out += "    </table>\n  </schema>\n</vosi:tableset>\n";
  return out;
}

/// Minimal VOResource record declaring the TAP service.
inline std::string registry_record(const RegistryConfig& c) {
  using votable::xml_escape;
  auto bad_authority = [](std::string_view a) {
    return a.empty() || a.find_first_of("/#? \t\r\n") != std::string_view::npos;
  };
  if (bad_authority(c.authority)) throw TapError(Errc::InvalidConfig, "authority must be a non-empty host-like name");
  if (c.title.empty()) throw TapError(Errc::InvalidConfig, "title must not be empty");
  if (c.base_url.empty()) throw TapError(Errc::InvalidConfig, "base URL must not be empty");
  const std::string base = xml_escape(detail::trim_slash(c.base_url));
  return std::string(detail::kXmlDecl) +
         "<ri:Resource xmlns:ri=\"http://www.ivoa.net/xml/RegistryInterface/v1.0\"\n"
         "    xmlns:xsi=\"http://www.w3.org/2001/XMLSchema-instance\"\n"
         "    xmlns:vs=\"http://www.ivoa.net/xml/VODataService/v1.1\"\n"
         "    xmlns:tr=\"http://www.ivoa.net/xml/TAPRegExt/v1.0\"\n"
         "    xsi:type=\"vs:CatalogService\" status=\"active\">\n"
         "  <title>" + xml_escape(c.title) + "</title>\n"
         "  <identifier>ivo://" + xml_escape(c.authority) + "/tap</identifier>\n"
         "  <curation>\n    <publisher>" + xml_escape(c.authority) + "</publisher>\n  </curation>\n"
         "  <content>\n    <subject>gamma-ray astronomy</subject>\n"
         "    <description>ObsCore table of very-high-energy gamma-ray DL3 observations</description>\n"
         "    <referenceURL>" + base + "</referenceURL>\n  </content>\n"
         "  <capability standardID=\"ivo://ivoa.net/std/TAP\" xsi:type=\"tr:TableAccess\">\n"
         "    <interface xsi:type=\"vs:ParamHTTP\" role=\"std\">\n"
         "      <accessURL use=\"base\">" + base + "/sync</accessURL>\n"
         "    </interface>\n  </capability>\n"
         "</ri:Resource>\n";
}

/// Read-only TAP service over a catalog holder. Each request works on one
/// catalog snapshot.
class TapService {
 public:
  TapService(const obscore::CatalogHolder& catalog, ServiceConfig config)
      : catalog_(catalog), config_(std::move(config)), base_path_(detail::base_path(config_.base_url)) {}

  [[nodiscard]] const ServiceConfig& config() const { return config_; }

  /// Path relative to the service base, or nullopt if outside it.
  [[nodiscard]] std::optional<std::string> relative_path(std::string_view path) const {
    if (base_path_.empty()) return std::string(path);
    if (path.substr(0, base_path_.size()) != base_path_) return std::nullopt;
    std::string rest(path.substr(base_path_.size()));
    if (!rest.empty() && rest.front() != '/') return std::nullopt;
    return rest.empty() ? "/" : rest;
  }

  [[nodiscard]] http::Response handle(const http::Request& req) const {
    const auto rel = relative_path(req.path);
    if (!rel) return http::text_response(404, "not found: " + req.path);
    const std::string& p = *rel;
    const bool get = req.method == "GET" || req.method == "HEAD";
    if (p == "/sync") {
      if (!get && req.method != "POST") return http::text_response(405, "method not allowed");
      return sync(req);
    }
    if (p == "/async" || p.rfind("/async/", 0) == 0)
      return {501, std::string(votable::kContentType),
              votable::write_votable_error("asynchronous queries are not supported; use /sync")};
    if (p == "/availability" || p == "/capabilities" || p == "/tables") {
      if (!get) return http::text_response(405, "method not allowed");
      const std::string body =
          p == "/availability" ? availability_xml() : p == "/capabilities" ? capabilities_xml(config_) : tables_xml();
      return {200, "text/xml; charset=utf-8", body};
    }
    if (p.rfind("/data/", 0) == 0) {
      if (!get) return http::text_response(405, "method not allowed");
      return data_file(p.substr(6));
    }
    return http::text_response(404, "not found: " + req.path);
  }

  [[nodiscard]] http::Response sync(const http::Request& req) const {
    auto error = [](std::string_view msg) {
      return http::Response{200, std::string(votable::kContentType), votable::write_votable_error(msg)};
    };
    SyncRequest sr;
    try {
      sr = parse_sync_request(req);
    } catch (const TapError& e) {
      return error(e.what());
    }
    adql::Query query;
    try {
      query = adql::parse(sr.query);
    } catch (const adql::AdqlError& e) {
      return error("ParseError: " + std::string(e.what()));
    }
    try {
      const auto snapshot = catalog_.snapshot();
      const auto rs = adql::evaluate(query, *snapshot, sr.maxrec.value_or(config_.default_maxrec));
      if (sr.format == Format::Csv) return {200, "text/csv; charset=utf-8", votable::write_csv(rs)};
      return {200, std::string(votable::kContentType), votable::write_votable(rs)};
    } catch (const adql::AdqlError& e) {
      return error("EvaluationError: " + std::string(e.what()));
    }
  }

 private:
  [[nodiscard]] http::Response data_file(std::string_view name) const {
    constexpr std::string_view ext = ".fits";
    if (name.size() <= ext.size() || name.substr(name.size() - ext.size()) != ext)
      return http::text_response(404, "not found");
    const std::string_view obs_id = name.substr(0, name.size() - ext.size());
    if (!detail::safe_file_stem(obs_id) || !catalog_.snapshot()->find_obs_id(obs_id))
      return http::text_response(404, "unknown observation " + std::string(obs_id));
    std::ifstream in(config_.data_dir / (std::string(obs_id) + std::string(ext)), std::ios::binary);
    if (!in) return http::text_response(404, "data file missing for " + std::string(obs_id));
    std::string body{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    return {200, "application/fits", std::move(body)};
  }

  const obscore::CatalogHolder& catalog_;
  ServiceConfig config_;
  std::string base_path_;
};

}  // namespace fairgw::tap
