#pragma once

// Gateway composition: configuration, file ingestion, the HTTP service
// (TAP endpoints plus POST {base}/run) and the command implementations used
// by the command-line front end. Commands return exit codes:
// 0 ok, 1 data error, 2 usage or parse error.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fairgw/adql.hpp"
#include "fairgw/dl3.hpp"
#include "fairgw/error.hpp"
#include "fairgw/http.hpp"
#include "fairgw/io.hpp"
#include "fairgw/obscore.hpp"
#include "fairgw/processing.hpp"
#include "fairgw/provenance.hpp"
#include "fairgw/tap.hpp"
#include "fairgw/votable.hpp"

namespace fairgw::gw {

enum class Errc { InvalidConfig, BadRequest };

inline std::string_view to_string(Errc e) {
  switch (e) {
    case Errc::InvalidConfig: return "InvalidConfig";
    case Errc::BadRequest: return "BadRequest";
  }
  return "Unknown";
}

using GatewayError = Error<Errc>;

inline constexpr int kExitOk = 0;
inline constexpr int kExitData = 1;
inline constexpr int kExitUsage = 2;

// ---------------------------------------------------------------------------
// Configuration

struct Config {
  std::filesystem::path catalog_path = "catalog.jsonl";
  std::filesystem::path store_path = "provenance.json";
  std::filesystem::path data_dir = "data";
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string base_url = "http://localhost:8080/tap";
  std::string authority = "hess-dr.obspm.fr";
  std::string collection = "hess-dl3-dr1";
  std::string title = "H.E.S.S. DL3 public data release";
  std::string facility = "H.E.S.S.";
  std::string instrument = "H.E.S.S.";
  double e_min_tev = 0.1;
  double e_max_tev = 100.0;
  double fov_deg = 5.0;
  std::size_t default_maxrec = tap::kDefaultMaxrec;
};

inline void validate(const Config& c) {
  auto bad = [](const std::string& m) { throw GatewayError(Errc::InvalidConfig, m); };
  if (c.catalog_path.empty() || c.store_path.empty() || c.data_dir.empty()) bad("paths must not be empty");
  if (c.port < 1 || c.port > 65535) bad("port must be in [1, 65535]");
  if (!(c.e_min_tev > 0 && c.e_min_tev < c.e_max_tev)) bad("energy range must satisfy 0 < e_min < e_max");
  if (!(c.fov_deg > 0)) bad("field of view must be positive");
  if (c.base_url.empty()) bad("base_url must not be empty");
  if (c.authority.empty() || c.collection.empty()) bad("authority and collection must not be empty");
}

/// Reads a JSON object; unknown members are rejected so typos surface.
inline Config parse_config(std::string_view text, Config c = {}) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw GatewayError(Errc::InvalidConfig, std::string("config is not JSON: ") + e.what());
  }
  if (!j.is_object()) throw GatewayError(Errc::InvalidConfig, "config must be a JSON object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "catalog_path") c.catalog_path = v.get<std::string>();
      else if (key == "store_path") c.store_path = v.get<std::string>();
      else if (key == "data_dir") c.data_dir = v.get<std::string>();
      else if (key == "host") c.host = v.get<std::string>();
      else if (key == "port") c.port = v.get<int>();
      else if (key == "base_url") c.base_url = v.get<std::string>();
      else if (key == "authority") c.authority = v.get<std::string>();
      else if (key == "collection") c.collection = v.get<std::string>();
      else if (key == "title") c.title = v.get<std::string>();
      else if (key == "facility") c.facility = v.get<std::string>();
      else if (key == "instrument") c.instrument = v.get<std::string>();
      else if (key == "e_min") c.e_min_tev = v.get<double>();
      else if (key == "e_max") c.e_max_tev = v.get<double>();
      else if (key == "fov") c.fov_deg = v.get<double>();
      else if (key == "default_maxrec") c.default_maxrec = v.get<std::size_t>();
      else throw GatewayError(Errc::InvalidConfig, "unknown config member '" + key + "'");
    }
  } catch (const nlohmann::json::type_error& e) {
    throw GatewayError(Errc::InvalidConfig, std::string("config member has the wrong type: ") + e.what());
  }
  return c;
}

/// Config from `path`, else from $GATEWAY_CONFIG, else defaults. An
/// explicitly named file must exist.
inline Config load_config(const std::optional<std::filesystem::path>& path) {
  std::optional<std::filesystem::path> p = path;
  if (!p)
    if (const char* env = std::getenv("GATEWAY_CONFIG"); env && *env) p = env;
  if (!p) return {};
  if (!std::filesystem::exists(*p)) throw GatewayError(Errc::InvalidConfig, "config file not found: " + p->string());
  return parse_config(io::read_text(*p));
}

inline obscore::Config obscore_config(const Config& c) {
  obscore::Config o;
  o.collection = c.collection;
  o.authority = c.authority;
  o.access_base_url = tap::detail::trim_slash(c.base_url) + "/data";
  o.e_min_tev = c.e_min_tev;
  o.e_max_tev = c.e_max_tev;
  o.fov_deg = c.fov_deg;
  o.facility = c.facility;
  o.instrument = c.instrument;
  return o;
}

/// Opens the workspace described by `c`, loading persisted state.
inline void open_workspace(proc::Workspace& ws, const Config& c, const proc::Registry& registry) {
  ws.catalog_path = c.catalog_path;
  ws.store_path = c.store_path;
  ws.data_dir = c.data_dir;
  ws.obscore = obscore_config(c);
  ws.catalog.replace(obscore::load_catalog_file(c.catalog_path));
  ws.store = prov::load_store(c.store_path);
  proc::register_descriptions(registry, ws.store);
}

inline void persist(const proc::Workspace& ws) {
  if (!ws.catalog_path.empty()) obscore::save_catalog_file(ws.catalog_path, *ws.catalog.snapshot());
  if (!ws.store_path.empty()) prov::save_store(ws.store_path, ws.store);
}

/// Re-reads catalog and store from disk and publishes them atomically.
inline void reload(proc::Workspace& ws) {
  std::lock_guard lock(ws.commit_mutex);
  auto catalog = obscore::load_catalog_file(ws.catalog_path);
  auto graph = prov::load_store(ws.store_path).snapshot();
  ws.store.replace(std::move(graph));
  ws.catalog.replace(std::move(catalog));
}

// ---------------------------------------------------------------------------
// Ingestion

struct IngestResult {
  std::string obs_id;
  std::vector<dl3::Finding> warnings;
};

/// Parses, validates and catalogs one DL3 file, copies it into the data
/// directory and lifts any embedded provenance into the store. Does not
/// persist; call persist() afterwards.
inline IngestResult ingest_file(proc::Workspace& ws, const std::filesystem::path& path) {
  const auto bytes = io::read_bytes(path);
  const auto obs = dl3::read_dl3_bytes(bytes);
  if (!tap::detail::safe_file_stem(obs.obs_id))
    throw GatewayError(Errc::BadRequest, "OBS_ID '" + obs.obs_id + "' cannot be used as a file name");
  IngestResult result{obs.obs_id, {}};
  for (const auto& f : dl3::validate_dl3(obs))
    if (f.severity == dl3::Severity::Warning) result.warnings.push_back(f);

  auto record = obscore::to_obscore(obs, ws.obscore, static_cast<std::int64_t>((bytes.size() + 1023) / 1024));
  const prov::Graph fragment = prov::extract_on_top(obs.extra_cards);

  std::lock_guard lock(ws.commit_mutex);
  const auto target = ws.data_file(obs.obs_id);
  std::filesystem::create_directories(ws.data_dir);
  std::error_code ec;
  if (!std::filesystem::equivalent(path, target, ec)) io::write_atomic(target, std::span<const std::uint8_t>(bytes));
  if (fragment.empty()) {
    prov::Entity root{obs.obs_id, obs.obs_id, target.string(), std::nullopt, std::nullopt, {}};
    const bool known = ws.store.read([&](const prov::Graph& g) { return g.entities.contains(obs.obs_id); });
    if (!known) ws.store.add_entity(std::move(root));
  } else {
    ws.store.merge(fragment);
  }
  ws.catalog.update([&](obscore::Catalog& c) { c.upsert(std::move(record)); });
  return result;
}

// ---------------------------------------------------------------------------
// HTTP service

/// TAP endpoints plus POST {base}/run.
class Service {
 public:
  Service(proc::Workspace& ws, const proc::Registry& registry, const Config& config)
      : ws_(ws),
        registry_(registry),
        tap_(ws.catalog, tap::ServiceConfig{config.base_url, config.default_maxrec, config.data_dir}) {}

  [[nodiscard]] http::Response handle(const http::Request& req) {
    const auto rel = tap_.relative_path(req.path);
    if (rel && *rel == "/run") {
      if (req.method != "POST") return http::text_response(405, "method not allowed");
      return run(req);
    }
    return tap_.handle(req);
  }

 private:
  http::Response run(const http::Request& req) {
    proc::RunRequest rr;
    try {
      rr = parse_run_request(req.body);
    } catch (const GatewayError& e) {
      return http::text_response(400, e.what());
    }
    try {
      const auto out = proc::run_activity(registry_, ws_, rr);
      nlohmann::ordered_json j;
      j["activity_id"] = out.activity_id;
      j["outputs"] = out.outputs;
      return {200, "application/json", j.dump() + "\n"};
    } catch (const proc::ProcError& e) {
      const bool missing = e.kind() == proc::Errc::UnknownActivity || e.kind() == proc::Errc::UnknownEntity;
      return http::text_response(missing ? 404 : 400, e.what());
    } catch (const prov::ProvError& e) {
      return http::text_response(400, e.what());
    } catch (const std::exception& e) {
      return http::text_response(500, e.what());
    }
  }

 public:
  /// {"activity": s, "params": {k: s|number}, "inputs": [s], "agent": s, "workflow": s}
  static proc::RunRequest parse_run_request(std::string_view body) {
    auto bad = [](const std::string& m) -> GatewayError { return GatewayError(Errc::BadRequest, m); };
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(body);
    } catch (const nlohmann::json::parse_error&) {
      throw bad("body must be a JSON object");
    }
    if (!j.is_object()) throw bad("body must be a JSON object");
    proc::RunRequest rr;
    auto a = j.find("activity");
    if (a == j.end() || !a->is_string()) throw bad("'activity' must be a string");
    rr.activity = a->get<std::string>();
    if (auto p = j.find("params"); p != j.end()) {
      if (!p->is_object()) throw bad("'params' must be an object");
      for (const auto& [k, v] : p->items()) {
        if (v.is_string()) rr.params[k] = v.get<std::string>();
        else if (v.is_number()) rr.params[k] = v.dump();
        else throw bad("parameter '" + k + "' must be a string or number");
      }
    }
    auto in = j.find("inputs");
    if (in == j.end() || !in->is_array()) throw bad("'inputs' must be an array of entity ids");
    for (const auto& v : *in) {
      if (!v.is_string()) throw bad("'inputs' must be an array of entity ids");
      rr.inputs.push_back(v.get<std::string>());
    }
    if (auto ag = j.find("agent"); ag != j.end()) {
      if (!ag->is_string() || ag->get<std::string>().empty()) throw bad("'agent' must be a non-empty string");
      rr.agent = ag->get<std::string>();
    }
    if (auto wf = j.find("workflow"); wf != j.end()) {
      if (!wf->is_string()) throw bad("'workflow' must be a string");
      rr.workflow = wf->get<std::string>();
    }
    for (const auto& [k, v] : j.items())
      if (k != "activity" && k != "params" && k != "inputs" && k != "agent" && k != "workflow")
        throw bad("unknown member '" + k + "'");
    return rr;
  }

 private:
  proc::Workspace& ws_;
  const proc::Registry& registry_;
  tap::TapService tap_;
};

// ---------------------------------------------------------------------------
// Commands

inline int cmd_ingest(proc::Workspace& ws, const std::vector<std::filesystem::path>& files, std::ostream& out) {
  int failures = 0;
  for (const auto& f : files) {
    try {
      const auto r = ingest_file(ws, f);
      out << "OK " << f.string() << " obs_id=" << r.obs_id;
      if (!r.warnings.empty()) out << " warnings=" << r.warnings.size();
      out << "\n";
    } catch (const std::exception& e) {
      ++failures;
      out << "FAIL " << f.string() << ": " << e.what() << "\n";
    }
  }
  persist(ws);
  return failures ? kExitData : kExitOk;
}

inline int cmd_validate(const std::filesystem::path& file, std::ostream& out) {
  dl3::Observation obs;
  try {
    const auto hdus = fits::read_fits(io::read_bytes(file));
    std::vector<dl3::Finding> findings;
    try {
      obs = dl3::parse_dl3(hdus);
      findings = dl3::validate_dl3(obs);
    } catch (const dl3::Dl3Error& e) {
      out << "error: " << e.what() << "\n";
      return kExitData;
    }
    for (const auto& f : findings) out << to_string(f.severity) << ": " << f.field << ": " << f.message << "\n";
    if (dl3::has_errors(findings)) return kExitData;
    out << "valid: " << file.string() << "\n";
    return kExitOk;
  } catch (const std::exception& e) {
    out << "error: " << e.what() << "\n";
    return kExitData;
  }
}

enum class QueryFormat { VOTable, Csv };

inline int cmd_query(const obscore::Catalog& catalog, const std::string& adql_text, QueryFormat format,
                     std::optional<std::size_t> maxrec, std::ostream& out, std::ostream& err) {
  try {
    const auto q = adql::parse(adql_text);
    const auto rs = adql::evaluate(q, catalog, maxrec.value_or(std::numeric_limits<std::size_t>::max()));
    out << (format == QueryFormat::Csv ? votable::write_csv(rs) : votable::write_votable(rs));
    return kExitOk;
  } catch (const adql::AdqlError& e) {
    err << e.what() << "\n";
    return kExitUsage;
  }
}

inline int cmd_run(const proc::Registry& registry, proc::Workspace& ws, const proc::RunRequest& req, std::ostream& out,
                   std::ostream& err) {
  try {
    const auto res = proc::run_activity(registry, ws, req);
    out << "activity " << res.activity_id << "\n";
    for (const auto& o : res.outputs) out << "output " << o << "\n";
    return kExitOk;
  } catch (const std::exception& e) {
    err << e.what() << "\n";
    return kExitData;
  }
}

enum class ProvFormat { ProvN, ProvJson };

/// Writes the ancestry of `entity` to `out_file` (or `out` when empty).
inline int cmd_prov_export(const prov::Store& store, const std::string& entity, ProvFormat format,
                           std::optional<std::size_t> depth, const std::optional<std::filesystem::path>& out_file,
                           std::ostream& out, std::ostream& err) {
  try {
    const auto g = store.read([&](const prov::Graph& full) { return prov::ancestry(full, entity, depth); });
    std::string text = format == ProvFormat::ProvN ? prov::serialize_provn(g) + "\n" : prov::serialize_provjson(g);
    if (out_file)
      io::write_atomic(*out_file, text);
    else
      out << text;
    return kExitOk;
  } catch (const std::exception& e) {
    err << e.what() << "\n";
    return kExitData;
  }
}

/// One line per node and relation of the ancestry, for quick inspection.
inline int cmd_prov_ancestry(const prov::Store& store, const std::string& entity, std::optional<std::size_t> depth,
                             std::ostream& out, std::ostream& err) {
  try {
    const auto g = store.read([&](const prov::Graph& full) { return prov::ancestry(full, entity, depth); });
    for (const auto& [id, e] : g.entities) out << "entity " << id << (e.is_stub() ? " (stub)" : "") << "\n";
    for (const auto& [id, a] : g.activities) out << "activity " << id << " " << a.name << "\n";
    for (const auto& [id, a] : g.agents) out << "agent " << id << "\n";
    for (const auto& u : g.used) out << "used " << u.activity << " " << u.entity << "\n";
    for (const auto& w : g.was_generated_by) out << "wasGeneratedBy " << w.entity << " " << w.activity << "\n";
    return kExitOk;
  } catch (const std::exception& e) {
    err << e.what() << "\n";
    return kExitData;
  }
}

/// Rebuilds a graph from the provenance cards of FITS files; prints PROV-JSON.
inline int cmd_prov_reconstruct(const std::vector<std::filesystem::path>& files, std::ostream& out,
                                 std::ostream& err) {
  try {
    std::vector<prov::LastStep> steps;
    for (const auto& f : files) {
      const auto cards = proc::provenance_header(fits::read_fits(io::read_bytes(f)));
      steps.push_back(prov::decode_last_step(prov::keywords_from_cards(cards)));
    }
    out << prov::serialize_provjson(prov::reconstruct(steps));
    return kExitOk;
  } catch (const std::exception& e) {
    err << e.what() << "\n";
    return kExitData;
  }
}

}  // namespace fairgw::gw
