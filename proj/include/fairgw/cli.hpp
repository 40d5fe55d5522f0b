#pragma once

// Command-line front end:
//   gateway {ingest|validate|query|serve|run|prov} ...
// Shared flags: --config, --catalog, --store, --data-dir, --base-url.

#include <CLI11.hpp>

#include <csignal>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "fairgw/gateway.hpp"
#include "fairgw/http_server.hpp"

namespace fairgw::cli {

/// Blocks until the server should stop. Called after the server started.
using Waiter = std::function<void(http::Server&, proc::Workspace&, std::ostream& log)>;

/// Signal loop: SIGHUP reloads catalog and store, SIGINT/SIGTERM stop.
/// The signals must already be blocked in every thread (block_signals()).
inline void wait_for_signals(http::Server&, proc::Workspace& ws, std::ostream& log) {
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  sigaddset(&set, SIGHUP);
  for (;;) {
    int sig = 0;
    if (sigwait(&set, &sig) != 0) return;
    if (sig != SIGHUP) {
      log << "shutting down\n" << std::flush;
      return;
    }
    try {
      gw::reload(ws);
      log << "reloaded catalog (" << ws.catalog.snapshot()->size() << " records)\n" << std::flush;
    } catch (const std::exception& e) {
      log << "reload failed, keeping previous state: " << e.what() << "\n" << std::flush;
    }
  }
}

inline void block_signals() {
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  sigaddset(&set, SIGHUP);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);
}

namespace detail {

inline std::optional<std::pair<std::string, std::string>> split_param(const std::string& kv) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos || eq == 0) return std::nullopt;
  return std::pair{kv.substr(0, eq), kv.substr(eq + 1)};
}

}  // namespace detail

/// Parses `args` (without the program name) and runs the command.
inline int run(std::vector<std::string> args, std::ostream& out, std::ostream& err, Waiter waiter = wait_for_signals) {
  CLI::App app{"FAIR gateway for gamma-ray DL3 data: catalog, TAP query service, processing and provenance",
               "gateway"};
  app.require_subcommand(1);

  std::optional<std::string> config_path, catalog, store, data_dir, base_url;
  auto shared = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON config file (default: $GATEWAY_CONFIG)");
    cmd->add_option("--catalog", catalog, "catalog file (JSON lines)");
    cmd->add_option("--store", store, "provenance store file (PROV-JSON)");
    cmd->add_option("--data-dir", data_dir, "directory holding the served FITS files");
    cmd->add_option("--base-url", base_url, "public base URL of the TAP service");
  };

  std::vector<std::string> files;
  auto* ingest = app.add_subcommand("ingest", "Catalog DL3 files and record their provenance");
  shared(ingest);
  ingest->add_option("files", files, "DL3 files")->required();

  std::string file;
  auto* validate = app.add_subcommand("validate", "Check one DL3 file");
  validate->add_option("file", file, "DL3 file")->required();

  std::string query_text, format = "votable";
  std::optional<std::size_t> maxrec;
  auto* query = app.add_subcommand("query", "Run an ADQL query against the catalog");
  shared(query);
  query->add_option("adql", query_text, "ADQL query")->required();
  query->add_option("--format", format, "votable or csv")->check(CLI::IsMember({"votable", "csv"}));
  query->add_option("--maxrec", maxrec, "maximum number of rows");

  std::optional<int> port;
  std::optional<std::string> host;
  auto* serve = app.add_subcommand("serve", "Serve TAP, data and processing endpoints over HTTP");
  shared(serve);
  serve->add_option("--port", port, "TCP port")->check(CLI::Range(1, 65535));
  serve->add_option("--host", host, "listen address");

  std::string activity, agent = "anonymous";
  std::vector<std::string> params, inputs;
  std::optional<std::string> workflow;
  auto* run_cmd = app.add_subcommand("run", "Run a processing activity");
  shared(run_cmd);
  run_cmd->add_option("activity", activity, "region_select, energy_filter or counts_histogram")->required();
  run_cmd->add_option("--param", params, "parameter name=value (repeatable)");
  run_cmd->add_option("--in", inputs, "input entity id (repeatable)")->required();
  run_cmd->add_option("--agent", agent, "agent recorded as responsible");
  run_cmd->add_option("--workflow", workflow, "workflow context");

  auto* prov_cmd = app.add_subcommand("prov", "Inspect and export provenance");
  prov_cmd->require_subcommand(1);
  std::string entity, prov_format = "provn";
  std::optional<std::size_t> depth;
  std::optional<std::string> out_file;
  auto* exp = prov_cmd->add_subcommand("export", "Write the ancestry of an entity as PROV-N or PROV-JSON");
  shared(exp);
  exp->add_option("entity", entity, "entity id")->required();
  exp->add_option("--format", prov_format, "provn or provjson")->check(CLI::IsMember({"provn", "provjson"}));
  exp->add_option("--depth", depth, "maximum number of activity hops")->check(CLI::PositiveNumber);
  exp->add_option("--out", out_file, "output file (default: standard output)");
  auto* anc = prov_cmd->add_subcommand("ancestry", "List the ancestry of an entity");
  shared(anc);
  anc->add_option("entity", entity, "entity id")->required();
  anc->add_option("--depth", depth, "maximum number of activity hops")->check(CLI::PositiveNumber);
  std::vector<std::string> rec_files;
  auto* rec = prov_cmd->add_subcommand("reconstruct", "Rebuild provenance from FITS provenance keywords");
  rec->add_option("files", rec_files, "FITS files")->required();

  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? gw::kExitOk : gw::kExitUsage;
  }

  if (*validate) return gw::cmd_validate(file, out);
  if (*prov_cmd && prov_cmd->got_subcommand(rec)) {
    std::vector<std::filesystem::path> paths(rec_files.begin(), rec_files.end());
    return gw::cmd_prov_reconstruct(paths, out, err);
  }

  gw::Config config;
  try {
    config = gw::load_config(config_path ? std::optional<std::filesystem::path>(*config_path) : std::nullopt);
    if (catalog) config.catalog_path = *catalog;
    if (store) config.store_path = *store;
    if (data_dir) config.data_dir = *data_dir;
    if (base_url) config.base_url = *base_url;
    if (port) config.port = *port;
    if (host) config.host = *host;
    gw::validate(config);
  } catch (const gw::GatewayError& e) {
    err << e.what() << "\n";
    return gw::kExitUsage;
  }

  const auto registry = proc::Registry::builtin();
  proc::Workspace ws;
  try {
    gw::open_workspace(ws, config, registry);
  } catch (const std::exception& e) {
    err << "cannot open workspace: " << e.what() << "\n";
    return gw::kExitData;
  }

  if (*ingest) {
    std::vector<std::filesystem::path> paths(files.begin(), files.end());
    try {
      return gw::cmd_ingest(ws, paths, out);
    } catch (const std::exception& e) {
      err << e.what() << "\n";
      return gw::kExitData;
    }
  }
  if (*query)
    return gw::cmd_query(*ws.catalog.snapshot(), query_text,
                         format == "csv" ? gw::QueryFormat::Csv : gw::QueryFormat::VOTable, maxrec, out, err);
  if (*run_cmd) {
    proc::RunRequest req;
    req.activity = activity;
    req.inputs = inputs;
    req.agent = agent;
    req.workflow = workflow;
    for (const auto& p : params) {
      auto kv = detail::split_param(p);
      if (!kv) {
        err << "--param expects name=value, got '" << p << "'\n";
        return gw::kExitUsage;
      }
      req.params[kv->first] = kv->second;
    }
    return gw::cmd_run(registry, ws, req, out, err);
  }
  if (*prov_cmd) {
    if (prov_cmd->got_subcommand(exp))
      return gw::cmd_prov_export(ws.store, entity, prov_format == "provjson" ? gw::ProvFormat::ProvJson : gw::ProvFormat::ProvN,
                                 depth, out_file ? std::optional<std::filesystem::path>(*out_file) : std::nullopt, out,
                                 err);
    return gw::cmd_prov_ancestry(ws.store, entity, depth, out, err);
  }

  // serve
  gw::Service service(ws, registry, config);
  std::mutex log_mutex;
  http::Server server([&](const http::Request& r) { return service.handle(r); },
                      [&](const http::LogEntry& e) {
                        std::lock_guard lock(log_mutex);
                        out << http::format_log(e) << "\n" << std::flush;
                      });
  try {
    server.bind(config.host, config.port);
  } catch (const http::HttpError& e) {
    err << e.what() << "\n";
    return gw::kExitData;
  }
  server.start();
  {
    std::lock_guard lock(log_mutex);
    out << "serving " << config.base_url << " on " << config.host << ":" << server.port() << "\n" << std::flush;
  }
  waiter(server, ws, out);
  server.stop();
  return gw::kExitOk;
}

}  // namespace fairgw::cli
