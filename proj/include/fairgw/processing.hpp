#pragma once

// Online processing: a fixed registry of DL3 transforms whose runs are
// written to disk with embedded last-step provenance, ingested into the
// catalog and recorded in the provenance store as one atomic commit.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "fairgw/adql.hpp"
#include "fairgw/dl3.hpp"
#include "fairgw/error.hpp"
#include "fairgw/fits.hpp"
#include "fairgw/io.hpp"
#include "fairgw/obscore.hpp"
#include "fairgw/provenance.hpp"

namespace fairgw::proc {

enum class Errc {
  InvalidRadius,
  InvalidCenter,
  InvalidRange,
  BadEdges,
  BadParameter,
  UnknownActivity,
  UnknownEntity,
  BadInputs,
};

inline std::string_view to_string(Errc e) {
  switch (e) {
    case Errc::InvalidRadius: return "InvalidRadius";
    case Errc::InvalidCenter: return "InvalidCenter";
    case Errc::InvalidRange: return "InvalidRange";
    case Errc::BadEdges: return "BadEdges";
    case Errc::BadParameter: return "BadParameter";
    case Errc::UnknownActivity: return "UnknownActivity";
    case Errc::UnknownEntity: return "UnknownEntity";
    case Errc::BadInputs: return "BadInputs";
  }
  return "Unknown";
}

using ProcError = Error<Errc>;

// ---------------------------------------------------------------------------
// Transforms

/// Events within `radius` degrees of the center, in input order.
inline dl3::Observation region_select(const dl3::Observation& obs, double center_ra, double center_dec, double radius) {
  if (!(radius >= 0)) throw ProcError(Errc::InvalidRadius, "radius must be >= 0");
  if (!(center_dec >= -90 && center_dec <= 90) || !std::isfinite(center_ra))
    throw ProcError(Errc::InvalidCenter, "center must have finite RA and Dec in [-90, 90]");
  dl3::Observation out = obs;
  out.events.clear();
  for (const auto& e : obs.events)
    if (adql::angular_separation(e.ra, e.dec, center_ra, center_dec) <= radius) out.events.push_back(e);
  out.obs_id = obs.obs_id + "-sel";
  return out;
}

/// Events with e_min <= energy < e_max (TeV), in input order.
inline dl3::Observation energy_filter(const dl3::Observation& obs, double e_min, double e_max) {
  if (!(e_min > 0 && e_min < e_max)) throw ProcError(Errc::InvalidRange, "energy range must satisfy 0 < e_min < e_max");
  dl3::Observation out = obs;
  out.events.clear();
  for (const auto& e : obs.events)
    if (e.energy >= e_min && e.energy < e_max) out.events.push_back(e);
  out.obs_id = obs.obs_id + "-eflt";
  return out;
}

struct Histogram {
  std::vector<double> edges;
  std::vector<std::int64_t> counts;  // counts[i] covers [edges[i], edges[i+1])

  bool operator==(const Histogram&) const = default;
};

inline Histogram counts_histogram(const dl3::Observation& obs, std::vector<double> edges) {
  if (edges.size() < 2) throw ProcError(Errc::BadEdges, "at least two edges are required");
  for (std::size_t i = 0; i < edges.size(); ++i) {
    if (!std::isfinite(edges[i])) throw ProcError(Errc::BadEdges, "edges must be finite");
    if (i && !(edges[i - 1] < edges[i])) throw ProcError(Errc::BadEdges, "edges must be strictly increasing");
  }
  Histogram h{std::move(edges), {}};
  h.counts.assign(h.edges.size() - 1, 0);
  for (const auto& e : obs.events) {
    const auto it = std::upper_bound(h.edges.begin(), h.edges.end(), e.energy);
    if (it == h.edges.begin() || it == h.edges.end()) continue;
    ++h.counts[static_cast<std::size_t>(it - h.edges.begin()) - 1];
  }
  return h;
}

inline fits::BinTable histogram_table(const Histogram& h) {
  using fits::ColumnForm;
  using fits::FormCode;
  fits::BinTable t;
  t.name = "COUNTS";
  t.columns = {{"BIN_LO", ColumnForm{FormCode::Float64, 1}, "TeV"},
               {"BIN_HI", ColumnForm{FormCode::Float64, 1}, "TeV"},
               {"COUNTS", ColumnForm{FormCode::Int64, 1}, std::nullopt}};
  for (std::size_t i = 0; i < h.counts.size(); ++i) t.rows.push_back({h.edges[i], h.edges[i + 1], h.counts[i]});
  return t;
}

inline std::vector<fits::Hdu> write_histogram(const Histogram& h, std::vector<fits::Card> cards) {
  std::vector<fits::Hdu> hdus;
  hdus.push_back(fits::make_primary_hdu());
  hdus.push_back(fits::make_bintable_hdu(histogram_table(h), std::move(cards)));
  return hdus;
}

/// Cards of the first HDU carrying provenance keywords; empty if none does.
inline std::vector<fits::Card> provenance_header(const std::vector<fits::Hdu>& hdus) {
  for (const auto& h : hdus)
    if (std::any_of(h.header.cards.begin(), h.header.cards.end(), prov::is_provenance_card)) return h.header.cards;
  return {};
}

// ---------------------------------------------------------------------------
// Registry

using Params = std::map<std::string, std::string>;
using Product = std::variant<dl3::Observation, Histogram>;

struct RegisteredActivity {
  prov::ActivityDescription description;
  std::function<Product(const dl3::Observation&, const Params&)> transform;
};

namespace detail {

inline double number(const Params& p, const std::string& name) {
  auto it = p.find(name);
  if (it == p.end()) throw ProcError(Errc::BadParameter, "missing parameter '" + name + "'");
  std::string_view s = it->second;
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc{} || end != s.data() + s.size())
    throw ProcError(Errc::BadParameter, "parameter '" + name + "' is not a number: '" + it->second + "'");
  return v;
}

/// Comma-separated numbers, e.g. "0.1,1,10".
inline std::vector<double> number_list(const Params& p, const std::string& name) {
  auto it = p.find(name);
  if (it == p.end()) throw ProcError(Errc::BadParameter, "missing parameter '" + name + "'");
  std::vector<double> out;
  std::string_view rest = it->second;
  for (;;) {
    const auto comma = rest.find(',');
    std::string_view item = rest.substr(0, comma);
    while (!item.empty() && item.front() == ' ') item.remove_prefix(1);
    while (!item.empty() && item.back() == ' ') item.remove_suffix(1);
    out.push_back(number({{name, std::string(item)}}, name));
    if (comma == std::string_view::npos) break;
    rest.remove_prefix(comma + 1);
  }
  return out;
}

}  // namespace detail

inline constexpr std::string_view kSoftwareVersion = "1.0.0";

class Registry {
 public:
  /// The three built-in activities.
  static Registry builtin() {
    using prov::ParamType;
    const std::string v(kSoftwareVersion);
    Registry r;
    r.add({{prov::description_id("region_select", v), "region_select", v,
            "Keep events within a cone around (ra, dec)",
            {{"ra", ParamType::Float, "deg", true},
             {"dec", ParamType::Float, "deg", true},
             {"radius", ParamType::Float, "deg", true}}},
           [](const dl3::Observation& o, const Params& p) -> Product {
             return region_select(o, detail::number(p, "ra"), detail::number(p, "dec"), detail::number(p, "radius"));
           }});
    r.add({{prov::description_id("energy_filter", v), "energy_filter", v,
            "Keep events with emin <= energy < emax",
            {{"emin", ParamType::Float, "TeV", true}, {"emax", ParamType::Float, "TeV", true}}},
           [](const dl3::Observation& o, const Params& p) -> Product {
             return energy_filter(o, detail::number(p, "emin"), detail::number(p, "emax"));
           }});
    r.add({{prov::description_id("counts_histogram", v), "counts_histogram", v,
            "Event counts in half-open energy bins",
            {{"edges", ParamType::String, "TeV", true}}},
           [](const dl3::Observation& o, const Params& p) -> Product {
             return counts_histogram(o, detail::number_list(p, "edges"));
           }});
    return r;
  }

  void add(RegisteredActivity a) {
    const std::string name = a.description.name;
    if (!a.transform) throw ProcError(Errc::UnknownActivity, "activity '" + name + "' has no transform");
    if (!activities_.emplace(name, std::move(a)).second)
      throw ProcError(Errc::UnknownActivity, "activity '" + name + "' registered twice");
  }

  [[nodiscard]] const RegisteredActivity* find(std::string_view name) const {
    auto it = activities_.find(std::string(name));
    return it == activities_.end() ? nullptr : &it->second;
  }

  [[nodiscard]] const std::map<std::string, RegisteredActivity>& all() const { return activities_; }

 private:
  std::map<std::string, RegisteredActivity> activities_;
};

// ---------------------------------------------------------------------------
// Workspace and runs

/// Catalog, provenance store and their on-disk locations. Empty catalog or
/// store paths keep that part in memory only.
struct Workspace {
  obscore::CatalogHolder catalog;
  prov::Store store;
  std::filesystem::path catalog_path;
  std::filesystem::path store_path;
  std::filesystem::path data_dir = "data";
  obscore::Config obscore;
  std::mutex commit_mutex;

  [[nodiscard]] std::filesystem::path data_file(std::string_view id) const {
    return data_dir / (std::string(id) + ".fits");
  }
};

struct RunRequest {
  std::string activity;
  Params params;
  std::vector<std::string> inputs;
  std::string agent = "anonymous";
  std::optional<std::string> workflow;
};

struct RunOutcome {
  std::string activity_id;
  std::vector<std::string> outputs;
};

namespace detail {

/// Restores previous file contents (or removes new files) unless released.
class FileRollback {
 public:
  void save(const std::filesystem::path& p) {
    std::optional<fits::Bytes> old;
    if (std::filesystem::exists(p)) old = io::read_bytes(p);
    saved_.emplace_back(p, std::move(old));
  }
  void release() { saved_.clear(); }
  ~FileRollback() {
    for (auto it = saved_.rbegin(); it != saved_.rend(); ++it) {
      std::error_code ec;
      if (it->second)
        try {
          io::write_atomic(it->first, std::span<const std::uint8_t>(*it->second));
        } catch (...) {
        }
      else
        std::filesystem::remove(it->first, ec);
    }
  }

 private:
  std::vector<std::pair<std::filesystem::path, std::optional<fits::Bytes>>> saved_;
};

}  // namespace detail

/// Registers the built-in descriptions in the workspace store.
inline void register_descriptions(const Registry& registry, prov::Store& store) {
  for (const auto& [name, a] : registry.all()) store.add_description(a.description);
}

/// Executes one activity. The transform runs outside the commit lock; the
/// commit (files, catalog, store, persistence) is all-or-nothing.
inline RunOutcome run_activity(const Registry& registry, Workspace& ws, const RunRequest& req) {
  const RegisteredActivity* act = registry.find(req.activity);
  if (!act) throw ProcError(Errc::UnknownActivity, "unknown activity '" + req.activity + "'");
  if (req.inputs.size() != 1)
    throw ProcError(Errc::BadInputs, req.activity + " takes exactly one input, got " + std::to_string(req.inputs.size()));
  prov::detail::check_parameters(act->description, req.params);
  if (req.agent.empty()) throw ProcError(Errc::BadParameter, "agent must not be empty");

  const std::string& input_id = req.inputs.front();
  std::optional<std::string> instrument;
  {
    const auto snap = ws.catalog.snapshot();
    const obscore::Record* rec = snap->find_obs_id(input_id);
    if (!rec) throw ProcError(Errc::UnknownEntity, "no catalogued observation '" + input_id + "'");
    instrument = rec->instrument_name;
  }
  const auto input_path = ws.data_file(input_id);
  if (!std::filesystem::exists(input_path))
    throw ProcError(Errc::UnknownEntity, "data file missing for '" + input_id + "'");
  const dl3::Observation input = dl3::read_dl3_bytes(io::read_bytes(input_path));

  const std::string start = prov::now_iso8601();
  Product product = act->transform(input, req.params);
  const std::string end = prov::now_iso8601();

  std::lock_guard commit(ws.commit_mutex);
  prov::Store next = ws.store;
  const prov::Graph before = next.snapshot();
  if (!before.descriptions.contains(act->description.id)) next.add_description(act->description);
  if (!before.entities.contains(input_id))
    next.add_entity({input_id, input_id, input_path.string(), std::nullopt, std::nullopt, {}});

  std::size_t n = before.activities.size() + 1;
  std::string out_id, activity_id;
  for (;; ++n) {
    out_id = input_id + "-" + req.activity + "-" + std::to_string(n);
    activity_id = req.activity + "/" + std::to_string(n);
    if (!before.entities.contains(out_id) && !before.activities.contains(activity_id)) break;
  }
  const auto out_path = ws.data_file(out_id);

  prov::RunSpec run;
  run.description_id = act->description.id;
  run.parameters = req.params;
  run.used = {input_id};
  run.generated = {{out_id, req.activity + " output", out_path.string(), {}}};
  run.agent_id = req.agent;
  run.workflow = req.workflow;
  run.instrument = instrument;
  run.start_time = start;
  run.end_time = end;
  run.activity_id = activity_id;
  next.record_run(run);
  const prov::LastStep last = prov::encode_last_step(next.snapshot(), out_id);

  obscore::Catalog catalog = *ws.catalog.snapshot();
  fits::Bytes bytes;
  if (auto* obs = std::get_if<dl3::Observation>(&product)) {
    obs->obs_id = out_id;
    prov::embed(obs->extra_cards, last);
    bytes = dl3::write_dl3_bytes(*obs);
    catalog.upsert(obscore::to_obscore(*obs, ws.obscore, static_cast<std::int64_t>((bytes.size() + 1023) / 1024)));
  } else {
    std::vector<fits::Card> cards;
    prov::embed(cards, last);
    bytes = fits::write_fits(write_histogram(std::get<Histogram>(product), std::move(cards)));
  }

  detail::FileRollback rollback;
  std::filesystem::create_directories(ws.data_dir);
  rollback.save(out_path);
  io::write_atomic(out_path, std::span<const std::uint8_t>(bytes));
  if (!ws.catalog_path.empty()) {
    rollback.save(ws.catalog_path);
    obscore::save_catalog_file(ws.catalog_path, catalog);
  }
  if (!ws.store_path.empty()) {
    rollback.save(ws.store_path);
    prov::save_store(ws.store_path, next);
  }
  ws.store.replace(next.snapshot());
  ws.catalog.replace(std::move(catalog));
  rollback.release();
  return {activity_id, {out_id}};
}

}  // namespace fairgw::proc
