#pragma once

// ObsCore discovery records for DL3 observations and the persistent catalog
// behind the `ivoa.obscore` table.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

#include <json.hpp>

#include "fairgw/dl3.hpp"
#include "fairgw/error.hpp"
#include "fairgw/fits.hpp"
#include "fairgw/io.hpp"

namespace fairgw::obscore {

enum class Errc { NonPositiveEnergy, InvalidConfig, InvalidRecord, MalformedLine };

inline std::string_view to_string(Errc e) {
  switch (e) {
    case Errc::NonPositiveEnergy: return "NonPositiveEnergy";
    case Errc::InvalidConfig: return "InvalidConfig";
    case Errc::InvalidRecord: return "InvalidRecord";
    case Errc::MalformedLine: return "MalformedLine";
  }
  return "Unknown";
}

using ObsCoreError = Error<Errc>;

/// h*c in eV*m.
inline constexpr double kHcEvMeter = 1.23984193e-6;
inline constexpr double kSecondsPerDay = 86400.0;

/// Photon wavelength in metres for an energy in TeV.
inline double energy_to_wavelength(double energy_tev) {
  if (!(energy_tev > 0) || !std::isfinite(energy_tev))
    throw ObsCoreError(Errc::NonPositiveEnergy, "energy must be positive and finite");
  return kHcEvMeter / (energy_tev * 1e12);
}

struct Record {
  std::string dataproduct_type = "event";
  std::int64_t calib_level = 3;
  std::string obs_collection;
  std::string obs_id;
  std::string obs_publisher_did;
  std::string access_url;
  std::string access_format = "application/fits";
  std::int64_t access_estsize = 0;  // kbyte
  std::optional<std::string> target_name;
  double s_ra = 0, s_dec = 0;  // deg
  double s_fov = 0;            // deg
  double t_min = 0, t_max = 0;  // MJD
  double t_exptime = 0;         // s
  double em_min = 0, em_max = 0;  // m
  std::string facility_name;
  std::string instrument_name;

  bool operator==(const Record&) const = default;
};

inline void validate_record(const Record& r) {
  auto fail = [&](const std::string& m) { throw ObsCoreError(Errc::InvalidRecord, r.obs_publisher_did + ": " + m); };
  if (r.obs_publisher_did.empty()) fail("empty obs_publisher_did");
  if (r.calib_level != 3) fail("calib_level must be 3 for DL3 products");
  if (!(r.em_min < r.em_max)) fail("em_min must be below em_max");
  if (!(r.t_min <= r.t_max)) fail("t_min must not exceed t_max");
  if (!(r.s_fov > 0)) fail("s_fov must be positive");
}

struct Config {
  std::string collection = "hess-dl3-dr1";
  std::string authority = "hess-dr.obspm.fr";
  std::string access_base_url = "http://localhost:8080/data";
  double e_min_tev = 0.1;
  double e_max_tev = 100.0;
  double fov_deg = 5.0;
  std::string facility = "H.E.S.S.";
  std::string instrument = "H.E.S.S.";
};

inline void validate_config(const Config& c) {
  if (c.authority.empty()) throw ObsCoreError(Errc::InvalidConfig, "empty publisher authority");
  if (c.collection.empty()) throw ObsCoreError(Errc::InvalidConfig, "empty collection name");
  if (!(c.e_min_tev > 0 && c.e_min_tev < c.e_max_tev))
    throw ObsCoreError(Errc::InvalidConfig, "energy range must satisfy 0 < e_min < e_max");
  if (!(c.fov_deg > 0)) throw ObsCoreError(Errc::InvalidConfig, "field of view must be positive");
}

inline std::string publisher_did(const Config& c, std::string_view obs_id) {
  return "ivo://" + c.authority + "/" + c.collection + "#" + std::string(obs_id);
}

/// Maps an observation to its discovery record. MJD conversion uses exactly
/// 86400 s per day (no leap seconds). `estsize_kb` overrides the size
/// estimate, which otherwise comes from the serialized file.
inline Record to_obscore(const dl3::Observation& obs, const Config& config,
                         std::optional<std::int64_t> estsize_kb = std::nullopt) {
  validate_config(config);
  Record r;
  r.obs_collection = config.collection;
  r.obs_id = obs.obs_id;
  r.obs_publisher_did = publisher_did(config, obs.obs_id);
  r.access_url = config.access_base_url + "/" + obs.obs_id + ".fits";
  r.access_estsize = estsize_kb ? *estsize_kb
                                : static_cast<std::int64_t>((dl3::write_dl3_bytes(obs).size() + 1023) / 1024);
  for (const auto* cards : {&obs.extra_cards, &obs.primary_cards})
    for (const auto& c : *cards)
      if (c.keyword == "OBJECT")
        if (const auto* s = std::get_if<std::string>(&c.value); s && !s->empty() && !r.target_name) r.target_name = *s;
  r.s_ra = obs.ra_pnt;
  r.s_dec = obs.dec_pnt;
  r.s_fov = config.fov_deg;
  r.t_min = obs.mjdref + obs.tstart / kSecondsPerDay;
  r.t_max = obs.mjdref + obs.tstop / kSecondsPerDay;
  r.t_exptime = obs.livetime;
  r.em_min = energy_to_wavelength(config.e_max_tev);
  r.em_max = energy_to_wavelength(config.e_min_tev);
  r.facility_name = config.facility;
  r.instrument_name = config.instrument;
  return r;
}

// ---------------------------------------------------------------------------
// Table schema

enum class Datatype { Char, Int, Long, Double };

inline std::string_view to_string(Datatype t) {
  switch (t) {
    case Datatype::Char: return "char";
    case Datatype::Int: return "int";
    case Datatype::Long: return "long";
    case Datatype::Double: return "double";
  }
  return "char";
}

struct ColumnDef {
  std::string_view name;
  Datatype type;
  std::string_view unit;
  std::string_view ucd;
  std::string_view description;
};

inline constexpr std::string_view kTableName = "ivoa.obscore";

// Optional ObsCore columns (s_region ... pol_states) are always null.
inline constexpr std::array<ColumnDef, 25> kSchema{{
    {"dataproduct_type", Datatype::Char, "", "meta.code.class", "Data product type (event list)"},
    {"calib_level", Datatype::Int, "", "meta.code;obs.calib", "Calibration level (3 for DL3)"},
    {"obs_collection", Datatype::Char, "", "meta.id", "Name of the data collection"},
    {"obs_id", Datatype::Char, "", "meta.id", "Observation identifier"},
    {"obs_publisher_did", Datatype::Char, "", "meta.ref.ivoid", "Publisher dataset identifier"},
    {"access_url", Datatype::Char, "", "meta.ref.url", "URL of the DL3 file"},
    {"access_format", Datatype::Char, "", "meta.code.mime", "MIME type of the DL3 file"},
    {"access_estsize", Datatype::Long, "kbyte", "phys.size;meta.file", "Estimated file size"},
    {"target_name", Datatype::Char, "", "meta.id;src", "Observed target name"},
    {"s_ra", Datatype::Double, "deg", "pos.eq.ra", "Pointing right ascension (ICRS)"},
    {"s_dec", Datatype::Double, "deg", "pos.eq.dec", "Pointing declination (ICRS)"},
    {"s_fov", Datatype::Double, "deg", "phys.angSize;instr.fov", "Field of view diameter"},
    {"s_region", Datatype::Char, "", "pos.outline;obs.field", "Sky region covered (not provided)"},
    {"s_resolution", Datatype::Double, "arcsec", "pos.angResolution", "Spatial resolution (not provided)"},
    {"t_min", Datatype::Double, "d", "time.start;obs.exposure", "Observation start (MJD)"},
    {"t_max", Datatype::Double, "d", "time.end;obs.exposure", "Observation stop (MJD)"},
    {"t_exptime", Datatype::Double, "s", "time.duration;obs.exposure", "Livetime of the observation"},
    {"t_resolution", Datatype::Double, "s", "time.resolution", "Time resolution (not provided)"},
    {"em_min", Datatype::Double, "m", "em.wl;stat.min", "Wavelength of the highest energy bound"},
    {"em_max", Datatype::Double, "m", "em.wl;stat.max", "Wavelength of the lowest energy bound"},
    {"em_res_power", Datatype::Double, "", "spect.resolution", "Spectral resolving power (not provided)"},
    {"o_ucd", Datatype::Char, "", "meta.ucd", "UCD of the observable (not provided)"},
    {"pol_states", Datatype::Char, "", "meta.code;phys.polarization", "Polarization states (not provided)"},
    {"facility_name", Datatype::Char, "", "meta.id;instr.tel", "Facility name"},
    {"instrument_name", Datatype::Char, "", "meta.id;instr", "Instrument name"},
}};

/// Non-owning cell value; strings point into the record.
using FieldRef = std::variant<std::monostate, std::int64_t, double, std::string_view>;
/// Owning cell value.
using Value = std::variant<std::monostate, std::int64_t, double, std::string>;

inline std::optional<std::size_t> column_index(std::string_view name) {
  for (std::size_t i = 0; i < kSchema.size(); ++i) {
    const auto& n = kSchema[i].name;
    if (n.size() == name.size() &&
        std::equal(n.begin(), n.end(), name.begin(), [](char a, char b) {
          return std::tolower(static_cast<unsigned char>(a)) == std::tolower(static_cast<unsigned char>(b));
        }))
      return i;
  }
  return std::nullopt;
}

inline FieldRef field(const Record& r, std::size_t column) {
  switch (column) {
    case 0: return std::string_view(r.dataproduct_type);
    case 1: return r.calib_level;
    case 2: return std::string_view(r.obs_collection);
    case 3: return std::string_view(r.obs_id);
    case 4: return std::string_view(r.obs_publisher_did);
    case 5: return std::string_view(r.access_url);
    case 6: return std::string_view(r.access_format);
    case 7: return r.access_estsize;
    case 8: return r.target_name ? FieldRef(std::string_view(*r.target_name)) : FieldRef(std::monostate{});
    case 9: return r.s_ra;
    case 10: return r.s_dec;
    case 11: return r.s_fov;
    case 14: return r.t_min;
    case 15: return r.t_max;
    case 16: return r.t_exptime;
    case 18: return r.em_min;
    case 19: return r.em_max;
    case 23: return std::string_view(r.facility_name);
    case 24: return std::string_view(r.instrument_name);
    default: return std::monostate{};
  }
}

inline Value to_value(const FieldRef& f) {
  return std::visit(
      [](const auto& v) -> Value {
        if constexpr (std::is_same_v<std::decay_t<decltype(v)>, std::string_view>)
          return std::string(v);
        else
          return v;
      },
      f);
}

// ---------------------------------------------------------------------------
// Catalog

/// Records keyed by obs_publisher_did, in first-insertion order.
class Catalog {
 public:
  Catalog() = default;

  [[nodiscard]] std::size_t size() const { return records_.size(); }
  [[nodiscard]] bool empty() const { return records_.empty(); }
  [[nodiscard]] const std::vector<Record>& records() const { return records_; }

  [[nodiscard]] const Record* find(std::string_view did) const {
    auto it = index_.find(std::string(did));
    return it == index_.end() ? nullptr : &records_[it->second];
  }

  [[nodiscard]] const Record* find_obs_id(std::string_view obs_id) const {
    for (const auto& r : records_)
      if (r.obs_id == obs_id) return &r;
    return nullptr;
  }

  /// Inserts, or replaces the record with the same obs_publisher_did.
  void upsert(Record r) {
    validate_record(r);
    if (auto it = index_.find(r.obs_publisher_did); it != index_.end()) {
      records_[it->second] = std::move(r);
      return;
    }
    index_.emplace(r.obs_publisher_did, records_.size());
    records_.push_back(std::move(r));
  }

  bool operator==(const Catalog& o) const { return records_ == o.records_; }

 private:
  std::vector<Record> records_;
  std::unordered_map<std::string, std::size_t> index_;
};

inline Catalog ingest(Catalog catalog, Record record) {
  catalog.upsert(std::move(record));
  return catalog;
}

namespace detail {

using ojson = nlohmann::ordered_json;

inline ojson to_json(const Record& r) {
  ojson j;
  j["dataproduct_type"] = r.dataproduct_type;
  j["calib_level"] = r.calib_level;
  j["obs_collection"] = r.obs_collection;
  j["obs_id"] = r.obs_id;
  j["obs_publisher_did"] = r.obs_publisher_did;
  j["access_url"] = r.access_url;
  j["access_format"] = r.access_format;
  j["access_estsize"] = r.access_estsize;
  j["target_name"] = r.target_name ? ojson(*r.target_name) : ojson(nullptr);
  j["s_ra"] = r.s_ra;
  j["s_dec"] = r.s_dec;
  j["s_fov"] = r.s_fov;
  j["t_min"] = r.t_min;
  j["t_max"] = r.t_max;
  j["t_exptime"] = r.t_exptime;
  j["em_min"] = r.em_min;
  j["em_max"] = r.em_max;
  j["facility_name"] = r.facility_name;
  j["instrument_name"] = r.instrument_name;
  return j;
}

inline Record from_json(const ojson& j, std::size_t line) {
  auto fail = [&](const std::string& m) -> ObsCoreError {
    return ObsCoreError(Errc::MalformedLine, "line " + std::to_string(line) + ": " + m);
  };
  if (!j.is_object()) throw fail("not an object");
  static constexpr std::string_view kFields[] = {
      "dataproduct_type", "calib_level", "obs_collection", "obs_id",   "obs_publisher_did", "access_url",
      "access_format",    "access_estsize", "target_name", "s_ra",     "s_dec",             "s_fov",
      "t_min",            "t_max",       "t_exptime",      "em_min",   "em_max",            "facility_name",
      "instrument_name"};
  for (const auto& item : j.items())
    if (std::find(std::begin(kFields), std::end(kFields), item.key()) == std::end(kFields))
      throw fail("unknown field '" + item.key() + "'");
  auto str = [&](const char* k) -> std::string {
    if (!j.contains(k)) throw fail(std::string("missing '") + k + "'");
    if (!j.at(k).is_string()) throw fail(std::string("'") + k + "' is not a string");
    return j.at(k).get<std::string>();
  };
  auto integer = [&](const char* k) -> std::int64_t {
    if (!j.contains(k)) throw fail(std::string("missing '") + k + "'");
    if (!j.at(k).is_number_integer()) throw fail(std::string("'") + k + "' is not an integer");
    return j.at(k).get<std::int64_t>();
  };
  auto real = [&](const char* k) -> double {
    if (!j.contains(k)) throw fail(std::string("missing '") + k + "'");
    if (!j.at(k).is_number()) throw fail(std::string("'") + k + "' is not a number");
    return j.at(k).get<double>();
  };
  Record r;
  r.dataproduct_type = str("dataproduct_type");
  r.calib_level = integer("calib_level");
  r.obs_collection = str("obs_collection");
  r.obs_id = str("obs_id");
  r.obs_publisher_did = str("obs_publisher_did");
  r.access_url = str("access_url");
  r.access_format = str("access_format");
  r.access_estsize = integer("access_estsize");
  if (!j.contains("target_name")) throw fail("missing 'target_name'");
  if (!j.at("target_name").is_null()) r.target_name = str("target_name");
  r.s_ra = real("s_ra");
  r.s_dec = real("s_dec");
  r.s_fov = real("s_fov");
  r.t_min = real("t_min");
  r.t_max = real("t_max");
  r.t_exptime = real("t_exptime");
  r.em_min = real("em_min");
  r.em_max = real("em_max");
  r.facility_name = str("facility_name");
  r.instrument_name = str("instrument_name");
  return r;
}

}  // namespace detail

/// One JSON object per line, keys exactly the Record field names.
inline std::string save_catalog(const Catalog& c) {
  std::string out;
  for (const auto& r : c.records()) {
    out += detail::to_json(r).dump();
    out += '\n';
  }
  return out;
}

inline Catalog load_catalog(std::string_view text) {
  Catalog c;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    const std::string_view line = text.substr(pos, eol - pos);
    pos = eol + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    detail::ojson j;
    try {
      j = detail::ojson::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ObsCoreError(Errc::MalformedLine, "line " + std::to_string(line_no) + ": " + e.what());
    }
    Record r = detail::from_json(j, line_no);
    if (c.find(r.obs_publisher_did))
      throw ObsCoreError(Errc::MalformedLine, "line " + std::to_string(line_no) + ": duplicate obs_publisher_did");
    try {
      c.upsert(std::move(r));
    } catch (const ObsCoreError& e) {
      throw ObsCoreError(Errc::MalformedLine, "line " + std::to_string(line_no) + ": " + e.message());
    }
  }
  return c;
}

inline Catalog load_catalog_file(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) return {};
  return load_catalog(io::read_text(path));
}

inline void save_catalog_file(const std::filesystem::path& path, const Catalog& c) {
  io::write_atomic(path, save_catalog(c));
}

/// Holds the current immutable catalog snapshot. Readers take a snapshot
/// pointer and keep it for the whole request; writers build a new catalog and
/// swap it in under the write lock.
class CatalogHolder {
 public:
  CatalogHolder() : current_(std::make_shared<const Catalog>()) {}
  explicit CatalogHolder(Catalog c) : current_(std::make_shared<const Catalog>(std::move(c))) {}

  [[nodiscard]] std::shared_ptr<const Catalog> snapshot() const {
    std::lock_guard lock(swap_mutex_);
    return current_;
  }

  void replace(Catalog c) {
    auto next = std::make_shared<const Catalog>(std::move(c));
    std::lock_guard write(write_mutex_);
    std::lock_guard lock(swap_mutex_);
    current_ = std::move(next);
  }

  /// Applies `f` to a copy of the current catalog and publishes the result.
  /// `f` may throw, in which case nothing changes.
  template <class F>
  void update(F&& f) {
    std::lock_guard write(write_mutex_);
    Catalog next = *snapshot();
    f(next);
    auto ptr = std::make_shared<const Catalog>(std::move(next));
    std::lock_guard lock(swap_mutex_);
    current_ = std::move(ptr);
  }

 private:
  mutable std::mutex swap_mutex_;
  std::mutex write_mutex_;
  std::shared_ptr<const Catalog> current_;
};

}  // namespace fairgw::obscore
