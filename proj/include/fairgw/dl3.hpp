#pragma once

// GADF-style DL3 observations: EVENTS, GTI and EFFECTIVE AREA HDUs.

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "fairgw/error.hpp"
#include "fairgw/fits.hpp"

namespace fairgw::dl3 {

enum class Errc { MissingHdu, MissingColumn, MissingKeyword, InvariantViolation };

inline std::string_view to_string(Errc e) {
  switch (e) {
    case Errc::MissingHdu: return "MissingHdu";
    case Errc::MissingColumn: return "MissingColumn";
    case Errc::MissingKeyword: return "MissingKeyword";
    case Errc::InvariantViolation: return "InvariantViolation";
  }
  return "Unknown";
}

using Dl3Error = Error<Errc>;

struct EventRecord {
  std::int64_t event_id = 0;
  double time = 0;    // s since the reference epoch
  double ra = 0;      // deg
  double dec = 0;     // deg
  double energy = 0;  // TeV

  bool operator==(const EventRecord&) const = default;
};

struct GoodTimeInterval {
  double start = 0;
  double stop = 0;

  bool operator==(const GoodTimeInterval&) const = default;
};

/// Effective area on an (energy, field offset) grid; area[i][j] is the value
/// for energy bin i and offset bin j, in m^2.
struct EffectiveArea {
  std::vector<double> energy_lo, energy_hi;  // TeV
  std::vector<double> offset_lo, offset_hi;  // deg
  std::vector<std::vector<double>> area;

  bool operator==(const EffectiveArea&) const = default;
};

struct Observation {
  std::string obs_id;
  double tstart = 0, tstop = 0;
  double ontime = 0, livetime = 0;
  double deadc = 1;
  double ra_pnt = 0, dec_pnt = 0;
  double mjdref = 0;  // MJDREFI + MJDREFF, days
  std::vector<EventRecord> events;
  std::vector<GoodTimeInterval> gtis;
  std::optional<EffectiveArea> aeff;

  /// Non-reserved primary-header cards, kept verbatim.
  std::vector<fits::Card> primary_cards;
  /// Non-reserved EVENTS-header cards (including PRV* provenance cards).
  std::vector<fits::Card> extra_cards;
  /// HDUs other than EVENTS / GTI / EFFECTIVE AREA (e.g. other IRFs).
  std::vector<fits::Hdu> extra_hdus;

  bool operator==(const Observation&) const = default;
};

enum class Severity { Error, Warning };

inline std::string_view to_string(Severity s) { return s == Severity::Error ? "error" : "warning"; }

struct Finding {
  Severity severity;
  std::string field;
  std::string message;

  bool operator==(const Finding&) const = default;
};

inline constexpr double kLivetimeRelTol = 1e-6;

namespace detail {

inline std::string normalize_extname(std::string_view s) {
  while (!s.empty() && s.back() == ' ') s.remove_suffix(1);
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

inline bool finite(double v) { return std::isfinite(v); }

inline std::string num(double v) {
  std::array<char, 32> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), end);
}

inline void check_edges(std::vector<Finding>& out, const std::vector<double>& lo, const std::vector<double>& hi,
                        std::string_view what) {
  if (lo.size() != hi.size() || lo.empty()) {
    out.push_back({Severity::Error, "aeff", std::string(what) + " bin edge arrays are empty or unequal"});
    return;
  }
  for (std::size_t i = 0; i < lo.size(); ++i) {
    if (!(finite(lo[i]) && finite(hi[i]) && lo[i] < hi[i])) {
      out.push_back({Severity::Error, "aeff", std::string(what) + " bin " + std::to_string(i) + " is not increasing"});
      return;
    }
    if (i + 1 < lo.size() && lo[i + 1] != hi[i]) {
      out.push_back({Severity::Error, "aeff", std::string(what) + " bins are not contiguous at " + std::to_string(i)});
      return;
    }
  }
}

}  // namespace detail

/// Conformance check. Invariant breaches are errors; events that fall
/// inside [tstart, tstop] but outside every GTI are warnings.
inline std::vector<Finding> validate_dl3(const Observation& obs) {
  using detail::finite;
  using detail::num;
  std::vector<Finding> out;
  auto error = [&](std::string field, std::string msg) {
    out.push_back({Severity::Error, std::move(field), std::move(msg)});
  };

  if (obs.obs_id.empty()) error("obs_id", "observation id is empty");
  if (!(finite(obs.tstart) && finite(obs.tstop) && obs.tstart < obs.tstop))
    error("tstart", "tstart " + num(obs.tstart) + " must be before tstop " + num(obs.tstop));
  if (!finite(obs.ontime) || obs.ontime < 0) error("ontime", "ontime must be finite and non-negative");
  const bool deadc_ok = finite(obs.deadc) && obs.deadc > 0 && obs.deadc <= 1;
  if (!deadc_ok) error("deadc", "deadc " + num(obs.deadc) + " is outside (0, 1]");
  if (!finite(obs.livetime) || obs.livetime > obs.ontime) {
    error("livetime", "livetime " + num(obs.livetime) + " exceeds ontime " + num(obs.ontime));
  } else if (deadc_ok) {
    const double expected = obs.ontime * obs.deadc;
    if (std::abs(obs.livetime - expected) > kLivetimeRelTol * std::abs(expected))
      error("livetime", "livetime " + num(obs.livetime) + " differs from ontime*deadc " + num(expected));
  }
  if (!(finite(obs.ra_pnt) && obs.ra_pnt >= 0 && obs.ra_pnt < 360)) error("ra_pnt", "pointing RA outside [0, 360)");
  if (!(finite(obs.dec_pnt) && obs.dec_pnt >= -90 && obs.dec_pnt <= 90))
    error("dec_pnt", "pointing Dec outside [-90, 90]");
  if (!finite(obs.mjdref)) error("mjdref", "reference epoch is not finite");

  for (std::size_t i = 0; i < obs.gtis.size(); ++i) {
    const auto& g = obs.gtis[i];
    if (!(finite(g.start) && finite(g.stop) && g.start < g.stop))
      error("gti", "interval " + std::to_string(i) + " has start >= stop");
  }

  std::unordered_set<std::int64_t> ids;
  ids.reserve(obs.events.size());
  for (const auto& ev : obs.events) {
    const std::string tag = "event " + std::to_string(ev.event_id) + ": ";
    if (!ids.insert(ev.event_id).second) error("event_id", tag + "duplicate event id");
    if (!(finite(ev.dec) && ev.dec >= -90 && ev.dec <= 90)) error("dec", tag + "dec " + num(ev.dec) + " outside [-90, 90]");
    if (!(finite(ev.ra) && ev.ra >= 0 && ev.ra < 360)) error("ra", tag + "ra " + num(ev.ra) + " outside [0, 360)");
    if (!(finite(ev.energy) && ev.energy > 0)) error("energy", tag + "energy must be positive");
    if (!(finite(ev.time) && ev.time >= obs.tstart && ev.time <= obs.tstop)) {
      error("time", tag + "time " + num(ev.time) + " outside [tstart, tstop]");
      continue;
    }
    const bool in_gti = std::any_of(obs.gtis.begin(), obs.gtis.end(),
                                    [&](const GoodTimeInterval& g) { return ev.time >= g.start && ev.time <= g.stop; });
    if (!in_gti) out.push_back({Severity::Warning, "time", tag + "time " + num(ev.time) + " is outside every GTI"});
  }

  if (obs.aeff) {
    const auto& a = *obs.aeff;
    const std::size_t before = out.size();
    detail::check_edges(out, a.energy_lo, a.energy_hi, "energy");
    detail::check_edges(out, a.offset_lo, a.offset_hi, "offset");
    if (out.size() == before) {
      bool shape_ok = a.area.size() == a.energy_lo.size();
      for (const auto& row : a.area) shape_ok = shape_ok && row.size() == a.offset_lo.size();
      const bool values_ok = shape_ok && std::all_of(a.area.begin(), a.area.end(), [](const auto& row) {
        return std::all_of(row.begin(), row.end(), [](double v) { return finite(v) && v >= 0; });
      });
      if (!shape_ok)
        error("aeff", "area grid shape does not match the bin edges");
      else if (!values_ok)
        error("aeff", "negative or non-finite effective area");
    }
  }
  return out;
}

inline bool has_errors(const std::vector<Finding>& findings) {
  return std::any_of(findings.begin(), findings.end(), [](const Finding& f) { return f.severity == Severity::Error; });
}

inline void require_valid(const Observation& obs) {
  for (const auto& f : validate_dl3(obs))
    if (f.severity == Severity::Error) throw Dl3Error(Errc::InvariantViolation, f.field + ": " + f.message);
}

// ---------------------------------------------------------------------------
// HDU <-> Observation

namespace detail {

struct ColumnSpec {
  std::string_view name;
  fits::FormCode form;
  std::optional<std::string_view> unit;
};

inline constexpr ColumnSpec kEventColumns[] = {
    {"EVENT_ID", fits::FormCode::Int64, std::nullopt},
    {"TIME", fits::FormCode::Float64, "s"},
    {"RA", fits::FormCode::Float32, "deg"},
    {"DEC", fits::FormCode::Float32, "deg"},
    {"ENERGY", fits::FormCode::Float32, "TeV"},
};

inline constexpr ColumnSpec kGtiColumns[] = {
    {"START", fits::FormCode::Float64, "s"},
    {"STOP", fits::FormCode::Float64, "s"},
};

inline constexpr ColumnSpec kAeffColumns[] = {
    {"ENERG_LO", fits::FormCode::Float64, "TeV"}, {"ENERG_HI", fits::FormCode::Float64, "TeV"},
    {"THETA_LO", fits::FormCode::Float64, "deg"}, {"THETA_HI", fits::FormCode::Float64, "deg"},
    {"EFFAREA", fits::FormCode::Float64, "m2"},
};

inline constexpr std::string_view kEventKeywords[] = {"OBS_ID",  "TSTART",  "TSTOP",   "ONTIME",  "LIVETIME",
                                                      "DEADC",   "RA_PNT",  "DEC_PNT", "MJDREFI", "MJDREFF"};

inline bool is_structural(std::string_view kw) {
  static const std::set<std::string_view> fixed = {"XTENSION", "BITPIX",   "NAXIS",    "NAXIS1",   "NAXIS2",
                                                   "PCOUNT",   "GCOUNT",   "TFIELDS",  "EXTNAME",  "HDUCLASS",
                                                   "HDUDOC",   "HDUVERS",  "HDUCLAS1", "HDUCLAS2", "SIMPLE",
                                                   "EXTEND"};
  if (fixed.contains(kw)) return true;
  // Per-column keywords: TTYPEn, TFORMn, TUNITn, TNULLn, TDISPn, ...
  static constexpr std::string_view prefixes[] = {"TTYPE", "TFORM", "TUNIT", "TNULL", "TDISP",
                                                  "TSCAL", "TZERO", "TDIM",  "TLMIN", "TLMAX"};
  for (auto p : prefixes) {
    if (kw.size() > p.size() && kw.starts_with(p) &&
        std::all_of(kw.begin() + static_cast<std::ptrdiff_t>(p.size()), kw.end(),
                    [](char c) { return c >= '0' && c <= '9'; }))
      return true;
  }
  return false;
}

inline bool is_event_keyword(std::string_view kw) {
  return std::find(std::begin(kEventKeywords), std::end(kEventKeywords), kw) != std::end(kEventKeywords);
}

inline bool numeric_form_matches(fits::FormCode have, fits::FormCode want) {
  using F = fits::FormCode;
  const bool int_want = want == F::Int32 || want == F::Int64;
  const bool int_have = have == F::Int32 || have == F::Int64;
  const bool flt_want = want == F::Float32 || want == F::Float64;
  const bool flt_have = have == F::Float32 || have == F::Float64;
  return (int_want && int_have) || (flt_want && flt_have);
}

/// Resolves the named columns of `t`, checking type class and unit.
template <std::size_t N>
std::array<std::size_t, N> locate_columns(const fits::BinTable& t, const ColumnSpec (&specs)[N]) {
  std::array<std::size_t, N> idx{};
  for (std::size_t k = 0; k < N; ++k) {
    const auto& s = specs[k];
    auto i = t.column_index(s.name);
    if (!i) throw Dl3Error(Errc::MissingColumn, t.name + "." + std::string(s.name));
    const auto& col = t.columns[*i];
    if (!numeric_form_matches(col.form.code, s.form))
      throw Dl3Error(Errc::MissingColumn, t.name + "." + std::string(s.name) + " has an incompatible TFORM");
    if (s.unit && col.unit.value_or("") != *s.unit)
      throw Dl3Error(Errc::MissingKeyword, "unit mismatch: " + t.name + "." + std::string(s.name) + " expects '" +
                                               std::string(*s.unit) + "', found '" + col.unit.value_or("") + "'");
    idx[k] = *i;
  }
  return idx;
}

inline double as_double(const fits::Cell& c) {
  if (const auto* d = std::get_if<double>(&c)) return *d;
  if (const auto* f = std::get_if<float>(&c)) return static_cast<double>(*f);
  if (const auto* i = std::get_if<std::int32_t>(&c)) return *i;
  if (const auto* k = std::get_if<std::int64_t>(&c)) return static_cast<double>(*k);
  throw Dl3Error(Errc::MissingColumn, "string cell where a number was expected");
}

inline std::int64_t as_int(const fits::Cell& c) {
  if (const auto* k = std::get_if<std::int64_t>(&c)) return *k;
  if (const auto* i = std::get_if<std::int32_t>(&c)) return *i;
  throw Dl3Error(Errc::MissingColumn, "non-integer cell where an integer was expected");
}

inline double require_real(const fits::Header& h, std::string_view kw) {
  auto v = h.real(kw);
  if (!v) throw Dl3Error(Errc::MissingKeyword, std::string(kw));
  return *v;
}

inline std::vector<fits::Column> make_columns(std::span<const ColumnSpec> specs) {
  std::vector<fits::Column> cols;
  for (const auto& s : specs) {
    fits::Column c{std::string(s.name), {s.form, 1}, std::nullopt};
    if (s.unit) c.unit = std::string(*s.unit);
    cols.push_back(std::move(c));
  }
  return cols;
}

inline std::vector<fits::Card> hduclass(std::string_view clas1, std::optional<std::string_view> clas2 = {}) {
  std::vector<fits::Card> c{fits::make_card("HDUCLASS", std::string("GADF")),
                            fits::make_card("HDUCLAS1", std::string(clas1))};
  if (clas2) c.push_back(fits::make_card("HDUCLAS2", std::string(*clas2)));
  return c;
}

inline EffectiveArea parse_aeff(const fits::BinTable& t) {
  const auto idx = locate_columns(t, kAeffColumns);
  // One row per (energy bin, offset bin), energy-major.
  EffectiveArea a;
  std::vector<std::pair<double, double>> offsets;
  for (const auto& row : t.rows) {
    const double elo = as_double(row[idx[0]]), ehi = as_double(row[idx[1]]);
    const double tlo = as_double(row[idx[2]]), thi = as_double(row[idx[3]]);
    if (a.energy_lo.empty() || a.energy_lo.back() != elo || a.energy_hi.back() != ehi) {
      a.energy_lo.push_back(elo);
      a.energy_hi.push_back(ehi);
      a.area.emplace_back();
    }
    if (a.energy_lo.size() == 1) {
      a.offset_lo.push_back(tlo);
      a.offset_hi.push_back(thi);
    } else {
      const std::size_t j = a.area.back().size();
      if (j >= a.offset_lo.size() || a.offset_lo[j] != tlo || a.offset_hi[j] != thi)
        throw Dl3Error(Errc::InvariantViolation, "aeff: offset grid differs between energy bins");
    }
    a.area.back().push_back(as_double(row[idx[4]]));
  }
  for (const auto& r : a.area)
    if (r.size() != a.offset_lo.size()) throw Dl3Error(Errc::InvariantViolation, "aeff: ragged offset grid");
  return a;
}

}  // namespace detail

inline Observation parse_dl3(const std::vector<fits::Hdu>& hdus) {
  const fits::Hdu* events = nullptr;
  const fits::Hdu* gti = nullptr;
  const fits::Hdu* aeff = nullptr;
  Observation obs;
  for (std::size_t k = 1; k < hdus.size(); ++k) {
    const auto& h = hdus[k];
    const std::string name = detail::normalize_extname(h.header.string("EXTNAME").value_or(""));
    if (name == "EVENTS" && !events && h.table)
      events = &h;
    else if (name == "GTI" && !gti && h.table)
      gti = &h;
    else if (name == "EFFECTIVE AREA" && !aeff && h.table)
      aeff = &h;
    else
      obs.extra_hdus.push_back(h);
  }
  if (!events) throw Dl3Error(Errc::MissingHdu, "no EVENTS binary table");

  if (!hdus.empty())
    for (const auto& c : hdus[0].header.cards)
      if (!detail::is_structural(c.keyword) || c.is_commentary()) obs.primary_cards.push_back(c);

  const auto& h = events->header;
  if (const auto* id = h.find("OBS_ID")) {
    if (const auto* s = std::get_if<std::string>(&id->value))
      obs.obs_id = *s;
    else if (const auto* i = std::get_if<std::int64_t>(&id->value))
      obs.obs_id = std::to_string(*i);
    else
      throw Dl3Error(Errc::MissingKeyword, "OBS_ID has no usable value");
  } else {
    throw Dl3Error(Errc::MissingKeyword, "OBS_ID");
  }
  obs.tstart = detail::require_real(h, "TSTART");
  obs.tstop = detail::require_real(h, "TSTOP");
  obs.ontime = detail::require_real(h, "ONTIME");
  obs.livetime = detail::require_real(h, "LIVETIME");
  obs.deadc = detail::require_real(h, "DEADC");
  obs.ra_pnt = detail::require_real(h, "RA_PNT");
  obs.dec_pnt = detail::require_real(h, "DEC_PNT");
  obs.mjdref = detail::require_real(h, "MJDREFI") + detail::require_real(h, "MJDREFF");
  for (const auto& c : h.cards)
    if (c.is_commentary() || !(detail::is_structural(c.keyword) || detail::is_event_keyword(c.keyword)))
      obs.extra_cards.push_back(c);

  const auto& et = *events->table;
  const auto ei = detail::locate_columns(et, detail::kEventColumns);
  obs.events.reserve(et.rows.size());
  for (const auto& row : et.rows)
    obs.events.push_back({detail::as_int(row[ei[0]]), detail::as_double(row[ei[1]]), detail::as_double(row[ei[2]]),
                          detail::as_double(row[ei[3]]), detail::as_double(row[ei[4]])});

  if (gti) {
    const auto gi = detail::locate_columns(*gti->table, detail::kGtiColumns);
    for (const auto& row : gti->table->rows)
      obs.gtis.push_back({detail::as_double(row[gi[0]]), detail::as_double(row[gi[1]])});
  } else {
    obs.gtis.push_back({obs.tstart, obs.tstop});
  }
  if (aeff) obs.aeff = detail::parse_aeff(*aeff->table);

  require_valid(obs);
  return obs;
}

/// Event RA/Dec/energy are stored as single-precision columns.
inline std::vector<fits::Hdu> write_dl3(const Observation& obs) {
  require_valid(obs);
  std::vector<fits::Hdu> hdus;
  hdus.push_back(fits::make_primary_hdu(obs.primary_cards));

  fits::BinTable ev{"EVENTS", detail::make_columns(detail::kEventColumns), {}};
  ev.rows.reserve(obs.events.size());
  for (const auto& e : obs.events)
    ev.rows.push_back({e.event_id, e.time, static_cast<float>(e.ra), static_cast<float>(e.dec),
                       static_cast<float>(e.energy)});
  auto cards = detail::hduclass("EVENTS");
  const double mjdi = std::floor(obs.mjdref);
  cards.push_back(fits::make_card("OBS_ID", obs.obs_id, "observation identifier"));
  cards.push_back(fits::make_card("TSTART", obs.tstart, "[s] start time"));
  cards.push_back(fits::make_card("TSTOP", obs.tstop, "[s] stop time"));
  cards.push_back(fits::make_card("ONTIME", obs.ontime, "[s] total good time"));
  cards.push_back(fits::make_card("LIVETIME", obs.livetime, "[s] ontime * deadc"));
  cards.push_back(fits::make_card("DEADC", obs.deadc, "dead time correction"));
  cards.push_back(fits::make_card("RA_PNT", obs.ra_pnt, "[deg] pointing RA"));
  cards.push_back(fits::make_card("DEC_PNT", obs.dec_pnt, "[deg] pointing Dec"));
  cards.push_back(fits::make_card("MJDREFI", static_cast<std::int64_t>(mjdi), "[d] reference MJD, integer part"));
  cards.push_back(fits::make_card("MJDREFF", obs.mjdref - mjdi, "[d] reference MJD, fractional part"));
  for (const auto& c : obs.extra_cards) cards.push_back(c);
  hdus.push_back(fits::make_bintable_hdu(std::move(ev), std::move(cards)));

  fits::BinTable gt{"GTI", detail::make_columns(detail::kGtiColumns), {}};
  for (const auto& g : obs.gtis) gt.rows.push_back({g.start, g.stop});
  hdus.push_back(fits::make_bintable_hdu(std::move(gt), detail::hduclass("GTI")));

  if (obs.aeff) {
    const auto& a = *obs.aeff;
    fits::BinTable at{"EFFECTIVE AREA", detail::make_columns(detail::kAeffColumns), {}};
    for (std::size_t i = 0; i < a.energy_lo.size(); ++i)
      for (std::size_t j = 0; j < a.offset_lo.size(); ++j)
        at.rows.push_back({a.energy_lo[i], a.energy_hi[i], a.offset_lo[j], a.offset_hi[j], a.area[i][j]});
    hdus.push_back(fits::make_bintable_hdu(std::move(at), detail::hduclass("RESPONSE", "EFF_AREA")));
  }
  for (const auto& x : obs.extra_hdus) hdus.push_back(x);
  return hdus;
}

inline Observation read_dl3_bytes(std::span<const std::uint8_t> bytes) { return parse_dl3(fits::read_fits(bytes)); }

inline fits::Bytes write_dl3_bytes(const Observation& obs) { return fits::write_fits(write_dl3(obs)); }

}  // namespace fairgw::dl3
