#include <gtest/gtest.h>

#include <random>
#include <thread>

#include "fairgw/obscore.hpp"
#include "test_support.hpp"

using namespace fairgw;
using obscore::Catalog;
using obscore::Errc;
using obscore::Record;

namespace {

dl3::Observation day_long() {
  dl3::Observation o;
  o.obs_id = "23523";
  o.tstart = 0;
  o.tstop = 86400;
  o.ontime = 86400;
  o.deadc = 0.9;
  o.livetime = 86400 * 0.9;
  o.ra_pnt = 83.633;
  o.dec_pnt = 22.014;
  o.mjdref = 53000.0;
  o.gtis = {{0, 86400}};
  return o;
}

Record record(const std::string& id, double ra = 10, double dec = 20) {
  Record r;
  r.obs_collection = "c";
  r.obs_id = id;
  r.obs_publisher_did = "ivo://a/c#" + id;
  r.access_url = "http://x/" + id + ".fits";
  r.s_ra = ra;
  r.s_dec = dec;
  r.s_fov = 5;
  r.t_min = 53000;
  r.t_max = 53001;
  r.em_min = 1e-20;
  r.em_max = 1e-17;
  r.facility_name = "H.E.S.S.";
  r.instrument_name = "H.E.S.S.";
  return r;
}

}  // namespace

TEST(EnergyToWavelength, Examples) {
  // 1 eV = 1e-12 TeV
  EXPECT_DOUBLE_EQ(obscore::energy_to_wavelength(1e-12), 1.23984193e-6);
  EXPECT_DOUBLE_EQ(obscore::energy_to_wavelength(1e-6), 1.23984193e-12);
  EXPECT_DOUBLE_EQ(obscore::energy_to_wavelength(100), 1.23984193e-20);
  EXPECT_DOUBLE_EQ(obscore::energy_to_wavelength(0.1), 1.23984193e-17);
  EXPECT_THROW(obscore::energy_to_wavelength(0), obscore::ObsCoreError);
  EXPECT_THROW(obscore::energy_to_wavelength(-1), obscore::ObsCoreError);
}

TEST(EnergyToWavelength, Antitone) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> logE(-8, 4);
  for (int i = 0; i < 20000; ++i) {
    const double a = std::pow(10.0, logE(rng)), b = std::pow(10.0, logE(rng));
    if (a == b) continue;
    EXPECT_EQ(obscore::energy_to_wavelength(a) < obscore::energy_to_wavelength(b), a > b);
  }
}

TEST(ToObscore, MapsFields) {
  obscore::Config cfg;
  cfg.access_base_url = "https://hess-dr.obspm.fr/data";
  const Record r = obscore::to_obscore(day_long(), cfg);
  EXPECT_EQ(r.t_min, 53000.0);
  EXPECT_EQ(r.t_max, 53001.0);
  EXPECT_EQ(r.calib_level, 3);
  EXPECT_EQ(r.dataproduct_type, "event");
  EXPECT_EQ(r.obs_publisher_did, "ivo://hess-dr.obspm.fr/hess-dl3-dr1#23523");
  EXPECT_EQ(r.access_url, "https://hess-dr.obspm.fr/data/23523.fits");
  EXPECT_DOUBLE_EQ(r.em_min, 1.23984193e-20);
  EXPECT_DOUBLE_EQ(r.em_max, 1.23984193e-17);
  EXPECT_EQ(r.t_exptime, 86400 * 0.9);
  EXPECT_EQ(r.s_ra, 83.633);
  EXPECT_EQ(r.s_fov, 5.0);
  EXPECT_EQ(r.facility_name, "H.E.S.S.");
  EXPECT_FALSE(r.target_name);
  EXPECT_GT(r.access_estsize, 0);
  EXPECT_EQ(obscore::to_obscore(day_long(), cfg), r);  // deterministic
}

TEST(ToObscore, TargetFromObjectCard) {
  dl3::Observation o = day_long();
  o.extra_cards.push_back(fits::make_card("OBJECT", std::string("Crab")));
  EXPECT_EQ(obscore::to_obscore(o, {}).target_name, "Crab");
}

TEST(ToObscore, InvalidConfig) {
  obscore::Config a;
  a.authority.clear();
  obscore::Config b;
  b.e_min_tev = 10;
  b.e_max_tev = 10;
  obscore::Config c;
  c.collection.clear();
  for (const auto& cfg : {a, b, c}) {
    try {
      obscore::to_obscore(day_long(), cfg);
      FAIL();
    } catch (const obscore::ObsCoreError& e) {
      EXPECT_EQ(e.kind(), Errc::InvalidConfig);
    }
  }
}

TEST(CatalogIngest, Examples) {
  Catalog c = obscore::ingest({}, record("1"));
  EXPECT_EQ(c.size(), 1u);

  Record newer = record("1");
  newer.target_name = "latest";
  c = obscore::ingest(c, newer);
  ASSERT_EQ(c.size(), 1u);
  EXPECT_EQ(c.records()[0].target_name, "latest");

  Catalog ten;
  for (int i = 0; i < 10; ++i) ten = obscore::ingest(ten, record(std::to_string(i)));
  EXPECT_EQ(ten.size(), 10u);
  EXPECT_NE(ten.find("ivo://a/c#7"), nullptr);
  EXPECT_EQ(ten.find_obs_id("7")->obs_publisher_did, "ivo://a/c#7");
}

TEST(CatalogIngest, RejectsInvalidRecord) {
  Record r = record("x");
  r.calib_level = 2;
  EXPECT_THROW(obscore::ingest({}, r), obscore::ObsCoreError);
}

TEST(CatalogPersistence, EmptyAndRoundTrip) {
  EXPECT_EQ(obscore::save_catalog({}), "");
  EXPECT_EQ(obscore::load_catalog(""), Catalog{});

  std::mt19937_64 rng(11);
  Catalog c;
  for (int i = 0; i < 50; ++i) {
    Record r = record("obs" + std::to_string(i), fixtures::finite_double(rng), 1.0 / (i + 3));
    if (i % 3 == 0) r.target_name = "T \"quoted\" \\ " + std::to_string(i);
    r.t_min = 50000 + i / 7.0;
    r.t_max = r.t_min + 0.1;
    c.upsert(r);
  }
  const std::string text = obscore::save_catalog(c);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 50);
  EXPECT_EQ(obscore::load_catalog(text), c);
}

TEST(CatalogPersistence, MalformedLines) {
  const std::string good = obscore::save_catalog(obscore::ingest({}, record("1")));
  auto j = nlohmann::json::parse(good);
  j.erase("obs_id");
  const std::string missing = good + j.dump() + "\n";
  try {
    obscore::load_catalog(missing);
    FAIL();
  } catch (const obscore::ObsCoreError& e) {
    EXPECT_EQ(e.kind(), Errc::MalformedLine);
    EXPECT_NE(e.message().find("line 2"), std::string::npos);
  }
  EXPECT_THROW(obscore::load_catalog("{not json\n"), obscore::ObsCoreError);
  auto extra = nlohmann::json::parse(good);
  extra["bogus"] = 1;
  EXPECT_THROW(obscore::load_catalog(extra.dump()), obscore::ObsCoreError);
  EXPECT_THROW(obscore::load_catalog(good + good), obscore::ObsCoreError);
}

TEST(CatalogHolder, ReadersKeepTheirSnapshot) {
  obscore::CatalogHolder holder;
  auto before = holder.snapshot();
  holder.update([](Catalog& c) { c.upsert(record("a")); });
  EXPECT_EQ(before->size(), 0u);
  EXPECT_EQ(holder.snapshot()->size(), 1u);
  EXPECT_THROW(holder.update([](Catalog& c) {
    c.upsert(record("b"));
    throw std::runtime_error("abort");
  }),
               std::runtime_error);
  EXPECT_EQ(holder.snapshot()->size(), 1u);

  std::vector<std::thread> threads;
  for (int t = 0; t < 4; ++t)
    threads.emplace_back([&, t] {
      for (int i = 0; i < 50; ++i) {
        holder.update([&](Catalog& c) { c.upsert(record(std::to_string(t) + "-" + std::to_string(i))); });
        auto snap = holder.snapshot();
        EXPECT_GE(snap->size(), 1u);
      }
    });
  for (auto& th : threads) th.join();
  EXPECT_EQ(holder.snapshot()->size(), 201u);
}
