#include <gtest/gtest.h>

#include <random>

#include "fairgw/dl3.hpp"
#include "test_support.hpp"

using namespace fairgw;
using dl3::Errc;
using dl3::Observation;

namespace {

Observation empty_fixture() {
  Observation o;
  o.obs_id = "23523";
  o.tstart = 0;
  o.tstop = 1682;
  o.ontime = 1682;
  o.deadc = 0.95;
  o.livetime = 1682 * 0.95;
  o.ra_pnt = 83.633;
  o.dec_pnt = 22.014;
  o.mjdref = 51910.00074287037;
  return o;
}

Observation two_events() {
  Observation o = empty_fixture();
  o.gtis = {{0, 1682}};
  o.events = {{1, 10.5, 83.5f, 22.0f, 1.25f}, {2, 100.0, 84.0f, 21.5f, 0.5f}};
  return o;
}

template <class F>
Errc error_kind(F&& f) {
  try {
    f();
  } catch (const dl3::Dl3Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no Dl3Error thrown";
  return Errc::MissingHdu;
}

}  // namespace

TEST(Dl3Parse, EmptyFixtureGetsDefaultGti) {
  // Build the file without a GTI HDU so the default interval applies.
  auto hdus = dl3::write_dl3(empty_fixture());
  std::erase_if(hdus, [](const fits::Hdu& h) { return h.header.string("EXTNAME") == "GTI"; });
  const auto bytes = fits::write_fits(hdus);
  const Observation o = dl3::read_dl3_bytes(bytes);
  EXPECT_EQ(o.obs_id, "23523");
  EXPECT_TRUE(o.events.empty());
  ASSERT_EQ(o.gtis.size(), 1u);
  EXPECT_EQ(o.gtis[0], (dl3::GoodTimeInterval{0, 1682}));
  EXPECT_FALSE(o.aeff);
  EXPECT_DOUBLE_EQ(o.mjdref, 51910.00074287037);
}

TEST(Dl3Parse, DecOutOfRange) {
  auto hdus = dl3::write_dl3(two_events());
  std::get<float>(hdus[1].table->rows[0][3]) = 91.0f;
  try {
    dl3::parse_dl3(hdus);
    FAIL();
  } catch (const dl3::Dl3Error& e) {
    EXPECT_EQ(e.kind(), Errc::InvariantViolation);
    EXPECT_EQ(e.message().rfind("dec", 0), 0u) << e.message();
  }
}

TEST(Dl3Parse, PrimaryOnlyIsMissingHdu) {
  std::vector<fits::Hdu> hdus{fits::make_primary_hdu()};
  EXPECT_EQ(error_kind([&] { dl3::parse_dl3(hdus); }), Errc::MissingHdu);
}

TEST(Dl3Parse, MissingColumnAndKeyword) {
  auto hdus = dl3::write_dl3(two_events());
  {
    auto h = hdus;
    auto& t = *h[1].table;
    t.columns.erase(t.columns.begin() + 4);
    for (auto& r : t.rows) r.erase(r.begin() + 4);
    std::vector<fits::Card> extra(h[1].header.cards.begin() + 23, h[1].header.cards.end());
    h[1] = fits::make_bintable_hdu(t, extra);
    EXPECT_EQ(error_kind([&] { dl3::parse_dl3(h); }), Errc::MissingColumn);
  }
  {
    auto h = hdus;
    h[1].header.erase("LIVETIME");
    EXPECT_EQ(error_kind([&] { dl3::parse_dl3(h); }), Errc::MissingKeyword);
  }
  {
    auto h = hdus;
    h[1].table->columns[1].unit = "ms";
    h[1].header.set("TUNIT2", std::string("ms"));
    try {
      dl3::parse_dl3(h);
      FAIL();
    } catch (const dl3::Dl3Error& e) {
      EXPECT_EQ(e.kind(), Errc::MissingKeyword);
      EXPECT_NE(e.message().find("unit mismatch"), std::string::npos);
    }
  }
}

TEST(Dl3Parse, ExtnameMatchIsCaseInsensitive) {
  auto hdus = dl3::write_dl3(two_events());
  hdus[1].header.set("EXTNAME", std::string("events  "));
  hdus[1].table->name = "events  ";
  const Observation o = dl3::parse_dl3(hdus);
  EXPECT_EQ(o.events.size(), 2u);
}

TEST(Dl3Write, RoundTripAndRowCount) {
  const Observation o = two_events();
  const auto hdus = dl3::write_dl3(o);
  ASSERT_GE(hdus.size(), 3u);
  EXPECT_EQ(hdus[1].header.integer("NAXIS2"), 2);
  EXPECT_EQ(dl3::parse_dl3(hdus), o);
  EXPECT_EQ(dl3::read_dl3_bytes(dl3::write_dl3_bytes(o)), o);
}

TEST(Dl3Write, LivetimeAboveOntime) {
  Observation o = two_events();
  o.livetime = o.ontime + 1;
  EXPECT_EQ(error_kind([&] { dl3::write_dl3(o); }), Errc::InvariantViolation);
}

TEST(Dl3Write, OpaqueIrfAndExtraCardsPreserved) {
  Observation o = two_events();
  o.extra_cards = {fits::make_card("OBJECT", std::string("Crab Nebula")),
                   fits::make_card("PRVENTID", std::string("23523"))};
  o.primary_cards = {fits::make_card("TELESCOP", std::string("HESS"))};
  fits::BinTable psf{"PSF", {{"RAD_LO", {fits::FormCode::Float64, 1}, std::string("deg")}}, {{0.1}, {0.2}}};
  o.extra_hdus.push_back(fits::make_bintable_hdu(psf, {fits::make_card("HDUCLAS2", std::string("PSF_TABLE"))}));
  const Observation back = dl3::read_dl3_bytes(dl3::write_dl3_bytes(o));
  EXPECT_EQ(back, o);
}

TEST(Dl3Validate, Findings) {
  EXPECT_TRUE(dl3::validate_dl3(two_events()).empty());

  Observation outside = two_events();
  outside.gtis = {{0, 50}};
  const auto w = dl3::validate_dl3(outside);
  ASSERT_EQ(w.size(), 1u);
  EXPECT_EQ(w[0].severity, dl3::Severity::Warning);
  EXPECT_EQ(w[0].field, "time");
  EXPECT_FALSE(dl3::has_errors(w));

  Observation dead = two_events();
  dead.deadc = 0;
  const auto e = dl3::validate_dl3(dead);
  ASSERT_EQ(e.size(), 1u);
  EXPECT_EQ(e[0].severity, dl3::Severity::Error);
  EXPECT_EQ(e[0].field, "deadc");

  Observation dup = two_events();
  dup.events[1].event_id = 1;
  EXPECT_TRUE(dl3::has_errors(dl3::validate_dl3(dup)));

  Observation mismatch = two_events();
  mismatch.livetime = mismatch.ontime * 0.5;
  const auto m = dl3::validate_dl3(mismatch);
  ASSERT_EQ(m.size(), 1u);
  EXPECT_EQ(m[0].field, "livetime");

  Observation late = two_events();
  late.events[0].time = 5000;
  EXPECT_EQ(dl3::validate_dl3(late).at(0).field, "time");

  Observation bad_aeff = two_events();
  bad_aeff.aeff = dl3::EffectiveArea{{0.1, 1.0}, {1.5, 10.0}, {0.0}, {1.0}, {{1.0}, {2.0}}};
  EXPECT_EQ(dl3::validate_dl3(bad_aeff).at(0).field, "aeff");
}

TEST(Dl3Property, RandomObservationsRoundTrip) {
  std::mt19937_64 rng(99);
  for (int i = 0; i < 40; ++i) {
    const Observation o = fixtures::random_observation(rng, 300);
    ASSERT_TRUE(dl3::validate_dl3(o).empty());
    ASSERT_EQ(dl3::read_dl3_bytes(dl3::write_dl3_bytes(o)), o) << "observation " << i;
  }
}
