#include <gtest/gtest.h>

#include <random>

#include "adql_oracle.hpp"
#include "fairgw/processing.hpp"
#include "test_support.hpp"

using namespace fairgw;
using namespace fairgw::proc;

namespace {

template <class F>
Errc error_of(F&& f) {
  try {
    f();
  } catch (const ProcError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no ProcError thrown";
  return Errc::BadInputs;
}

dl3::Observation observation_with(std::vector<dl3::EventRecord> events) {
  std::mt19937_64 rng(1);
  dl3::Observation o = fixtures::random_observation(rng, 0, "23523");
  for (auto& e : events) e.time = o.gtis.front().start;
  o.events = std::move(events);
  return o;
}

class TempDir {
 public:
  TempDir() {
    static int n = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("fairgw-proc-" + std::to_string(::getpid()) + "-" + std::to_string(n++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  [[nodiscard]] const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

/// Workspace rooted in `dir` holding one catalogued observation.
void seed(Workspace& ws, const std::filesystem::path& dir, const dl3::Observation& obs, bool persist = true) {
  ws.data_dir = dir / "data";
  if (persist) {
    ws.catalog_path = dir / "catalog.jsonl";
    ws.store_path = dir / "store.json";
  }
  std::filesystem::create_directories(ws.data_dir);
  const auto bytes = dl3::write_dl3_bytes(obs);
  io::write_atomic(ws.data_file(obs.obs_id), std::span<const std::uint8_t>(bytes));
  ws.catalog.update([&](obscore::Catalog& c) { c.upsert(obscore::to_obscore(obs, ws.obscore)); });
  register_descriptions(Registry::builtin(), ws.store);
}

RunRequest request(std::string activity, Params params, std::string input) {
  RunRequest r;
  r.activity = std::move(activity);
  r.params = std::move(params);
  r.inputs = {std::move(input)};
  r.agent = "alice";
  r.workflow = "demo";
  return r;
}

/// Headers with provenance cards removed, re-encoded.
fits::Bytes without_provenance(const fits::Bytes& bytes) {
  auto hdus = fits::read_fits(bytes);
  for (auto& h : hdus) {
    std::vector<fits::Card> kept;
    bool in_prv = false;
    for (const auto& c : h.header.cards) {
      if (prov::is_provenance_card(c)) {
        in_prv = true;
        continue;
      }
      if (in_prv && c.keyword == "CONTINUE") continue;
      in_prv = false;
      kept.push_back(c);
    }
    h.header.cards = kept;
  }
  return fits::write_fits(hdus);
}

}  // namespace

// --- transforms -------------------------------------------------------------

TEST(RegionSelect, Examples) {
  const auto obs = observation_with({{1, 0, 83.6, 22.0, 1.0}, {2, 0, 10.0, -80.0, 1.0}, {3, 0, 263.6, -22.0, 1.0}});
  EXPECT_EQ(region_select(obs, 83.6, 22.0, 180).events.size(), 3u);
  const auto exact = region_select(obs, 83.6, 22.0, 0);
  ASSERT_EQ(exact.events.size(), 1u);
  EXPECT_EQ(exact.events[0].event_id, 1);
  EXPECT_EQ(exact.obs_id, "23523-sel");
  EXPECT_EQ(exact.gtis, obs.gtis);
  EXPECT_EQ(exact.extra_cards, obs.extra_cards);
  EXPECT_EQ(error_of([&] { region_select(obs, 0, 0, -0.1); }), Errc::InvalidRadius);
  EXPECT_EQ(error_of([&] { region_select(obs, 0, 91, 1); }), Errc::InvalidCenter);
}

TEST(RegionSelect, MatchesBruteForceArccos) {
  std::mt19937_64 rng(7);
  int ambiguous = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const auto obs = fixtures::random_observation(rng, 100);
    const double radius = 0.5 + (trial % 4) * 0.5;
    const auto out = region_select(obs, obs.ra_pnt, obs.dec_pnt, radius);
    std::vector<std::int64_t> expect;
    std::set<std::int64_t> borderline;
    for (const auto& e : obs.events) {
      const double d = fixtures::arccos_separation(e.ra, e.dec, obs.ra_pnt, obs.dec_pnt);
      if (std::abs(d - radius) < 1e-6) borderline.insert(e.event_id);
      else if (d <= radius) expect.push_back(e.event_id);
    }
    std::vector<std::int64_t> got;
    for (const auto& e : out.events)
      if (!borderline.contains(e.event_id)) got.push_back(e.event_id);
    ambiguous += static_cast<int>(borderline.size());
    EXPECT_EQ(got, expect);
    EXPECT_LE(out.events.size(), obs.events.size());
  }
  EXPECT_LT(ambiguous, 5);
}

TEST(EnergyFilter, ExamplesAndOracle) {
  std::mt19937_64 rng(9);
  const auto obs = fixtures::random_observation(rng, 200);
  EXPECT_EQ(energy_filter(obs, 1e-12, std::numeric_limits<double>::infinity()).events, obs.events);
  EXPECT_EQ(energy_filter(obs, 1, 2).obs_id, obs.obs_id + "-eflt");
  EXPECT_EQ(error_of([&] { energy_filter(obs, 1, 1); }), Errc::InvalidRange);
  EXPECT_EQ(error_of([&] { energy_filter(obs, 0, 1); }), Errc::InvalidRange);
  for (int trial = 0; trial < 200; ++trial) {
    const auto o = fixtures::random_observation(rng, 100);
    const double lo = std::pow(10.0, -1.0 + 2.0 * (rng() % 1000) / 1000.0);
    const double hi = lo * (1.0 + (1 + rng() % 100) / 10.0);
    const auto out = energy_filter(o, lo, hi);
    std::vector<dl3::EventRecord> expect;
    std::copy_if(o.events.begin(), o.events.end(), std::back_inserter(expect),
                 [&](const auto& e) { return !(e.energy < lo) && e.energy < hi; });
    EXPECT_EQ(out.events, expect);
  }
}

TEST(CountsHistogram, ExamplesAndOracle) {
  const auto obs = observation_with({{1, 0, 0, 0, 0.5}, {2, 0, 0, 0, 1.0}, {3, 0, 0, 0, 9.0}, {4, 0, 0, 0, 10.0}});
  const auto h = counts_histogram(obs, {0.1, 1.0, 10.0});
  EXPECT_EQ(h.counts, (std::vector<std::int64_t>{1, 2}));  // 1.0 goes up, 10.0 is excluded
  const auto all = counts_histogram(obs, {0.1, 100.0});
  EXPECT_EQ(all.counts, std::vector<std::int64_t>{4});
  EXPECT_EQ(error_of([&] { counts_histogram(obs, {1.0}); }), Errc::BadEdges);
  EXPECT_EQ(error_of([&] { counts_histogram(obs, {1.0, 1.0}); }), Errc::BadEdges);
  EXPECT_EQ(error_of([&] { counts_histogram(obs, {2.0, 1.0}); }), Errc::BadEdges);

  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    const auto o = fixtures::random_observation(rng, 1000);
    std::vector<double> edges;
    for (int i = 0; i <= 10; ++i) edges.push_back(std::pow(10.0, -1.2 + 0.3 * i));
    const auto got = counts_histogram(o, edges);
    std::vector<std::int64_t> expect(10, 0);
    for (const auto& e : o.events)
      for (std::size_t b = 0; b < 10; ++b)
        if (edges[b] <= e.energy && e.energy < edges[b + 1]) ++expect[b];
    EXPECT_EQ(got.counts, expect);
  }
}

// --- run_activity -----------------------------------------------------------

TEST(RunActivity, CountsAndFiles) {
  TempDir dir;
  Workspace ws;
  std::mt19937_64 rng(2);
  const auto obs = fixtures::random_observation(rng, 300, "23523");
  seed(ws, dir.path(), obs);
  const auto registry = Registry::builtin();
  const auto before = ws.store.snapshot();
  const auto res = run_activity(registry, ws, request("region_select", {{"ra", std::to_string(obs.ra_pnt)},
                                                                          {"dec", std::to_string(obs.dec_pnt)},
                                                                          {"radius", "1.0"}},
                                                      "23523"));
  EXPECT_EQ(ws.catalog.snapshot()->size(), 2u);
  const auto after = ws.store.snapshot();
  EXPECT_EQ(after.activities.size(), before.activities.size() + 1);
  EXPECT_EQ(after.used.size(), 1u);
  EXPECT_EQ(after.was_generated_by.size(), 1u);
  ASSERT_EQ(res.outputs.size(), 1u);
  EXPECT_EQ(res.outputs[0], "23523-region_select-1");

  const auto bytes = io::read_bytes(ws.data_file(res.outputs[0]));
  const auto out = dl3::read_dl3_bytes(bytes);
  EXPECT_EQ(out.obs_id, res.outputs[0]);
  EXPECT_LE(out.events.size(), obs.events.size());
  const auto ls = prov::decode_last_step(prov::keywords_from_cards(provenance_header(fits::read_fits(bytes))));
  EXPECT_EQ(ls, prov::encode_last_step(after, res.outputs[0]));
  EXPECT_EQ(ls.instrument, "H.E.S.S.");
  EXPECT_EQ(ls.workflow, "demo");

  // Persisted state equals the in-memory state.
  EXPECT_EQ(prov::load_store(ws.store_path).snapshot(), after);
  EXPECT_EQ(obscore::load_catalog_file(ws.catalog_path).records(), ws.catalog.snapshot()->records());
}

TEST(RunActivity, ErrorsLeaveEverythingUnchanged) {
  TempDir dir;
  Workspace ws;
  std::mt19937_64 rng(3);
  seed(ws, dir.path(), fixtures::random_observation(rng, 50, "100"));
  const auto registry = Registry::builtin();
  const auto store0 = ws.store.snapshot();
  const auto cat0 = ws.catalog.snapshot()->records();
  const auto files0 = std::distance(std::filesystem::directory_iterator(ws.data_dir), {});

  EXPECT_EQ(error_of([&] { run_activity(registry, ws, request("smooth", {}, "100")); }), Errc::UnknownActivity);
  EXPECT_EQ(error_of([&] { run_activity(registry, ws, request("energy_filter", {{"emin", "1"}, {"emax", "2"}}, "999")); }),
            Errc::UnknownEntity);
  EXPECT_EQ(error_of([&] { run_activity(registry, ws, request("energy_filter", {{"emin", "2"}, {"emax", "1"}}, "100")); }),
            Errc::InvalidRange);
  EXPECT_THROW(run_activity(registry, ws, request("energy_filter", {{"emin", "x"}, {"emax", "1"}}, "100")),
               prov::ProvError);
  auto two = request("energy_filter", {{"emin", "1"}, {"emax", "2"}}, "100");
  two.inputs.push_back("100");
  EXPECT_EQ(error_of([&] { run_activity(registry, ws, two); }), Errc::BadInputs);

  // A failure while persisting rolls back the written output file.
  std::filesystem::create_directories(dir.path() / "blocked");
  ws.store_path = dir.path() / "blocked";
  EXPECT_ANY_THROW(run_activity(registry, ws, request("energy_filter", {{"emin", "1"}, {"emax", "2"}}, "100")));

  EXPECT_EQ(ws.store.snapshot(), store0);
  EXPECT_EQ(ws.catalog.snapshot()->records(), cat0);
  EXPECT_EQ(std::distance(std::filesystem::directory_iterator(ws.data_dir), {}), files0);
  EXPECT_EQ(obscore::load_catalog_file(ws.catalog_path).records().size(), cat0.size() - 1);  // never saved before
}

TEST(RunActivity, ThreeStepPipelineAncestry) {
  TempDir dir;
  Workspace ws;
  std::mt19937_64 rng(4);
  const auto obs = fixtures::random_observation(rng, 500, "23523");
  seed(ws, dir.path(), obs);
  const auto registry = Registry::builtin();
  const auto a = run_activity(registry, ws, request("region_select", {{"ra", std::to_string(obs.ra_pnt)},
                                                                        {"dec", std::to_string(obs.dec_pnt)},
                                                                        {"radius", "1.5"}},
                                                    "23523"));
  const auto b = run_activity(registry, ws, request("energy_filter", {{"emin", "0.5"}, {"emax", "50"}}, a.outputs[0]));
  const auto c = run_activity(registry, ws, request("counts_histogram", {{"edges", "0.5, 1, 5, 50"}}, b.outputs[0]));
  const auto g = ws.store.snapshot();
  const auto anc = prov::ancestry(g, c.outputs[0]);
  EXPECT_EQ(anc.activities.size(), 3u);
  EXPECT_EQ(anc.entities.size(), 4u);
  EXPECT_EQ(ws.catalog.snapshot()->size(), 3u);  // histograms are not observations

  for (const auto& id : {a.outputs[0], b.outputs[0], c.outputs[0]}) {
    const auto hdus = fits::read_fits(io::read_bytes(ws.data_file(id)));
    const auto frag = prov::extract_on_top(provenance_header(hdus));
    EXPECT_EQ(frag.activities.size(), 1u);
    EXPECT_EQ(prov::encode_last_step(frag, id), prov::encode_last_step(g, id));
  }
  const auto hist = fits::read_fits(io::read_bytes(ws.data_file(c.outputs[0])));
  ASSERT_EQ(hist.size(), 2u);
  std::int64_t total = 0;
  for (const auto& row : hist[1].table->rows) total += std::get<std::int64_t>(row[2]);
  const auto filtered = dl3::read_dl3_bytes(io::read_bytes(ws.data_file(b.outputs[0])));
  EXPECT_LE(total, static_cast<std::int64_t>(filtered.events.size()));
}

TEST(RunActivity, DeterministicApartFromProvenance) {
  TempDir dir;
  Workspace ws;
  std::mt19937_64 rng(5);
  const auto obs = fixtures::random_observation(rng, 200, "777");
  seed(ws, dir.path(), obs, false);
  const auto registry = Registry::builtin();
  const auto req = request("energy_filter", {{"emin", "0.3"}, {"emax", "30"}}, "777");
  const auto x = run_activity(registry, ws, req);
  const auto y = run_activity(registry, ws, req);
  ASSERT_NE(x.outputs[0], y.outputs[0]);
  auto bx = io::read_bytes(ws.data_file(x.outputs[0]));
  auto by = io::read_bytes(ws.data_file(y.outputs[0]));
  // obs_id follows the entity id; align it before comparing.
  auto ox = dl3::read_dl3_bytes(without_provenance(bx));
  auto oy = dl3::read_dl3_bytes(without_provenance(by));
  oy.obs_id = ox.obs_id;
  EXPECT_EQ(dl3::write_dl3_bytes(ox), dl3::write_dl3_bytes(oy));
}
