#pragma once

// Random provenance pipelines for property tests and the acceptance run.

#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include "fairgw/provenance.hpp"
#include "test_support.hpp"

namespace fairgw::fixtures {

inline std::string iso_time(long long seconds) {
  const long long day = seconds / 86400, rem = seconds % 86400;
  char buf[40];
  std::snprintf(buf, sizeof buf, "2024-%02lld-%02lldT%02lld:%02lld:%02lld.000Z", 1 + (day / 28) % 12, 1 + day % 28,
                rem / 3600, (rem / 60) % 60, rem % 60);
  return buf;
}

inline std::vector<prov::ActivityDescription> pipeline_descriptions() {
  using prov::ParamType;
  return {
      {prov::description_id("cone_cut", "2.1"), "cone_cut", "2.1", "select events in a cone",
       {{"radius", ParamType::Float, "deg", true}, {"label", ParamType::String, "", false}}},
      {prov::description_id("e_window", "0.3.1"), "e_window", "0.3.1", "energy window",
       {{"emin", ParamType::Float, "TeV", true}, {"emax", ParamType::Float, "TeV", true}}},
      {prov::description_id("stack", "1.0"), "stack", "1.0", "merge inputs",
       {{"nmax", ParamType::Int, "", false}}},
  };
}

/// Random identifier; sometimes long or containing quotes so that card
/// continuation and escaping are exercised.
template <class Rng>
std::string random_id(Rng& rng, const std::string& stem) {
  switch (rng() % 6) {
    case 0: return stem + "-" + std::string(40 + rng() % 120, 'x') + std::to_string(rng() % 1000);
    case 1: return stem + "'q'" + std::to_string(rng() % 1000);
    default: return "";  // auto-generated
  }
}

struct Pipeline {
  prov::Store store;
  std::vector<std::string> generated;  // in creation order
};

/// 1-6 chained activities with fan-in <= 3 over a few root inputs.
template <class Rng>
Pipeline random_pipeline(Rng& rng) {
  Pipeline p;
  const auto descs = pipeline_descriptions();
  for (const auto& d : descs) p.store.add_description(d);
  std::vector<std::string> pool;
  const int roots = 1 + static_cast<int>(rng() % 3);
  for (int i = 0; i < roots; ++i) {
    const std::string id = "root" + std::to_string(i) + "-" + std::to_string(rng() % 100000);
    if (rng() % 2) p.store.add_entity({id, "input " + std::to_string(i), "/data/" + id + ".fits", {}, {}, {}});
    pool.push_back(id);
  }
  const int steps = 1 + static_cast<int>(rng() % 6);
  long long t = static_cast<long long>(rng() % 1000000);
  for (int s = 0; s < steps; ++s) {
    const auto& d = descs[rng() % descs.size()];
    prov::RunSpec run;
    run.description_id = d.id;
    for (const auto& pd : d.parameters) {
      if (!pd.required && rng() % 2) continue;
      switch (pd.type) {
        case prov::ParamType::Float: run.parameters[pd.name] = std::to_string((rng() % 10000) / 100.0); break;
        case prov::ParamType::Int: run.parameters[pd.name] = std::to_string(rng() % 50); break;
        case prov::ParamType::String: run.parameters[pd.name] = random_text(rng, 90); break;
      }
    }
    // Chain on the newest entity, plus up to two more distinct inputs.
    std::vector<std::string> used{pool.back()};
    const int extra = static_cast<int>(rng() % 3);
    for (int k = 0; k < extra; ++k) {
      const auto& cand = pool[rng() % pool.size()];
      if (std::find(used.begin(), used.end(), cand) == used.end()) used.push_back(cand);
    }
    run.used = used;
    const int outs = 1 + static_cast<int>(rng() % 2);
    for (int k = 0; k < outs; ++k)
      run.generated.push_back({random_id(rng, d.name), d.name + "-out", "/data/out" + std::to_string(k), {}});
    run.agent_id = rng() % 2 ? "alice" : "pipeline-bot";
    if (rng() % 2) run.workflow = "wf-" + std::to_string(rng() % 10);
    if (rng() % 2) run.instrument = rng() % 2 ? "HESS" : "CTA-N";
    run.start_time = iso_time(t);
    t += 1 + static_cast<long long>(rng() % 5000);
    run.end_time = iso_time(t);
    if (rng() % 3 == 0) run.activity_id = d.name + "-run-" + std::to_string(s);
    if (rng() % 4 == 0) run.comment = "note " + std::to_string(s);
    const auto res = p.store.record_run(run);
    for (const auto& g : res.generated) {
      pool.push_back(g);
      p.generated.push_back(g);
    }
  }
  return p;
}

}  // namespace fairgw::fixtures
