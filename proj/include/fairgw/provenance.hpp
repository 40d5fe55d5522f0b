#pragma once

// Provenance graph (entities, activities, agents, activity descriptions and
// the used / wasGeneratedBy / wasAttributedTo / wasAssociatedWith relations),
// an append-only store with run capture, last-step keyword embedding,
// reconstruction from last steps, and PROV-JSON / PROV-N serializations.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fairgw/error.hpp"
#include "fairgw/fits.hpp"
#include "fairgw/io.hpp"

namespace fairgw::prov {

enum class Errc {
  UnknownDescription,
  ParamTypeError,
  DuplicateEntityId,
  CycleError,
  UnknownEntity,
  NoGeneration,
  MalformedKeyword,
  ConflictingActivity,
  MalformedDocument,
  InvalidGraph,
};

inline std::string_view to_string(Errc e) {
  switch (e) {
    case Errc::UnknownDescription: return "UnknownDescription";
    case Errc::ParamTypeError: return "ParamTypeError";
    case Errc::DuplicateEntityId: return "DuplicateEntityId";
    case Errc::CycleError: return "CycleError";
    case Errc::UnknownEntity: return "UnknownEntity";
    case Errc::NoGeneration: return "NoGeneration";
    case Errc::MalformedKeyword: return "MalformedKeyword";
    case Errc::ConflictingActivity: return "ConflictingActivity";
    case Errc::MalformedDocument: return "MalformedDocument";
    case Errc::InvalidGraph: return "InvalidGraph";
  }
  return "Unknown";
}

using ProvError = Error<Errc>;

/// ISO-8601 UTC timestamp with millisecond precision, e.g.
/// "2024-05-01T12:00:00.123Z". Fixed width, so string order is time order.
inline std::string now_iso8601() {
  const auto now = std::chrono::system_clock::now();
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  char out[40];
  std::snprintf(out, sizeof out, "%s.%03dZ", buf, static_cast<int>(ms));
  return out;
}

// ---------------------------------------------------------------------------
// Graph model

using Attributes = std::map<std::string, std::string>;

inline constexpr std::string_view kRoleInput = "input";
inline constexpr std::string_view kRoleOutput = "output";
inline constexpr std::string_view kAttrStub = "stub";
inline constexpr std::string_view kAttrWorkflow = "workflow";
inline constexpr std::string_view kAttrInstrument = "instrument";

struct Entity {
  std::string id;
  std::string name;
  std::optional<std::string> location;
  std::optional<std::string> generated_at;
  std::optional<std::string> comment;
  Attributes attributes;

  bool operator==(const Entity&) const = default;
  [[nodiscard]] bool is_stub() const { return attributes.contains(std::string(kAttrStub)); }
};

struct Activity {
  std::string id;
  std::string name;
  std::optional<std::string> start_time, end_time;
  std::optional<std::string> description_ref;
  std::map<std::string, std::string> parameters;
  std::optional<std::string> comment;

  bool operator==(const Activity&) const = default;
};

enum class AgentKind { Person, SoftwareAgent, Organization };

inline std::string_view to_string(AgentKind k) {
  switch (k) {
    case AgentKind::Person: return "prov:Person";
    case AgentKind::SoftwareAgent: return "prov:SoftwareAgent";
    case AgentKind::Organization: return "prov:Organization";
  }
  return "prov:Person";
}

inline std::optional<AgentKind> agent_kind_from(std::string_view s) {
  if (s == "prov:Person") return AgentKind::Person;
  if (s == "prov:SoftwareAgent") return AgentKind::SoftwareAgent;
  if (s == "prov:Organization") return AgentKind::Organization;
  return std::nullopt;
}

struct Agent {
  std::string id;
  std::string name;
  AgentKind kind = AgentKind::Person;

  bool operator==(const Agent&) const = default;
};

enum class ParamType { String, Float, Int };

inline std::string_view to_string(ParamType t) {
  switch (t) {
    case ParamType::String: return "string";
    case ParamType::Float: return "float";
    case ParamType::Int: return "int";
  }
  return "string";
}

inline std::optional<ParamType> param_type_from(std::string_view s) {
  if (s == "string") return ParamType::String;
  if (s == "float") return ParamType::Float;
  if (s == "int") return ParamType::Int;
  return std::nullopt;
}

struct ParameterDescription {
  std::string name;
  ParamType type = ParamType::String;
  std::string unit;
  bool required = false;

  bool operator==(const ParameterDescription&) const = default;
};

struct ActivityDescription {
  std::string id;
  std::string name;
  std::string version;
  std::string doc;
  std::vector<ParameterDescription> parameters;

  bool operator==(const ActivityDescription&) const = default;
};

/// Conventional description id: "name@version".
inline std::string description_id(std::string_view name, std::string_view version) {
  return std::string(name) + "@" + std::string(version);
}

struct Used {
  std::string activity, entity, role;
  auto operator<=>(const Used&) const = default;
};
struct WasGeneratedBy {
  std::string entity, activity, role;
  auto operator<=>(const WasGeneratedBy&) const = default;
};
struct WasAttributedTo {
  std::string entity, agent, role;
  auto operator<=>(const WasAttributedTo&) const = default;
};
struct WasAssociatedWith {
  std::string activity, agent, role;
  auto operator<=>(const WasAssociatedWith&) const = default;
};

struct Graph {
  std::map<std::string, Entity> entities;
  std::map<std::string, Activity> activities;
  std::map<std::string, Agent> agents;
  std::map<std::string, ActivityDescription> descriptions;
  std::set<Used> used;
  std::set<WasGeneratedBy> was_generated_by;
  std::set<WasAttributedTo> was_attributed_to;
  std::set<WasAssociatedWith> was_associated_with;

  bool operator==(const Graph&) const = default;

  [[nodiscard]] bool empty() const {
    return entities.empty() && activities.empty() && agents.empty() && descriptions.empty() && used.empty() &&
           was_generated_by.empty() && was_attributed_to.empty() && was_associated_with.empty();
  }

  /// Activity that generated `entity`, if any.
  [[nodiscard]] const WasGeneratedBy* generation(std::string_view entity) const {
    for (const auto& g : was_generated_by)
      if (g.entity == entity) return &g;
    return nullptr;
  }

  [[nodiscard]] std::vector<std::string> used_by(std::string_view activity) const {
    std::vector<std::string> out;
    for (const auto& u : used)
      if (u.activity == activity) out.push_back(u.entity);
    return out;
  }

  [[nodiscard]] std::vector<std::string> generated_by(std::string_view activity) const {
    std::vector<std::string> out;
    for (const auto& g : was_generated_by)
      if (g.activity == activity) out.push_back(g.entity);
    return out;
  }
};

/// Violations of referential integrity, single generation, acyclicity and
/// time ordering; empty for a valid graph.
inline std::vector<std::string> check(const Graph& g) {
  std::vector<std::string> out;
  auto need = [&](const auto& map, const std::string& id, std::string_view what, std::string_view rel) {
    if (!map.contains(id)) out.push_back(std::string(rel) + " refers to unknown " + std::string(what) + " '" + id + "'");
  };
  for (const auto& [id, e] : g.entities)
    if (id != e.id) out.push_back("entity key '" + id + "' does not match its id");
  for (const auto& [id, a] : g.activities) {
    if (id != a.id) out.push_back("activity key '" + id + "' does not match its id");
    if (a.description_ref) need(g.descriptions, *a.description_ref, "description", "activity " + id);
    if (a.start_time && a.end_time && *a.end_time < *a.start_time)
      out.push_back("activity '" + id + "' ends before it starts");
  }
  for (const auto& [id, a] : g.agents)
    if (id != a.id) out.push_back("agent key '" + id + "' does not match its id");
  for (const auto& [id, d] : g.descriptions) {
    if (id != d.id) out.push_back("description key '" + id + "' does not match its id");
    std::set<std::string> names;
    for (const auto& p : d.parameters)
      if (!names.insert(p.name).second) out.push_back("description '" + id + "' repeats parameter '" + p.name + "'");
  }
  for (const auto& u : g.used) {
    need(g.activities, u.activity, "activity", "used");
    need(g.entities, u.entity, "entity", "used");
  }
  std::map<std::string, std::string> gen;
  for (const auto& w : g.was_generated_by) {
    need(g.entities, w.entity, "entity", "wasGeneratedBy");
    need(g.activities, w.activity, "activity", "wasGeneratedBy");
    if (!gen.emplace(w.entity, w.activity).second) out.push_back("entity '" + w.entity + "' is generated more than once");
  }
  for (const auto& t : g.was_attributed_to) {
    need(g.entities, t.entity, "entity", "wasAttributedTo");
    need(g.agents, t.agent, "agent", "wasAttributedTo");
  }
  for (const auto& a : g.was_associated_with) {
    need(g.activities, a.activity, "activity", "wasAssociatedWith");
    need(g.agents, a.agent, "agent", "wasAssociatedWith");
  }

  // Cycle check over the data-flow digraph: entity -> activity (used),
  // activity -> entity (wasGeneratedBy). Nodes are tagged to keep the two id
  // spaces apart.
  std::map<std::string, std::vector<std::string>> next;
  for (const auto& u : g.used) next["e:" + u.entity].push_back("a:" + u.activity);
  for (const auto& w : g.was_generated_by) next["a:" + w.activity].push_back("e:" + w.entity);
  std::map<std::string, int> state;  // 1 = on stack, 2 = done
  for (const auto& [start, _] : next) {
    if (state[start]) continue;
    std::vector<std::pair<std::string, std::size_t>> stack{{start, 0}};
    state[start] = 1;
    while (!stack.empty()) {
      auto& [node, i] = stack.back();
      const auto& succ = next[node];
      if (i == succ.size()) {
        state[node] = 2;
        stack.pop_back();
        continue;
      }
      const std::string s = succ[i++];
      if (state[s] == 1) {
        out.push_back("cycle through '" + s.substr(2) + "'");
        return out;
      }
      if (state[s] == 0) {
        state[s] = 1;
        stack.emplace_back(s, 0);
      }
    }
  }
  return out;
}

inline void validate(const Graph& g) {
  if (auto problems = check(g); !problems.empty()) throw ProvError(Errc::InvalidGraph, problems.front());
}

// ---------------------------------------------------------------------------
// Ancestry

/// Subgraph reachable from `entity` through wasGeneratedBy -> activity ->
/// used -> entity, up to `depth` activity hops (unlimited when absent).
/// Agents, descriptions and their relations attached to included nodes come
/// along.
inline Graph ancestry(const Graph& g, const std::string& entity, std::optional<std::size_t> depth = std::nullopt) {
  if (!g.entities.contains(entity)) throw ProvError(Errc::UnknownEntity, entity);
  Graph out;
  out.entities.emplace(entity, g.entities.at(entity));
  std::vector<std::string> frontier{entity};
  for (std::size_t hop = 0; !frontier.empty() && (!depth || hop < *depth); ++hop) {
    std::vector<std::string> next;
    for (const auto& e : frontier) {
      const WasGeneratedBy* gen = g.generation(e);
      if (!gen) continue;
      out.was_generated_by.insert(*gen);
      if (!out.activities.emplace(gen->activity, g.activities.at(gen->activity)).second) continue;
      for (const auto& u : g.used) {
        if (u.activity != gen->activity) continue;
        out.used.insert(u);
        if (out.entities.emplace(u.entity, g.entities.at(u.entity)).second) next.push_back(u.entity);
      }
    }
    frontier = std::move(next);
  }
  for (const auto& [id, a] : out.activities)
    if (a.description_ref && g.descriptions.contains(*a.description_ref))
      out.descriptions.emplace(*a.description_ref, g.descriptions.at(*a.description_ref));
  for (const auto& w : g.was_associated_with)
    if (out.activities.contains(w.activity)) {
      out.was_associated_with.insert(w);
      out.agents.emplace(w.agent, g.agents.at(w.agent));
    }
  for (const auto& t : g.was_attributed_to)
    if (out.entities.contains(t.entity)) {
      out.was_attributed_to.insert(t);
      out.agents.emplace(t.agent, g.agents.at(t.agent));
    }
  return out;
}

// ---------------------------------------------------------------------------
// Run capture

struct GeneratedSpec {
  std::string id;  // empty: generated from name
  std::string name;
  std::optional<std::string> location;
  Attributes attributes;
};

struct RunSpec {
  std::string description_id;
  std::map<std::string, std::string> parameters;
  std::vector<std::string> used;
  std::vector<GeneratedSpec> generated;
  std::string agent_id;
  std::optional<std::string> workflow;
  std::optional<std::string> instrument;
  std::optional<std::string> start_time, end_time;
  std::optional<std::string> activity_id;  // empty: generated from the description name
  std::optional<std::string> comment;
};

struct RunResult {
  std::string activity_id;
  std::vector<std::string> generated;
};

namespace detail {

inline bool parses_as_int(std::string_view s) {
  std::int64_t v = 0;
  const char* first = s.data() + (!s.empty() && s[0] == '+' ? 1 : 0);
  auto [p, ec] = std::from_chars(first, s.data() + s.size(), v);
  return !s.empty() && ec == std::errc{} && p == s.data() + s.size();
}

inline bool parses_as_float(std::string_view s) {
  double v = 0;
  const char* first = s.data() + (!s.empty() && s[0] == '+' ? 1 : 0);
  auto [p, ec] = std::from_chars(first, s.data() + s.size(), v);
  return !s.empty() && ec == std::errc{} && p == s.data() + s.size();
}

inline void check_parameters(const ActivityDescription& d, const std::map<std::string, std::string>& params) {
  for (const auto& [name, value] : params) {
    auto it = std::find_if(d.parameters.begin(), d.parameters.end(), [&](const auto& p) { return p.name == name; });
    if (it == d.parameters.end())
      throw ProvError(Errc::ParamTypeError, "unknown parameter '" + name + "' for " + d.name);
    const bool ok = it->type == ParamType::String || (it->type == ParamType::Int && parses_as_int(value)) ||
                    (it->type == ParamType::Float && parses_as_float(value));
    if (!ok)
      throw ProvError(Errc::ParamTypeError, "parameter '" + name + "' must be " + std::string(to_string(it->type)) +
                                                ", got '" + value + "'");
  }
  for (const auto& p : d.parameters)
    if (p.required && !params.contains(p.name))
      throw ProvError(Errc::ParamTypeError, "missing required parameter '" + p.name + "' for " + d.name);
}

inline Entity stub_entity(const std::string& id) {
  Entity e;
  e.id = id;
  e.name = id;
  e.attributes.emplace(kAttrStub, "true");
  return e;
}

}  // namespace detail

/// Thread-safe, append-only provenance store. Readers take shared locks and
/// get consistent copies; writers are serialized.
class Store {
 public:
  Store() = default;
  explicit Store(Graph g) : graph_(std::move(g)) { validate(graph_); }
  Store(const Store& other) : graph_(other.snapshot()), counter_(other.counter()) {}
  Store& operator=(const Store& other) {
    if (this != &other) {
      Graph g = other.snapshot();
      const auto c = other.counter();
      std::unique_lock lock(mutex_);
      graph_ = std::move(g);
      counter_ = c;
    }
    return *this;
  }

  [[nodiscard]] Graph snapshot() const {
    std::shared_lock lock(mutex_);
    return graph_;
  }

  /// Runs `f(const Graph&)` under the shared lock.
  template <class F>
  decltype(auto) read(F&& f) const {
    std::shared_lock lock(mutex_);
    return std::forward<F>(f)(static_cast<const Graph&>(graph_));
  }

  /// Replaces the whole graph (used to publish a prepared copy).
  void replace(Graph g) {
    validate(g);
    std::unique_lock lock(mutex_);
    graph_ = std::move(g);
  }

  /// Idempotent for an identical description.
  void add_description(ActivityDescription d) {
    std::unique_lock lock(mutex_);
    if (auto it = graph_.descriptions.find(d.id); it != graph_.descriptions.end()) {
      if (it->second != d) throw ProvError(Errc::DuplicateEntityId, "description '" + d.id + "' already registered");
      return;
    }
    std::set<std::string> names;
    for (const auto& p : d.parameters)
      if (!names.insert(p.name).second) throw ProvError(Errc::InvalidGraph, "repeated parameter '" + p.name + "'");
    graph_.descriptions.emplace(d.id, std::move(d));
  }

  /// Idempotent for an identical agent.
  void add_agent(Agent a) {
    std::unique_lock lock(mutex_);
    if (auto it = graph_.agents.find(a.id); it != graph_.agents.end()) {
      if (it->second != a) throw ProvError(Errc::DuplicateEntityId, "agent '" + a.id + "' already exists");
      return;
    }
    graph_.agents.emplace(a.id, std::move(a));
  }

  /// Idempotent for an identical entity.
  void add_entity(Entity e) {
    if (e.id.empty()) throw ProvError(Errc::InvalidGraph, "entity id must not be empty");
    std::unique_lock lock(mutex_);
    if (auto it = graph_.entities.find(e.id); it != graph_.entities.end()) {
      if (it->second != e) throw ProvError(Errc::DuplicateEntityId, e.id);
      return;
    }
    graph_.entities.emplace(e.id, std::move(e));
  }

  /// Adds nodes and relations of `fragment` that are not present yet.
  /// Existing non-stub entities win over stubs of the same id. All-or-nothing.
  void merge(const Graph& fragment) {
    std::unique_lock lock(mutex_);
    Graph next = graph_;
    for (const auto& [id, e] : fragment.entities) {
      auto [it, inserted] = next.entities.emplace(id, e);
      if (!inserted && it->second.is_stub() && !e.is_stub()) it->second = e;
    }
    for (const auto& [id, a] : fragment.activities) {
      auto [it, inserted] = next.activities.emplace(id, a);
      if (!inserted && it->second != a) throw ProvError(Errc::ConflictingActivity, id);
    }
    for (const auto& [id, a] : fragment.agents) next.agents.emplace(id, a);
    for (const auto& [id, d] : fragment.descriptions) next.descriptions.emplace(id, d);
    next.used.insert(fragment.used.begin(), fragment.used.end());
    next.was_generated_by.insert(fragment.was_generated_by.begin(), fragment.was_generated_by.end());
    next.was_attributed_to.insert(fragment.was_attributed_to.begin(), fragment.was_attributed_to.end());
    next.was_associated_with.insert(fragment.was_associated_with.begin(), fragment.was_associated_with.end());
    validate(next);
    graph_ = std::move(next);
  }

  /// Captures one activity run. Validation happens before any mutation.
  RunResult record_run(const RunSpec& run) {
    std::unique_lock lock(mutex_);
    auto dit = graph_.descriptions.find(run.description_id);
    if (dit == graph_.descriptions.end()) throw ProvError(Errc::UnknownDescription, run.description_id);
    const ActivityDescription& desc = dit->second;
    detail::check_parameters(desc, run.parameters);
    if (run.agent_id.empty()) throw ProvError(Errc::InvalidGraph, "agent id must not be empty");
    if (run.start_time && run.end_time && *run.end_time < *run.start_time)
      throw ProvError(Errc::InvalidGraph, "activity ends before it starts");

    const std::set<std::string> used(run.used.begin(), run.used.end());
    std::vector<std::string> gen_ids;
    std::set<std::string> seen;
    std::uint64_t counter = counter_;
    auto fresh = [&](const std::string& name, auto&& taken) {
      std::string id;
      do id = name + "/" + std::to_string(++counter);
      while (taken(id));
      return id;
    };
    std::string activity_id = run.activity_id && !run.activity_id->empty()
                                  ? *run.activity_id
                                  : fresh(desc.name, [&](const std::string& c) { return graph_.activities.contains(c); });
    if (graph_.activities.contains(activity_id))
      throw ProvError(Errc::DuplicateEntityId, "activity '" + activity_id + "' already exists");
    for (const auto& g : run.generated) {
      std::string id = g.id.empty()
                           ? fresh(g.name, [&](const std::string& c) { return graph_.entities.contains(c) || seen.contains(c); })
                           : g.id;
      if (used.contains(id)) throw ProvError(Errc::CycleError, "entity '" + id + "' is both used and generated");
      if (graph_.entities.contains(id) || !seen.insert(id).second) throw ProvError(Errc::DuplicateEntityId, id);
      gen_ids.push_back(std::move(id));
    }

    // Commit.
    counter_ = counter;
    for (const auto& id : used)
      if (!graph_.entities.contains(id)) graph_.entities.emplace(id, detail::stub_entity(id));
    if (!graph_.agents.contains(run.agent_id)) graph_.agents.emplace(run.agent_id, Agent{run.agent_id, run.agent_id});

    Activity act;
    act.id = activity_id;
    act.name = desc.name;
    act.start_time = run.start_time;
    act.end_time = run.end_time;
    act.description_ref = desc.id;
    act.parameters = run.parameters;
    act.comment = run.comment;
    graph_.activities.emplace(activity_id, std::move(act));

    for (const auto& id : used) graph_.used.insert({activity_id, id, std::string(kRoleInput)});
    graph_.was_associated_with.insert({activity_id, run.agent_id, ""});
    for (std::size_t i = 0; i < gen_ids.size(); ++i) {
      const auto& spec = run.generated[i];
      Entity e;
      e.id = gen_ids[i];
      e.name = spec.name;
      e.location = spec.location;
      e.generated_at = run.end_time;
      e.attributes = spec.attributes;
      if (run.workflow) e.attributes[std::string(kAttrWorkflow)] = *run.workflow;
      if (run.instrument) e.attributes[std::string(kAttrInstrument)] = *run.instrument;
      graph_.entities.emplace(e.id, std::move(e));
      graph_.was_generated_by.insert({gen_ids[i], activity_id, std::string(kRoleOutput)});
      graph_.was_attributed_to.insert({gen_ids[i], run.agent_id, ""});
    }
    return {activity_id, gen_ids};
  }

 private:
  [[nodiscard]] std::uint64_t counter() const {
    std::shared_lock lock(mutex_);
    return counter_;
  }

  mutable std::shared_mutex mutex_;
  Graph graph_;
  std::uint64_t counter_ = 0;
};

// ---------------------------------------------------------------------------
// Last-step keywords

/// Flat description of the step that generated one entity.
struct LastStep {
  std::string entity_id;                          // PRVENTID
  std::string activity_id;                        // PRVACTID
  std::string activity_name;                      // PRVACTNM
  std::optional<std::string> start_time;          // PRVACTBE
  std::optional<std::string> end_time;            // PRVACTEN
  std::optional<std::string> software_name;       // PRVSWNAM
  std::optional<std::string> software_version;    // PRVSWVER
  std::optional<std::string> agent;               // PRVAGENT
  std::optional<std::string> workflow;            // PRVWKFLW
  std::optional<std::string> instrument;          // PRVINSTR
  std::map<std::string, std::string> parameters;  // PRVPARn = "name=value"
  std::vector<std::string> used;                  // PRVUSEn
  std::vector<std::string> generated;             // PRVGENn, siblings only

  bool operator==(const LastStep&) const = default;
  [[nodiscard]] bool empty() const { return *this == LastStep{}; }
};

using KeywordList = std::vector<std::pair<std::string, std::string>>;

inline constexpr std::size_t kMaxIndexed = 99;

inline LastStep encode_last_step(const Graph& g, const std::string& entity_id) {
  auto eit = g.entities.find(entity_id);
  if (eit == g.entities.end()) throw ProvError(Errc::UnknownEntity, entity_id);
  const WasGeneratedBy* gen = g.generation(entity_id);
  if (!gen) throw ProvError(Errc::NoGeneration, entity_id);
  const Activity& act = g.activities.at(gen->activity);

  LastStep ls;
  ls.entity_id = entity_id;
  ls.activity_id = act.id;
  ls.activity_name = act.name;
  ls.start_time = act.start_time;
  ls.end_time = act.end_time;
  if (act.description_ref) {
    if (auto d = g.descriptions.find(*act.description_ref); d != g.descriptions.end()) {
      ls.software_name = d->second.name;
      ls.software_version = d->second.version;
    }
  }
  for (const auto& w : g.was_associated_with)
    if (w.activity == act.id) {
      ls.agent = w.agent;
      break;
    }
  const auto& attrs = eit->second.attributes;
  if (auto it = attrs.find(std::string(kAttrWorkflow)); it != attrs.end()) ls.workflow = it->second;
  if (auto it = attrs.find(std::string(kAttrInstrument)); it != attrs.end()) ls.instrument = it->second;
  ls.parameters = act.parameters;
  ls.used = g.used_by(act.id);
  for (auto& id : g.generated_by(act.id))
    if (id != entity_id) ls.generated.push_back(std::move(id));
  return ls;
}

inline KeywordList to_keyword_list(const LastStep& ls) {
  if (ls.empty()) return {};
  if (ls.parameters.size() > kMaxIndexed || ls.used.size() > kMaxIndexed || ls.generated.size() > kMaxIndexed)
    throw ProvError(Errc::MalformedKeyword, "more than 99 indexed values do not fit 8-character keys");
  KeywordList out{{"PRVENTID", ls.entity_id}, {"PRVACTID", ls.activity_id}, {"PRVACTNM", ls.activity_name}};
  auto opt = [&](const char* key, const std::optional<std::string>& v) {
    if (v) out.emplace_back(key, *v);
  };
  opt("PRVACTBE", ls.start_time);
  opt("PRVACTEN", ls.end_time);
  opt("PRVSWNAM", ls.software_name);
  opt("PRVSWVER", ls.software_version);
  opt("PRVAGENT", ls.agent);
  opt("PRVWKFLW", ls.workflow);
  opt("PRVINSTR", ls.instrument);
  std::size_t n = 0;
  for (const auto& [k, v] : ls.parameters) {
    if (k.empty() || k.find('=') != std::string::npos)
      throw ProvError(Errc::MalformedKeyword, "parameter name '" + k + "' cannot be encoded");
    out.emplace_back("PRVPAR" + std::to_string(++n), k + "=" + v);
  }
  n = 0;
  for (const auto& u : ls.used) out.emplace_back("PRVUSE" + std::to_string(++n), u);
  n = 0;
  for (const auto& s : ls.generated) out.emplace_back("PRVGEN" + std::to_string(++n), s);
  return out;
}

namespace detail {

/// Index of "PRVUSE12"-style keys; nullopt if `key` lacks the prefix or the
/// suffix is not a canonical positive integer.
inline std::optional<std::size_t> key_index(std::string_view key, std::string_view prefix) {
  if (!key.starts_with(prefix)) return std::nullopt;
  const std::string_view digits = key.substr(prefix.size());
  if (digits.empty() || digits[0] == '0') return std::nullopt;
  std::size_t v = 0;
  auto [p, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), v);
  if (ec != std::errc{} || p != digits.data() + digits.size()) return std::nullopt;
  return v;
}

inline std::vector<std::string> contiguous(std::map<std::size_t, std::string> m, std::string_view prefix) {
  std::vector<std::string> out;
  std::size_t expect = 1;
  for (auto& [i, v] : m) {
    if (i != expect)
      throw ProvError(Errc::MalformedKeyword,
                      std::string(prefix) + std::to_string(expect) + " missing before " + std::string(prefix) +
                          std::to_string(i));
    ++expect;
    out.push_back(std::move(v));
  }
  return out;
}

}  // namespace detail

/// Inverse of to_keyword_list. Keys not starting with "PRV" are ignored.
inline LastStep decode_last_step(const KeywordList& keywords) {
  LastStep ls;
  std::set<std::string> seen;
  std::map<std::size_t, std::string> pars, uses, gens;
  std::map<std::string, std::optional<std::string>*> scalars{
      {"PRVACTBE", &ls.start_time}, {"PRVACTEN", &ls.end_time}, {"PRVSWNAM", &ls.software_name},
      {"PRVSWVER", &ls.software_version}, {"PRVAGENT", &ls.agent}, {"PRVWKFLW", &ls.workflow},
      {"PRVINSTR", &ls.instrument}};
  bool any = false;
  std::optional<std::string> ent, act, actnm;
  for (const auto& [key, value] : keywords) {
    if (!key.starts_with("PRV")) continue;
    any = true;
    if (!seen.insert(key).second) throw ProvError(Errc::MalformedKeyword, "repeated keyword " + key);
    if (key == "PRVENTID") {
      ent = value;
    } else if (key == "PRVACTID") {
      act = value;
    } else if (key == "PRVACTNM") {
      actnm = value;
    } else if (auto s = scalars.find(key); s != scalars.end()) {
      *s->second = value;
    } else if (auto i = detail::key_index(key, "PRVPAR")) {
      pars.emplace(*i, value);
    } else if (auto i = detail::key_index(key, "PRVUSE")) {
      uses.emplace(*i, value);
    } else if (auto i = detail::key_index(key, "PRVGEN")) {
      gens.emplace(*i, value);
    } else {
      throw ProvError(Errc::MalformedKeyword, "unknown provenance keyword " + key);
    }
  }
  if (!any) return ls;
  if (!ent || !act || !actnm)
    throw ProvError(Errc::MalformedKeyword, "PRVENTID, PRVACTID and PRVACTNM are required");
  ls.entity_id = *ent;
  ls.activity_id = *act;
  ls.activity_name = *actnm;
  for (auto& p : detail::contiguous(std::move(pars), "PRVPAR")) {
    const auto eq = p.find('=');
    if (eq == std::string::npos || eq == 0) throw ProvError(Errc::MalformedKeyword, "PRVPAR value '" + p + "' is not name=value");
    if (!ls.parameters.emplace(p.substr(0, eq), p.substr(eq + 1)).second)
      throw ProvError(Errc::MalformedKeyword, "parameter '" + p.substr(0, eq) + "' repeated");
  }
  ls.used = detail::contiguous(std::move(uses), "PRVUSE");
  ls.generated = detail::contiguous(std::move(gens), "PRVGEN");
  return ls;
}

// FITS embedding. Values too long for one card use the FITS long-string
// convention: the value ends in '&' and continues in CONTINUE cards.

namespace detail {

inline std::size_t escaped_width(char c) { return c == '\'' ? 2 : 1; }

inline constexpr std::size_t kMaxChunk = 67;

inline std::vector<std::string> split_for_cards(const std::string& value) {
  std::size_t total = 0;
  for (char c : value) total += escaped_width(c);
  if (total <= kMaxChunk + 1) return {value};
  std::vector<std::string> chunks;
  std::string cur;
  std::size_t width = 0;
  for (char c : value) {
    if (width + escaped_width(c) > kMaxChunk) {
      chunks.push_back(std::move(cur));
      cur.clear();
      width = 0;
    }
    cur += c;
    width += escaped_width(c);
  }
  chunks.push_back(std::move(cur));
  return chunks;
}

inline std::string quote_fits(std::string_view s) {
  std::string out = "'";
  for (char c : s) {
    out += c;
    if (c == '\'') out += '\'';
  }
  return out + "'";
}

/// String value of a CONTINUE card, if it is one.
inline std::optional<std::string> continue_value(const fits::Card& c) {
  if (c.keyword != "CONTINUE" || !c.is_commentary()) return std::nullopt;
  const auto& text = std::get<fits::Commentary>(c.value).text;
  // Reuse the value-card parser on a synthetic card image.
  std::string image = "X       = " + text.substr(std::min(text.find_first_not_of(' '), text.size()));
  if (image.size() > fits::kCardSize) return std::nullopt;
  image.resize(fits::kCardSize, ' ');
  try {
    const auto parsed = fits::detail::parse_card(image);
    if (const auto* s = std::get_if<std::string>(&parsed.value)) return *s;
  } catch (const fits::FitsError&) {
  }
  return std::nullopt;
}

}  // namespace detail

inline std::vector<fits::Card> to_cards(const LastStep& ls) {
  std::vector<fits::Card> out;
  for (const auto& [key, value] : to_keyword_list(ls)) {
    const auto chunks = detail::split_for_cards(value);
    if (chunks.size() == 1) {
      out.push_back(fits::make_card(key, value));
      continue;
    }
    out.push_back(fits::make_card(key, chunks.front() + "&"));
    for (std::size_t i = 1; i < chunks.size(); ++i) {
      const std::string piece = i + 1 < chunks.size() ? chunks[i] + "&" : chunks[i];
      out.push_back(fits::make_card("CONTINUE", fits::Commentary{"  " + detail::quote_fits(piece)}));
    }
  }
  return out;
}

/// PRV* keywords of a header, with long-string continuations joined.
inline KeywordList keywords_from_cards(const std::vector<fits::Card>& cards) {
  KeywordList out;
  for (std::size_t i = 0; i < cards.size(); ++i) {
    const auto& c = cards[i];
    if (!c.keyword.starts_with("PRV") || c.is_commentary()) continue;
    const auto* s = std::get_if<std::string>(&c.value);
    if (!s) throw ProvError(Errc::MalformedKeyword, c.keyword + " must hold a string value");
    std::string value = *s;
    while (!value.empty() && value.back() == '&' && i + 1 < cards.size()) {
      const auto more = detail::continue_value(cards[i + 1]);
      if (!more) break;
      value.pop_back();
      value += *more;
      ++i;
    }
    out.emplace_back(c.keyword, std::move(value));
  }
  return out;
}

inline bool is_provenance_card(const fits::Card& c) {
  return c.keyword.starts_with("PRV") && !c.is_commentary();
}

/// Replaces any PRV* cards (and their continuations) in `cards` with `ls`.
inline void embed(std::vector<fits::Card>& cards, const LastStep& ls) {
  std::vector<fits::Card> kept;
  for (std::size_t i = 0; i < cards.size(); ++i) {
    if (!is_provenance_card(cards[i])) {
      kept.push_back(cards[i]);
      continue;
    }
    while (i + 1 < cards.size() && detail::continue_value(cards[i + 1])) ++i;
  }
  for (auto& c : to_cards(ls)) kept.push_back(std::move(c));
  cards = std::move(kept);
}

// ---------------------------------------------------------------------------
// Reconstruction

namespace detail {

inline void add_last_step(Graph& g, const LastStep& ls) {
  // Activity-level fields must agree across records of the same activity.
  Activity act;
  act.id = ls.activity_id;
  act.name = ls.activity_name;
  act.start_time = ls.start_time;
  act.end_time = ls.end_time;
  act.parameters = ls.parameters;
  if (ls.software_name) act.description_ref = description_id(*ls.software_name, ls.software_version.value_or(""));
  if (auto it = g.activities.find(act.id); it != g.activities.end()) {
    if (it->second != act) throw ProvError(Errc::ConflictingActivity, act.id);
  } else {
    g.activities.emplace(act.id, act);
  }
  if (act.description_ref && !g.descriptions.contains(*act.description_ref)) {
    ActivityDescription d;
    d.id = *act.description_ref;
    d.name = *ls.software_name;
    d.version = ls.software_version.value_or("");
    g.descriptions.emplace(d.id, std::move(d));
  }
  const std::set<std::string> used(ls.used.begin(), ls.used.end());
  const auto prior_used = g.used_by(act.id);
  if (!prior_used.empty() && std::set<std::string>(prior_used.begin(), prior_used.end()) != used)
    throw ProvError(Errc::ConflictingActivity, act.id + ": inputs differ");
  std::optional<std::string> prior_agent;
  for (const auto& w : g.was_associated_with)
    if (w.activity == act.id) prior_agent = w.agent;
  if (prior_agent && prior_agent != ls.agent) throw ProvError(Errc::ConflictingActivity, act.id + ": agents differ");

  for (const auto& u : used) {
    if (!g.entities.contains(u)) g.entities.emplace(u, stub_entity(u));
    g.used.insert({act.id, u, std::string(kRoleInput)});
  }
  if (ls.agent) {
    g.agents.emplace(*ls.agent, Agent{*ls.agent, *ls.agent});
    g.was_associated_with.insert({act.id, *ls.agent, ""});
  }

  Entity self;
  self.id = ls.entity_id;
  self.name = ls.entity_id;
  self.generated_at = ls.end_time;
  if (ls.workflow) self.attributes[std::string(kAttrWorkflow)] = *ls.workflow;
  if (ls.instrument) self.attributes[std::string(kAttrInstrument)] = *ls.instrument;
  if (auto it = g.entities.find(self.id); it == g.entities.end() || it->second.is_stub()) {
    g.entities.insert_or_assign(self.id, self);
  } else if (it->second != self) {
    throw ProvError(Errc::ConflictingActivity, "conflicting last steps for entity " + self.id);
  }

  std::vector<std::string> outputs = ls.generated;
  outputs.push_back(ls.entity_id);
  for (const auto& e : outputs) {
    if (!g.entities.contains(e)) g.entities.emplace(e, stub_entity(e));
    if (const auto* gen = g.generation(e); gen && gen->activity != act.id)
      throw ProvError(Errc::ConflictingActivity, "entity " + e + " generated by both " + gen->activity + " and " + act.id);
    g.was_generated_by.insert({e, act.id, std::string(kRoleOutput)});
    if (ls.agent) g.was_attributed_to.insert({e, *ls.agent, ""});
  }
}

}  // namespace detail

/// Rebuilds a graph from last-step records. Entities referenced without a
/// record of their own become stubs.
inline Graph reconstruct(const std::vector<LastStep>& steps) {
  Graph g;
  for (const auto& ls : steps)
    if (!ls.empty()) detail::add_last_step(g, ls);
  validate(g);
  return g;
}

/// One-activity fragment from a header's PRV* cards; empty when absent.
inline Graph extract_on_top(const std::vector<fits::Card>& cards) {
  return reconstruct({decode_last_step(keywords_from_cards(cards))});
}

/// The part of a graph that last-step keywords can represent: ids, activity
/// name/times/parameters, software name/version, context attributes and all
/// relations. Entities outside any used/wasGeneratedBy relation are dropped.
/// Used to compare captured and reconstructed graphs.
inline Graph last_step_view(const Graph& g) {
  Graph out;
  std::set<std::string> linked;
  for (const auto& u : g.used) linked.insert(u.entity);
  for (const auto& w : g.was_generated_by) linked.insert(w.entity);
  for (const auto& [id, e] : g.entities) {
    if (!linked.contains(id)) continue;
    Entity v;
    v.id = id;
    for (auto key : {kAttrWorkflow, kAttrInstrument})
      if (auto it = e.attributes.find(std::string(key)); it != e.attributes.end() && g.generation(id))
        v.attributes.insert(*it);
    out.entities.emplace(id, std::move(v));
  }
  for (const auto& [id, a] : g.activities) {
    Activity v;
    v.id = id;
    v.name = a.name;
    v.start_time = a.start_time;
    v.end_time = a.end_time;
    v.parameters = a.parameters;
    if (a.description_ref && g.descriptions.contains(*a.description_ref)) {
      const auto& d = g.descriptions.at(*a.description_ref);
      v.description_ref = description_id(d.name, d.version);
      out.descriptions.emplace(*v.description_ref, ActivityDescription{*v.description_ref, d.name, d.version, "", {}});
    }
    out.activities.emplace(id, std::move(v));
  }
  for (const auto& [id, a] : g.agents) out.agents.emplace(id, Agent{id, "", AgentKind::Person});
  out.used = g.used;
  out.was_generated_by = g.was_generated_by;
  out.was_attributed_to = g.was_attributed_to;
  out.was_associated_with = g.was_associated_with;
  return out;
}

// ---------------------------------------------------------------------------
// PROV-JSON

using ojson = nlohmann::ordered_json;

inline constexpr std::string_view kVoprovNamespace = "http://www.ivoa.net/documents/ProvenanceDM/ns/voprov/";
inline constexpr std::string_view kAttrPrefix = "gw:";

inline std::string serialize_provjson(const Graph& g) {
  ojson doc = ojson::object();
  doc["prefix"] = {{"prov", "http://www.w3.org/ns/prov#"},
                   {"voprov", kVoprovNamespace},
                   {"gw", "urn:fairgw:attribute:"}};
  ojson entities = ojson::object();
  for (const auto& [id, e] : g.entities) {
    ojson o = {{"prov:label", e.name}};
    if (e.location) o["prov:location"] = *e.location;
    if (e.generated_at) o["voprov:generatedAtTime"] = *e.generated_at;
    if (e.comment) o["voprov:comment"] = *e.comment;
    for (const auto& [k, v] : e.attributes) o[std::string(kAttrPrefix) + k] = v;
    entities[id] = std::move(o);
  }
  ojson activities = ojson::object();
  for (const auto& [id, a] : g.activities) {
    ojson o = {{"prov:label", a.name}};
    if (a.start_time) o["prov:startTime"] = *a.start_time;
    if (a.end_time) o["prov:endTime"] = *a.end_time;
    if (a.description_ref) o["voprov:description"] = *a.description_ref;
    if (a.comment) o["voprov:comment"] = *a.comment;
    if (!a.parameters.empty()) {
      ojson p = ojson::object();
      for (const auto& [k, v] : a.parameters) p[k] = v;
      o["voprov:parameters"] = std::move(p);
    }
    activities[id] = std::move(o);
  }
  ojson agents = ojson::object();
  for (const auto& [id, a] : g.agents) agents[id] = {{"prov:label", a.name}, {"prov:type", to_string(a.kind)}};
  ojson descriptions = ojson::object();
  for (const auto& [id, d] : g.descriptions) {
    ojson params = ojson::array();
    for (const auto& p : d.parameters)
      params.push_back({{"name", p.name}, {"type", to_string(p.type)}, {"unit", p.unit}, {"required", p.required}});
    descriptions[id] = {{"voprov:name", d.name}, {"voprov:version", d.version}, {"voprov:doc", d.doc},
                        {"voprov:parameters", std::move(params)}};
  }
  auto relations = [](const auto& set, std::string_view tag, auto&& fill) {
    ojson out = ojson::object();
    std::size_t n = 0;
    for (const auto& r : set) {
      ojson o = ojson::object();
      fill(o, r);
      out["_:" + std::string(tag) + std::to_string(++n)] = std::move(o);
    }
    return out;
  };
  auto role = [](ojson& o, const std::string& r) {
    if (!r.empty()) o["prov:role"] = r;
  };
  doc["entity"] = std::move(entities);
  doc["activity"] = std::move(activities);
  doc["agent"] = std::move(agents);
  doc["voprov:activityDescription"] = std::move(descriptions);
  doc["used"] = relations(g.used, "u", [&](ojson& o, const Used& r) {
    o["prov:activity"] = r.activity;
    o["prov:entity"] = r.entity;
    role(o, r.role);
  });
  doc["wasGeneratedBy"] = relations(g.was_generated_by, "g", [&](ojson& o, const WasGeneratedBy& r) {
    o["prov:entity"] = r.entity;
    o["prov:activity"] = r.activity;
    role(o, r.role);
  });
  doc["wasAttributedTo"] = relations(g.was_attributed_to, "t", [&](ojson& o, const WasAttributedTo& r) {
    o["prov:entity"] = r.entity;
    o["prov:agent"] = r.agent;
    role(o, r.role);
  });
  doc["wasAssociatedWith"] = relations(g.was_associated_with, "a", [&](ojson& o, const WasAssociatedWith& r) {
    o["prov:activity"] = r.activity;
    o["prov:agent"] = r.agent;
    role(o, r.role);
  });
  return doc.dump(2) + "\n";
}

namespace detail {

[[noreturn]] inline void malformed(const std::string& msg) { throw ProvError(Errc::MalformedDocument, msg); }

inline const ojson& member_object(const ojson& doc, const char* name) {
  static const ojson empty = ojson::object();
  auto it = doc.find(name);
  if (it == doc.end()) return empty;
  if (!it->is_object()) malformed(std::string("'") + name + "' must be an object");
  return *it;
}

inline std::string required_string(const ojson& o, const char* key, const std::string& where) {
  auto it = o.find(key);
  if (it == o.end() || !it->is_string()) malformed(where + ": '" + key + "' must be a string");
  return it->get<std::string>();
}

inline std::optional<std::string> optional_string(const ojson& o, const char* key, const std::string& where) {
  auto it = o.find(key);
  if (it == o.end()) return std::nullopt;
  if (!it->is_string()) malformed(where + ": '" + key + "' must be a string");
  return it->get<std::string>();
}

template <class F>
void for_each_object(const ojson& members, const char* kind, F&& f) {
  for (const auto& [id, o] : members.items()) {
    if (!o.is_object()) malformed(std::string(kind) + " '" + id + "' must be an object");
    f(id, o);
  }
}

}  // namespace detail

inline Graph parse_provjson(std::string_view text) {
  using namespace detail;
  ojson doc;
  try {
    doc = ojson::parse(text);
  } catch (const ojson::parse_error& e) {
    malformed(std::string("not JSON: ") + e.what());
  }
  if (!doc.is_object()) malformed("document must be a JSON object");
  Graph g;
  for_each_object(member_object(doc, "entity"), "entity", [&](const std::string& id, const ojson& o) {
    Entity e;
    e.id = id;
    e.name = required_string(o, "prov:label", "entity " + id);
    e.location = optional_string(o, "prov:location", "entity " + id);
    e.generated_at = optional_string(o, "voprov:generatedAtTime", "entity " + id);
    e.comment = optional_string(o, "voprov:comment", "entity " + id);
    for (const auto& [k, v] : o.items()) {
      if (!k.starts_with(kAttrPrefix)) continue;
      if (!v.is_string()) malformed("entity " + id + ": attribute '" + k + "' must be a string");
      e.attributes.emplace(k.substr(kAttrPrefix.size()), v.get<std::string>());
    }
    g.entities.emplace(id, std::move(e));
  });
  for_each_object(member_object(doc, "activity"), "activity", [&](const std::string& id, const ojson& o) {
    Activity a;
    a.id = id;
    a.name = required_string(o, "prov:label", "activity " + id);
    a.start_time = optional_string(o, "prov:startTime", "activity " + id);
    a.end_time = optional_string(o, "prov:endTime", "activity " + id);
    a.description_ref = optional_string(o, "voprov:description", "activity " + id);
    a.comment = optional_string(o, "voprov:comment", "activity " + id);
    if (auto p = o.find("voprov:parameters"); p != o.end()) {
      if (!p->is_object()) malformed("activity " + id + ": parameters must be an object");
      for (const auto& [k, v] : p->items()) {
        if (!v.is_string()) malformed("activity " + id + ": parameter '" + k + "' must be a string");
        a.parameters.emplace(k, v.get<std::string>());
      }
    }
    g.activities.emplace(id, std::move(a));
  });
  for_each_object(member_object(doc, "agent"), "agent", [&](const std::string& id, const ojson& o) {
    const auto kind = agent_kind_from(required_string(o, "prov:type", "agent " + id));
    if (!kind) malformed("agent " + id + ": unknown prov:type");
    g.agents.emplace(id, Agent{id, required_string(o, "prov:label", "agent " + id), *kind});
  });
  for_each_object(member_object(doc, "voprov:activityDescription"), "description",
                  [&](const std::string& id, const ojson& o) {
                    ActivityDescription d;
                    d.id = id;
                    d.name = required_string(o, "voprov:name", "description " + id);
                    d.version = required_string(o, "voprov:version", "description " + id);
                    d.doc = required_string(o, "voprov:doc", "description " + id);
                    auto ps = o.find("voprov:parameters");
                    if (ps == o.end() || !ps->is_array()) malformed("description " + id + ": parameters must be an array");
                    for (const auto& p : *ps) {
                      if (!p.is_object()) malformed("description " + id + ": parameter must be an object");
                      ParameterDescription pd;
                      pd.name = required_string(p, "name", "description " + id);
                      const auto type = param_type_from(required_string(p, "type", "description " + id));
                      if (!type) malformed("description " + id + ": unknown parameter type");
                      pd.type = *type;
                      pd.unit = required_string(p, "unit", "description " + id);
                      auto req = p.find("required");
                      if (req == p.end() || !req->is_boolean()) malformed("description " + id + ": 'required' must be a boolean");
                      pd.required = req->get<bool>();
                      d.parameters.push_back(std::move(pd));
                    }
                    g.descriptions.emplace(id, std::move(d));
                  });
  auto role = [](const ojson& o, const std::string& where) {
    return optional_string(o, "prov:role", where).value_or("");
  };
  auto insert = [](auto& set, auto value, const std::string& id) {
    if (!set.insert(std::move(value)).second) malformed("duplicate relation " + id);
  };
  for_each_object(member_object(doc, "used"), "used", [&](const std::string& id, const ojson& o) {
    insert(g.used, Used{required_string(o, "prov:activity", id), required_string(o, "prov:entity", id), role(o, id)}, id);
  });
  for_each_object(member_object(doc, "wasGeneratedBy"), "wasGeneratedBy", [&](const std::string& id, const ojson& o) {
    insert(g.was_generated_by,
           WasGeneratedBy{required_string(o, "prov:entity", id), required_string(o, "prov:activity", id), role(o, id)}, id);
  });
  for_each_object(member_object(doc, "wasAttributedTo"), "wasAttributedTo", [&](const std::string& id, const ojson& o) {
    insert(g.was_attributed_to,
           WasAttributedTo{required_string(o, "prov:entity", id), required_string(o, "prov:agent", id), role(o, id)}, id);
  });
  for_each_object(member_object(doc, "wasAssociatedWith"), "wasAssociatedWith",
                  [&](const std::string& id, const ojson& o) {
                    insert(g.was_associated_with,
                           WasAssociatedWith{required_string(o, "prov:activity", id), required_string(o, "prov:agent", id),
                                             role(o, id)},
                           id);
                  });
  if (auto problems = check(g); !problems.empty()) malformed(problems.front());
  return g;
}

inline Store load_store(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) return Store{};
  return Store(parse_provjson(io::read_text(path)));
}

inline void save_store(const std::filesystem::path& path, const Store& store) {
  io::write_atomic(path, serialize_provjson(store.snapshot()));
}

// ---------------------------------------------------------------------------
// PROV-N

namespace detail {

/// Identifier as a PROV-N local name in the default namespace.
inline std::string provn_id(std::string_view id) {
  static constexpr std::string_view kEscaped = "~.-!$&'()*+,;=/?#@%";
  std::string out;
  for (std::size_t i = 0; i < id.size(); ++i) {
    const unsigned char c = static_cast<unsigned char>(id[i]);
    const bool plain = std::isalnum(c) || c == '_' || c == ':' || (c == '-' && i > 0) || (c == '.' && i > 0 && i + 1 < id.size());
    if (plain) {
      out += static_cast<char>(c);
    } else if (kEscaped.find(static_cast<char>(c)) != std::string_view::npos) {
      out += '\\';
      out += static_cast<char>(c);
    } else {
      char buf[4];
      std::snprintf(buf, sizeof buf, "%%%02X", c);
      out += buf;
    }
  }
  return out;
}

inline std::string provn_string(std::string_view s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  return out + "\"";
}

inline std::string provn_attrs(const std::vector<std::pair<std::string, std::string>>& attrs) {
  std::string out = "[";
  for (std::size_t i = 0; i < attrs.size(); ++i) out += (i ? ", " : "") + attrs[i].first + "=" + attrs[i].second;
  return out + "]";
}

inline std::string provn_role(const std::string& role) {
  if (role.empty()) return "[]";
  return provn_attrs({{"prov:role", provn_string(role)}});
}

}  // namespace detail

/// PROV-N document, one statement per line, sorted by statement kind and id.
inline std::string serialize_provn(const Graph& g) {
  using namespace detail;
  if (g.empty()) return "document\nendDocument";
  std::vector<std::string> lines;
  lines.push_back("  default <urn:fairgw:id:>");
  lines.push_back("  prefix voprov <" + std::string(kVoprovNamespace) + ">");
  lines.push_back("  prefix gw <urn:fairgw:attribute:>");
  for (const auto& [id, e] : g.entities) {
    std::vector<std::pair<std::string, std::string>> a{{"prov:label", provn_string(e.name)}};
    if (e.location) a.emplace_back("prov:location", provn_string(*e.location));
    if (e.generated_at) a.emplace_back("voprov:generatedAtTime", provn_string(*e.generated_at));
    if (e.comment) a.emplace_back("voprov:comment", provn_string(*e.comment));
    for (const auto& [k, v] : e.attributes) a.emplace_back("gw:" + provn_id(k), provn_string(v));
    lines.push_back("  entity(" + provn_id(id) + ", " + provn_attrs(a) + ")");
  }
  for (const auto& [id, act] : g.activities) {
    std::vector<std::pair<std::string, std::string>> a{{"prov:label", provn_string(act.name)}};
    if (act.description_ref) a.emplace_back("voprov:description", provn_string(*act.description_ref));
    for (const auto& [k, v] : act.parameters) a.emplace_back("voprov:parameter", provn_string(k + "=" + v));
    if (act.comment) a.emplace_back("voprov:comment", provn_string(*act.comment));
    lines.push_back("  activity(" + provn_id(id) + ", " + act.start_time.value_or("-") + ", " +
                    act.end_time.value_or("-") + ", " + provn_attrs(a) + ")");
  }
  for (const auto& [id, ag] : g.agents)
    lines.push_back("  agent(" + provn_id(id) + ", " +
                    provn_attrs({{"prov:type", "'" + std::string(to_string(ag.kind)) + "'"},
                                 {"prov:label", provn_string(ag.name)}}) +
                    ")");
  for (const auto& u : g.used)
    lines.push_back("  used(" + provn_id(u.activity) + ", " + provn_id(u.entity) + ", -, " + provn_role(u.role) + ")");
  for (const auto& w : g.was_generated_by)
    lines.push_back("  wasGeneratedBy(" + provn_id(w.entity) + ", " + provn_id(w.activity) + ", -, " +
                    provn_role(w.role) + ")");
  for (const auto& w : g.was_associated_with)
    lines.push_back("  wasAssociatedWith(" + provn_id(w.activity) + ", " + provn_id(w.agent) + ", -, " +
                    provn_role(w.role) + ")");
  for (const auto& t : g.was_attributed_to)
    lines.push_back("  wasAttributedTo(" + provn_id(t.entity) + ", " + provn_id(t.agent) + ", " +
                    provn_role(t.role) + ")");
  std::string out = "document\n";
  for (const auto& l : lines) out += l + "\n";
  return out + "endDocument";
}

}  // namespace fairgw::prov
