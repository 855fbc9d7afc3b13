#pragma once

// JSON run configuration: backend profiles, named policies and engine knobs.
//
// {
//   "prompts_dir": "prompts",
//   "threshold": 0.5, "top_prototypes": 4,
//   "parallelism": 1,            // concurrent candidate calls per turn
//   "gateway_parallelism": 4,    // concurrent backend calls overall
//   "workers": 1,                // concurrent chats in simulate
//   "evaluator_token_env": "PIVOT_EVALUATOR_TOKEN",
//   "backends": [
//     {"name": "gpt", "kind": "remote", "endpoint": "https://api.openai.com/v1",
//      "model": "gpt-4o", "api_key_env": "OPENAI_API_KEY", "request_budget": 400},
//     {"name": "replay", "kind": "scripted_generator", "script": "replay.jsonl"}
//   ],
//   "policies": {"strategy": {"kind": "strategy", "generator": "gpt", "scorer": "judge"}}
// }

#include <filesystem>
#include <fstream>
#include <map>
#include <string>

#include "pivot/engine.hpp"
#include "pivot/gateway.hpp"
#include "pivot/prompts.hpp"
#include "pivot/remote.hpp"

namespace pivot {

struct Config {
  std::filesystem::path base_dir = ".";
  std::filesystem::path prompts_dir;
  EngineOptions engine;
  std::size_t gateway_parallelism = 4;
  std::size_t workers = 1;
  std::string evaluator_token_env = "PIVOT_EVALUATOR_TOKEN";
  std::vector<BackendProfile> backends;
  std::map<std::string, SystemPolicy> policies;

  std::filesystem::path resolve(const std::filesystem::path& p) const {
    return p.is_absolute() ? p : base_dir / p;
  }
};

inline void from_json(const json& j, BackendProfile& p) {
  p.name = j.at("name").get<std::string>();
  p.kind = parse_backend_kind(j.at("kind").get<std::string>());
  p.endpoint = j.value("endpoint", "");
  p.model = j.value("model", "");
  p.api_key_env = j.value("api_key_env", "");
  p.script_source = j.value("script", "");
  p.request_budget.reset();
  if (j.contains("request_budget") && !j.at("request_budget").is_null())
    p.request_budget = j.at("request_budget").get<std::size_t>();
  p.options = j.value("options", json::object());
  p.scoring = j.value("scoring", json::object());
  if (j.contains("api_key")) throw ConfigError("config must not hold API keys; use api_key_env");
}

inline Config parse_config(const json& j, std::filesystem::path base_dir = ".") {
  Config c;
  c.base_dir = std::move(base_dir);
  c.prompts_dir = j.contains("prompts_dir") ? c.resolve(j.at("prompts_dir").get<std::string>())
                                            : std::filesystem::path(PIVOT_DEFAULT_PROMPT_DIR);
  c.engine.threshold = j.value("threshold", kDefaultThreshold);
  if (!(c.engine.threshold >= 0.0 && c.engine.threshold <= 1.0))
    throw InvalidThreshold("threshold outside [0,1]");
  c.engine.top_prototypes = j.value("top_prototypes", kDefaultTopPrototypes);
  c.engine.parallelism = j.value("parallelism", std::size_t{1});
  c.gateway_parallelism = j.value("gateway_parallelism", std::size_t{4});
  c.workers = std::max<std::size_t>(1, j.value("workers", std::size_t{1}));
  c.evaluator_token_env = j.value("evaluator_token_env", c.evaluator_token_env);
  for (const auto& b : j.value("backends", json::array())) c.backends.push_back(b.get<BackendProfile>());
  const json policies = j.value("policies", json::object());
  for (const auto& [name, p] : policies.items()) {
    auto policy = p.get<SystemPolicy>();
    if (policy.label.empty()) policy.label = name;
    c.policies[name] = policy;
  }
  return c;
}

inline Config load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  try {
    return parse_config(json::parse(in), path.parent_path().empty() ? "." : path.parent_path());
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
}

inline std::shared_ptr<Backend> make_backend(const Config& c, const BackendProfile& p) {
  switch (p.kind) {
    case BackendKind::RemoteChatModel: return std::make_shared<RemoteBackend>(p);
    case BackendKind::ScriptedGenerator:
    case BackendKind::ScriptedScorer:
      return std::make_shared<ScriptedBackend>(
          p.kind, p.script_source.empty()
                      ? std::vector<ScriptEntry>{}
                      : load_script_file(c.resolve(p.script_source).string()));
  }
  throw ConfigError("unsupported backend kind");
}

// Fresh gateway with every configured backend. Scripted backends replay from
// the start each time this is called.
inline std::unique_ptr<Gateway> build_gateway(const Config& c) {
  auto gw = std::make_unique<Gateway>(c.gateway_parallelism);
  for (const auto& p : c.backends) gw->add(p, make_backend(c, p));
  return gw;
}

inline const SystemPolicy& find_policy(const Config& c, const std::string& name) {
  auto it = c.policies.find(name);
  if (it == c.policies.end()) throw ConfigError("unknown policy '" + name + "'");
  return it->second;
}

}  // namespace pivot
