#pragma once

// Machine user agents and the batch experiment driver.

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "pivot/corpus.hpp"
#include "pivot/engine.hpp"
#include "pivot/record.hpp"

namespace pivot {

enum class UserAgentKind { Scripted, PersonaLLM, OracleDiscloser };

inline std::string_view to_string(UserAgentKind k) {
  switch (k) {
    case UserAgentKind::Scripted: return "scripted";
    case UserAgentKind::PersonaLLM: return "persona_llm";
    case UserAgentKind::OracleDiscloser: return "oracle_discloser";
  }
  return "scripted";
}
inline UserAgentKind parse_user_agent_kind(std::string_view s) {
  return detail::parse_enum(s,
                            std::array{UserAgentKind::Scripted, UserAgentKind::PersonaLLM,
                                       UserAgentKind::OracleDiscloser},
                            "user agent kind");
}

struct UserAgentSpec {
  UserAgentKind kind = UserAgentKind::Scripted;
  std::vector<std::string> lines;  // Scripted
  std::string generator;           // PersonaLLM
  int disclose_turn = 1;           // OracleDiscloser, 1-based user turn

  void validate() const {
    if (kind == UserAgentKind::PersonaLLM && generator.empty())
      throw ConfigError("persona_llm user agent needs a generator profile");
    if (kind == UserAgentKind::OracleDiscloser &&
        (disclose_turn < 1 || disclose_turn > kMaxUserTurns))
      throw InvalidValue("disclose_turn must be within 1.." + std::to_string(kMaxUserTurns));
  }
};

class UserAgent {
 public:
  virtual ~UserAgent() = default;
  virtual std::string reply(const Transcript& t) = 0;
};

inline void require_user_turn(const Transcript& t) {
  if (t.complete() || t.next_role() != Role::User) throw ProtocolError("it is not the user's turn");
}

class ScriptedUser final : public UserAgent {
 public:
  explicit ScriptedUser(std::vector<std::string> lines) : lines_(std::move(lines)) {}
  std::string reply(const Transcript& t) override {
    require_user_turn(t);
    if (next_ >= lines_.size()) throw ScriptUnderrun("user script exhausted");
    return lines_[next_++];
  }

 private:
  std::vector<std::string> lines_;
  std::size_t next_ = 0;
};

// States the question's source sentence verbatim at the configured user
// turn; every other turn is a neutral back-channel that cannot contradict
// the persona or reveal any other fact.
class OracleDiscloser final : public UserAgent {
 public:
  OracleDiscloser(const TaskSetup& setup, int disclose_turn) : disclose_turn_(disclose_turn) {
    const auto& q = setup.question();
    source_ = setup.persona.sentences.at(q.source_index).text;
  }

  std::string reply(const Transcript& t) override {
    static constexpr std::array<std::string_view, 4> kFiller{
        "That sounds fun.", "I see, tell me more.", "Sure, I'd like to hear about that.",
        "Interesting!"};
    require_user_turn(t);
    const int turn = t.user_turns() + 1;
    if (turn == disclose_turn_) return source_;
    return std::string(kFiller[static_cast<std::size_t>(turn - 1) % kFiller.size()]);
  }

  const std::string& source() const noexcept { return source_; }

 private:
  int disclose_turn_;
  std::string source_;
};

inline constexpr std::string_view kPersonaUserPrompt =
    "You are chatting with a chatbot about the topic \"{TOPIC}\".\n"
    "Play the user described by the profile sentences below. Reply naturally in one or two short "
    "sentences and never contradict the profile.\n"
    "\n"
    "## PROFILE\n"
    "{PERSONA}\n"
    "\n"
    "## CHAT\n"
    "{CHAT}\n"
    "\n"
    "Write only your next utterance.";

inline std::string render_persona_prompt(const Transcript& t) {
  std::string persona;
  for (const auto& s : t.setup.persona.sentences) {
    if (!persona.empty()) persona += '\n';
    persona += "  - " + s.text;
  }
  std::string out(kPersonaUserPrompt);
  auto put = [&](std::string_view key, const std::string& value) {
    const auto pos = out.find(key);
    out.replace(pos, key.size(), value);
  };
  put("{CHAT}", format_chat_lines(t));
  put("{PERSONA}", persona);
  put("{TOPIC}", t.setup.topic.text());
  return out;
}

class PersonaLlmUser final : public UserAgent {
 public:
  PersonaLlmUser(Gateway& gw, std::string generator, std::uint64_t seed)
      : gw_(&gw), generator_(std::move(generator)), seed_(seed) {}

  std::string reply(const Transcript& t) override {
    require_user_turn(t);
    auto raw = gw_->generate(generator_, render_persona_prompt(t), calls_,
                             CallOptions{seed_ + static_cast<std::uint64_t>(t.next_line())})
                   .text;
    std::string text = trim(raw);
    static const std::regex prefix(R"(^\s*\d*\s*USER:\s*)");
    text = trim(std::regex_replace(text, prefix, ""));
    if (text.empty()) throw EmptyGeneration("persona user produced an empty reply");
    return text;
  }

  const CallCounter& calls() const noexcept { return calls_; }

 private:
  Gateway* gw_;
  std::string generator_;
  std::uint64_t seed_;
  CallCounter calls_;
};

inline std::unique_ptr<UserAgent> make_user_agent(const UserAgentSpec& spec, const TaskSetup& setup,
                                                  Gateway& gw, std::uint64_t seed) {
  spec.validate();
  switch (spec.kind) {
    case UserAgentKind::Scripted: return std::make_unique<ScriptedUser>(spec.lines);
    case UserAgentKind::OracleDiscloser:
      return std::make_unique<OracleDiscloser>(setup, spec.disclose_turn);
    case UserAgentKind::PersonaLLM:
      return std::make_unique<PersonaLlmUser>(gw, spec.generator, seed);
  }
  throw ConfigError("unsupported user agent");
}

inline std::string user_reply(UserAgent& agent, const Transcript& t) { return agent.reply(t); }

// ---------------------------------------------------------------------------
// Records and chat driving

// Shared by the harness and the service so both persist identical records.
inline ChatRecord make_record(const Session& s, RecordStatus status = RecordStatus::Complete,
                              std::string error = {}) {
  ChatRecord r;
  r.id = s.id;
  r.system = s.policy.system_label();
  r.transcript = s.transcript;
  r.status = status;
  r.error = std::move(error);
  r.trace = trace_block(s);
  return r;
}

// Drives a session to 18 lines. The last user line gets a belief update but
// no system reply.
inline void run_chat(const Engine& engine, Session& s, UserAgent& user) {
  while (!s.finished()) {
    std::string text = user.reply(s.transcript);
    if (s.system_budget_left())
      engine.system_turn(s, std::move(text));
    else
      engine.append_user(s, std::move(text));
  }
}

struct ExperimentPlan {
  std::vector<TaskSetup> setups;
  std::vector<SystemPolicy> policies;
  UserAgentSpec user;
  std::uint64_t seed = 0;
  std::string out;
  std::size_t workers = 1;

  void validate() const {
    if (setups.empty() || policies.empty())
      throw PreconditionError("experiment plan needs at least one setup and one policy");
    user.validate();
  }
};

// SplitMix64 step; derives independent per-chat seeds from the plan seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::string chat_id(const TaskSetup& setup, const SystemPolicy& p, std::size_t index) {
  std::string base = setup.id.empty() ? "setup" : setup.id;
  return base + "." + p.system_label() + "." + std::to_string(index);
}

inline ChatRecord run_one(const Engine& engine, const TaskSetup& setup, const SystemPolicy& policy,
                          const UserAgentSpec& user, std::uint64_t seed, std::string id) {
  Session s;
  s.id = id;
  s.policy = policy;
  s.seed = seed;
  s.transcript = open_transcript(setup);
  try {
    s = engine.open_session(setup, policy, seed, id);
    auto agent = make_user_agent(user, setup, engine.gateway(), seed);
    run_chat(engine, s, *agent);
    return make_record(s);
  } catch (const Error& e) {
    return make_record(s, RecordStatus::Failed, e.kind() + ": " + e.what());
  }
}

using RecordSink = std::function<void(const ChatRecord&)>;

// Every setup x policy pair, in plan order. Failed chats are kept, flagged.
// With workers > 1 chats run concurrently; scripted replay backends are only
// deterministic with a single worker unless their entries are keyed by match.
inline std::vector<ChatRecord> run_experiment(const ExperimentPlan& plan, const Engine& engine,
                                              const RecordSink& sink = {}) {
  plan.validate();
  struct Job {
    const TaskSetup* setup;
    const SystemPolicy* policy;
    std::size_t index;
  };
  std::vector<Job> jobs;
  for (const auto& setup : plan.setups)
    for (const auto& policy : plan.policies) jobs.push_back({&setup, &policy, jobs.size()});

  std::vector<ChatRecord> out(jobs.size());
  std::mutex sink_mu;
  auto run = [&](const Job& j) {
    out[j.index] = run_one(engine, *j.setup, *j.policy, plan.user, mix_seed(plan.seed, j.index),
                           chat_id(*j.setup, *j.policy, j.index));
    if (sink) {
      std::lock_guard lock(sink_mu);
      sink(out[j.index]);
    }
  };
  const std::size_t workers = std::clamp<std::size_t>(plan.workers, 1, jobs.size());
  if (workers == 1) {
    for (const auto& j : jobs) run(j);
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::jthread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < jobs.size();) run(jobs[i]);
    });
  pool.clear();
  return out;
}

// ---------------------------------------------------------------------------
// Plan files

inline void to_json(json& j, const UserAgentSpec& u) {
  j = json{{"kind", to_string(u.kind)}};
  if (!u.lines.empty()) j["lines"] = u.lines;
  if (!u.generator.empty()) j["generator"] = u.generator;
  if (u.kind == UserAgentKind::OracleDiscloser) j["disclose_turn"] = u.disclose_turn;
}
inline void from_json(const json& j, UserAgentSpec& u) {
  u.kind = parse_user_agent_kind(j.at("kind").get<std::string>());
  u.lines = j.value("lines", std::vector<std::string>{});
  u.generator = j.value("generator", "");
  u.disclose_turn = j.value("disclose_turn", 1);
}

// Builds setups from topic and persona pools.
inline std::vector<TaskSetup> generate_setups(const std::vector<std::string>& topics,
                                              const std::vector<std::string>& persona_pool,
                                              std::size_t persona_size, std::size_t count,
                                              std::uint64_t seed) {
  if (topics.empty()) throw InsufficientPool("topic pool is empty");
  Rng rng(seed);
  std::vector<TaskSetup> out;
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint64_t s = mix_seed(seed, i);
    auto persona = build_persona_set(persona_pool, persona_size, s);
    out.push_back(make_task_setup("setup-" + std::to_string(i + 1), Topic(topics[rng.index(topics.size())]),
                                  std::move(persona), s ^ 0x5eedULL));
  }
  return out;
}

// Plan JSON: {"seed", "workers", "out", "user", "policies": [name | policy],
// and either "setups": [TaskSetup] or "generate": {"topics", "persona_pool",
// "persona_size", "count"}}. Policy names resolve through `named`.
inline ExperimentPlan parse_plan(const json& j, const std::map<std::string, SystemPolicy>& named,
                                 const std::filesystem::path& base_dir = ".") {
  ExperimentPlan p;
  p.seed = j.value("seed", std::uint64_t{0});
  p.workers = j.value("workers", std::size_t{1});
  p.out = j.value("out", "");
  p.user = j.at("user").get<UserAgentSpec>();
  for (const auto& item : j.at("policies")) {
    if (item.is_string()) {
      auto it = named.find(item.get<std::string>());
      if (it == named.end()) throw ConfigError("unknown policy '" + item.get<std::string>() + "'");
      p.policies.push_back(it->second);
    } else {
      p.policies.push_back(item.get<SystemPolicy>());
    }
  }
  auto resolve = [&](const std::string& f) {
    std::filesystem::path path(f);
    return path.is_absolute() ? path : base_dir / path;
  };
  if (j.contains("setups")) {
    p.setups = j.at("setups").get<std::vector<TaskSetup>>();
  } else if (j.contains("generate")) {
    const auto& g = j.at("generate");
    p.setups = generate_setups(read_lines_file(resolve(g.at("topics").get<std::string>())),
                               read_lines_file(resolve(g.at("persona_pool").get<std::string>())),
                               g.value("persona_size", std::size_t{4}), g.at("count").get<std::size_t>(),
                               p.seed);
  }
  for (auto& s : p.setups) {
    const auto& q = s.question();
    if (q.source_index < s.persona.sentences.size() && gold_answer(s.persona, q) != q.gold_answer)
      throw InvalidValue("setup '" + s.id + "' gold answer disagrees with persona polarity");
  }
  return p;
}

}  // namespace pivot
