#pragma once

// Session runtime: turn protocol, the judge-and-rewrite framework, the
// candidate-cascade strategy system, and the prompt-only baselines.

#include <cstdint>
#include <functional>
#include <future>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "pivot/core.hpp"
#include "pivot/gateway.hpp"
#include "pivot/judge.hpp"
#include "pivot/prompts.hpp"

namespace pivot {

enum class PolicyKind { Standard, PromptBased, Framework, Strategy };

inline std::string_view to_string(PolicyKind k) {
  switch (k) {
    case PolicyKind::Standard: return "standard";
    case PolicyKind::PromptBased: return "prompt_based";
    case PolicyKind::Framework: return "framework";
    case PolicyKind::Strategy: return "strategy";
  }
  return "standard";
}

inline PolicyKind parse_policy_kind(std::string_view s) {
  return detail::parse_enum(s,
                            std::array{PolicyKind::Standard, PolicyKind::PromptBased,
                                       PolicyKind::Framework, PolicyKind::Strategy},
                            "policy kind");
}

struct SystemPolicy {
  PolicyKind kind = PolicyKind::Standard;
  std::string label;      // system label written to records; defaults to the kind
  std::string generator;
  std::string scorer;     // Framework and Strategy only
  std::string predictor;  // defaults to the generator

  bool tracks_belief() const {
    return kind == PolicyKind::Framework || kind == PolicyKind::Strategy;
  }
  const std::string& predictor_profile() const { return predictor.empty() ? generator : predictor; }
  std::string system_label() const { return label.empty() ? std::string(to_string(kind)) : label; }

  void validate(const Gateway& gw) const {
    if (generator.empty()) throw ConfigError("policy needs a generator profile");
    if (tracks_belief() && scorer.empty())
      throw ConfigError(std::string(to_string(kind)) + " policy needs a scorer profile");
    for (const auto* p : {&generator, &scorer, &predictor})
      if (!p->empty() && !gw.has(*p)) throw ConfigError("unknown backend profile '" + *p + "'");
  }

  bool operator==(const SystemPolicy&) const = default;
};

enum class CandidateCategory { Key, Cushion, Vanilla, Safe, SafeRewritten, VanillaRewritten };

inline std::string_view to_string(CandidateCategory c) {
  switch (c) {
    case CandidateCategory::Key: return "key";
    case CandidateCategory::Cushion: return "cushion";
    case CandidateCategory::Vanilla: return "vanilla";
    case CandidateCategory::Safe: return "safe";
    case CandidateCategory::SafeRewritten: return "safe_rewritten";
    case CandidateCategory::VanillaRewritten: return "vanilla_rewritten";
  }
  return "vanilla";
}

inline CandidateCategory parse_candidate_category(std::string_view s) {
  return detail::parse_enum(
      s,
      std::array{CandidateCategory::Key, CandidateCategory::Cushion, CandidateCategory::Vanilla,
                 CandidateCategory::Safe, CandidateCategory::SafeRewritten,
                 CandidateCategory::VanillaRewritten},
      "candidate category");
}

struct Candidate {
  CandidateCategory category = CandidateCategory::Vanilla;
  std::string text;
  std::optional<int> relationship_type;  // Key and Cushion only
  std::optional<AbruptnessVerdict> verdict;
  bool available = true;
  std::string error;  // set when unavailable

  bool operator==(const Candidate&) const = default;
};

struct BeliefUpdate {
  int user_line = 0;
  AcquisitionBelief before;
  AcquisitionBelief after;
  std::optional<Prediction> prediction;  // absent when the predictor was not called
  std::string warning;

  bool operator==(const BeliefUpdate&) const = default;
};

struct TurnTrace {
  int line = 0;
  std::vector<Candidate> candidates;
  std::size_t selected = 0;
  AcquisitionBelief belief_before;
  AcquisitionBelief belief_after;
  std::vector<std::string> warnings;

  const Candidate& chosen() const { return candidates.at(selected); }
  bool operator==(const TurnTrace&) const = default;
};

struct Prototype {
  int type_id = 0;
  std::string text;
  std::optional<AbruptnessVerdict> verdict;

  bool operator==(const Prototype&) const = default;
};

struct Session {
  std::string id;
  SystemPolicy policy;
  Transcript transcript;
  AcquisitionBelief belief;
  std::vector<Prototype> prototypes;  // all seven, by type id
  std::optional<PrototypeRanking> ranking;
  std::vector<TurnTrace> traces;
  std::vector<BeliefUpdate> belief_timeline;
  std::uint64_t seed = 0;
  CallCounter calls;
  std::vector<std::string> warnings;

  const TaskSetup& setup() const { return transcript.setup; }

  // Prototypes chosen for the chat, ordered by relationship type id.
  std::vector<const Prototype*> selected_prototypes() const {
    std::vector<const Prototype*> out;
    if (!ranking) return out;
    for (const auto& p : prototypes)
      if (std::find(ranking->selected.begin(), ranking->selected.end(), p.type_id) !=
          ranking->selected.end())
        out.push_back(&p);
    return out;
  }

  bool system_budget_left() const { return transcript.system_turns() < kMaxSystemTurns; }
  bool finished() const { return transcript.complete(); }

  bool operator==(const Session&) const = default;
};

struct Selection {
  std::size_t index = 0;
  bool needs_rewrite = false;
};

// Category cascade Key -> Cushion -> Vanilla -> Safe; inside a category the
// highest p3 among non-abrupt candidates wins (ties: lower relationship id,
// then earlier position). With no non-abrupt candidate, the Safe candidate is
// returned flagged for rewrite.
inline Selection select_response(const std::vector<Candidate>& candidates) {
  if (candidates.empty()) throw NoCandidates("no response candidates");
  static constexpr std::array kOrder{CandidateCategory::Key, CandidateCategory::Cushion,
                                     CandidateCategory::Vanilla, CandidateCategory::Safe};
  for (auto category : kOrder) {
    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      const auto& c = candidates[i];
      if (c.category != category || !c.available || !c.verdict || !c.verdict->non_abrupt)
        continue;
      if (!best) {
        best = i;
        continue;
      }
      const auto& b = candidates[*best];
      const double p = c.verdict->distribution.p3, bp = b.verdict->distribution.p3;
      if (p > bp || (p == bp && c.relationship_type.value_or(0) < b.relationship_type.value_or(0)))
        best = i;
    }
    if (best) return {*best, false};
  }
  for (std::size_t i = 0; i < candidates.size(); ++i)
    if (candidates[i].category == CandidateCategory::Safe && candidates[i].available)
      return {i, true};
  // Safe candidate unavailable: fall back to the least abrupt judged
  // candidate; ties prefer the earlier category, then the lower type id.
  const auto rank = [](const Candidate& c) {
    const auto pos = std::find(kOrder.begin(), kOrder.end(), c.category);
    return std::make_tuple(-(c.verdict ? c.verdict->distribution.p3 : -1.0),
                           static_cast<int>(pos - kOrder.begin()), c.relationship_type.value_or(0));
  };
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < candidates.size(); ++i)
    if (candidates[i].available && (!best || rank(candidates[i]) < rank(candidates[*best]))) best = i;
  if (!best) throw NoCandidates("every candidate is unavailable");
  return {*best, true};
}

// Extracts the UTTERANCE field of a prototype-preparation reply.
inline std::string parse_prototype_output(std::string_view raw, int type_id) {
  const auto lines = split_lines(raw);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    std::string t = trim(lines[i]);
    while (!t.empty() && (t.front() == '*' || t.front() == '-' || t.front() == '#'))
      t = trim(t.substr(1));
    if (t.rfind("UTTERANCE:", 0) != 0) continue;
    std::string value = trim(t.substr(10));
    for (std::size_t k = i + 1; value.empty() && k < lines.size(); ++k) value = trim(lines[k]);
    if (value.size() >= 2 && value.front() == '{' && value.back() == '}')
      value = trim(value.substr(1, value.size() - 2));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"')
      value = trim(value.substr(1, value.size() - 2));
    if (!value.empty()) return value;
    break;
  }
  throw UnparsableProtoOutput("no UTTERANCE field for relationship type " +
                              std::to_string(type_id));
}

struct EngineOptions {
  double threshold = kDefaultThreshold;
  std::size_t top_prototypes = kDefaultTopPrototypes;
  std::size_t parallelism = 1;  // concurrent candidate calls within a turn
};

class Engine {
 public:
  Engine(Gateway& gateway, const PromptRegistry& prompts, EngineOptions options = {})
      : gateway_(&gateway), prompts_(&prompts), options_(options) {}

  const EngineOptions& options() const noexcept { return options_; }
  Gateway& gateway() const noexcept { return *gateway_; }
  const PromptRegistry& prompts() const noexcept { return *prompts_; }

  Session open_session(TaskSetup setup, SystemPolicy policy, std::uint64_t seed,
                       std::string id = {}) const {
    setup.question();
    policy.validate(*gateway_);
    Session s;
    s.id = id.empty() ? setup.id : std::move(id);
    s.policy = std::move(policy);
    s.seed = seed;
    s.transcript = open_transcript(std::move(setup));
    if (s.policy.kind == PolicyKind::Strategy) {
      auto ctx = context(s, 0);
      const auto& topic = s.setup().topic;
      const auto texts =
          prepare_prototypes(ctx, s.policy.generator, topic, s.setup().question().text);
      std::vector<PrototypeScore> scores;
      for (int id = 1; id <= kStrategyTypeCount; ++id) {
        const auto& text = texts[static_cast<std::size_t>(id - 1)];
        auto verdict = judge_prototype(ctx, s.policy.scorer, topic, text);
        s.prototypes.push_back(Prototype{id, text, verdict});
        scores.push_back(PrototypeScore{id, verdict.distribution});
      }
      s.ranking = rank_prototypes(std::move(scores), options_.top_prototypes);
    }
    return s;
  }

  // One prototype per strategy-usable relationship type, in type-id order.
  std::vector<std::string> prepare_prototypes(const ModelContext& ctx,
                                              const std::string& generator, const Topic& topic,
                                              const std::string& question) const {
    if (trim(question).empty()) throw PreconditionError("question is empty");
    std::vector<std::string> out;
    for (int id = 1; id <= kStrategyTypeCount; ++id) {
      const auto prompt = prompts_->render(PromptId::PrepareKey,
                                           {{"TOPIC", topic.text()},
                                            {"QUESTION", question},
                                            {"RELATIONSHIP_TYPE", relationship_binding(id)}});
      out.push_back(
          parse_prototype_output(ctx.gw().generate(generator, prompt, ctx.calls(), ctx.options).text, id));
    }
    return out;
  }

  // Appends the user line and, for belief-tracking policies, updates the belief.
  void append_user(Session& s, std::string text) const {
    if (s.transcript.next_role() != Role::User || s.finished())
      throw ProtocolError("it is not the user's turn");
    s.transcript.append(Role::User, std::move(text));
    update_belief(s);
  }

  AcquisitionBelief update_belief(Session& s) const {
    const Utterance* last = s.transcript.last_user();
    if (!last) throw PreconditionError("belief update needs a user utterance");
    BeliefUpdate upd{last->line, s.belief, s.belief, std::nullopt, {}};
    if (s.policy.tracks_belief() && s.belief.state == BeliefState::Acquiring) {
      auto ctx = context(s, last->line);
      try {
        const auto p =
            predict_answer(ctx, s.policy.predictor_profile(), s.transcript, s.setup().question().text);
        upd.prediction = p;
        if (auto a = as_answer(p)) s.belief = AcquisitionBelief::acquired(*a, last->line);
      } catch (const UnparsableVerdict& e) {
        upd.warning = std::string("prediction ignored: ") + e.what();
        s.warnings.push_back("line " + std::to_string(last->line) + ": " + upd.warning);
      }
    }
    upd.after = s.belief;
    s.belief_timeline.push_back(std::move(upd));
    return s.belief;
  }

  // Produces the next system line.
  TurnTrace respond(Session& s) const {
    if (!s.system_budget_left())
      throw LineBudgetExhausted("system already spoke " + std::to_string(kMaxSystemTurns) +
                                " times");
    if (s.transcript.next_role() != Role::System)
      throw ProtocolError("it is not the system's turn");
    TurnTrace trace;
    trace.line = s.transcript.next_line();
    trace.belief_before = trace.belief_after = s.belief;
    if (!s.belief_timeline.empty() && s.belief_timeline.back().user_line == trace.line - 1) {
      trace.belief_before = s.belief_timeline.back().before;
      trace.belief_after = s.belief_timeline.back().after;
    }
    try {
      if (s.policy.tracks_belief() && s.belief.state == BeliefState::Acquired) {
        acquired_turn(s, trace);
      } else {
        switch (s.policy.kind) {
          case PolicyKind::Standard: single_generation(s, trace, PromptId::Vanilla); break;
          case PolicyKind::PromptBased: single_generation(s, trace, PromptId::Insight); break;
          case PolicyKind::Framework: framework_turn(s, trace); break;
          case PolicyKind::Strategy: strategy_turn(s, trace); break;
        }
      }
    } catch (const TurnFailed&) {
      throw;
    } catch (const Error& e) {
      throw TurnFailed("line " + std::to_string(trace.line) + ": " + e.kind() + ": " + e.what());
    }
    s.transcript.append(Role::System, trace.chosen().text);
    s.traces.push_back(trace);
    return trace;
  }

  TurnTrace system_turn(Session& s, std::string user_text) const {
    if (!s.system_budget_left())
      throw LineBudgetExhausted("system already spoke " + std::to_string(kMaxSystemTurns) +
                                " times");
    append_user(s, std::move(user_text));
    return respond(s);
  }

  // Four key rewrites, four cushions, one vanilla and one safe candidate,
  // each judged against the full history.
  std::vector<Candidate> build_candidates(Session& s) const {
    if (s.belief.state != BeliefState::Acquiring)
      throw PreconditionError("candidates are built only while acquiring");
    if (s.transcript.user_turns() == 0)
      throw PreconditionError("candidates need a user utterance");
    if (!s.ranking) throw PreconditionError("session has no prototype ranking");

    const int line = s.transcript.next_line();
    const auto ctx = context(s, line);
    const auto& setup = s.setup();
    const auto& history = s.transcript.utterances;
    const std::string question = setup.question().text;

    struct Job {
      Candidate candidate;
      PromptId prompt;
      Bindings bindings;
    };
    std::vector<Job> jobs;
    const auto protos = s.selected_prototypes();
    for (auto category : {CandidateCategory::Key, CandidateCategory::Cushion}) {
      const PromptId id =
          category == CandidateCategory::Key ? PromptId::RewriteKey : PromptId::GenCushion;
      for (const auto* p : protos) {
        jobs.push_back({Candidate{category, {}, p->type_id, {}, true, {}},
                        id,
                        {{"TOPIC", setup.topic.text()},
                         {"QUESTION", question},
                         {"CHAT", chat_binding(id, history)},
                         {"i", std::to_string(line)},
                         {"PLANNED_UTTERANCE", p->text}}});
      }
    }
    jobs.push_back({Candidate{CandidateCategory::Vanilla, {}, {}, {}, true, {}},
                    PromptId::Vanilla,
                    {{"TOPIC", setup.topic.text()},
                     {"QUESTION", question},
                     {"CHAT", chat_binding(PromptId::Vanilla, history)}}});
    jobs.push_back({Candidate{CandidateCategory::Safe, {}, {}, {}, true, {}},
                    PromptId::Safe,
                    {{"TOPIC", setup.topic.text()},
                     {"CHAT", chat_binding(PromptId::Safe, history)}}});

    std::vector<std::function<Candidate()>> tasks;
    for (auto& job : jobs) {
      tasks.push_back([this, &ctx, &s, &setup, &history, job]() {
        Candidate c = job.candidate;
        try {
          c.text = clean_reply(
              ctx.gw().generate(s.policy.generator, prompts_->render(job.prompt, job.bindings),
                                ctx.calls(), ctx.options)
                  .text);
          c.verdict = judge_utterance(ctx, s.policy.scorer, setup.topic, history, c.text);
        } catch (const Error& e) {
          c.available = false;
          c.error = e.kind() + ": " + e.what();
        }
        return c;
      });
    }
    auto candidates = run_all(tasks);
    if (std::none_of(candidates.begin(), candidates.end(), [](auto& c) { return c.available; }))
      throw TurnFailed("all " + std::to_string(candidates.size()) + " candidates unavailable");
    return candidates;
  }

 private:
  ModelContext context(Session& s, int line) const {
    return ModelContext{gateway_, prompts_, &s.calls,
                        CallOptions{s.seed * 1000003ULL + static_cast<std::uint64_t>(line)},
                        options_.threshold};
  }

  std::string generate(const ModelContext& ctx, const std::string& profile, PromptId id,
                       const Bindings& b) const {
    return clean_reply(ctx.gw().generate(profile, prompts_->render(id, b), ctx.calls(), ctx.options).text);
  }

  Bindings chat_bindings(const Session& s, PromptId id) const {
    return {{"TOPIC", s.setup().topic.text()},
            {"QUESTION", s.setup().question().text},
            {"CHAT", chat_binding(id, s.transcript.utterances)}};
  }

  Bindings rewrite_bindings(const Session& s, PromptId id, int line, const std::string& text) const {
    auto b = chat_bindings(s, id);
    b["t"] = std::to_string(line);
    b["UTTERANCE"] = text;
    return b;
  }

  void single_generation(Session& s, TurnTrace& trace, PromptId id) const {
    auto ctx = context(s, trace.line);
    trace.candidates.push_back(Candidate{CandidateCategory::Vanilla,
                                         generate(ctx, s.policy.generator, id, chat_bindings(s, id)),
                                         {}, {}, true, {}});
    trace.selected = 0;
  }

  // Generate, judge, rewrite once if abrupt.
  void framework_turn(Session& s, TurnTrace& trace) const {
    auto ctx = context(s, trace.line);
    Candidate vanilla{CandidateCategory::Vanilla,
                      generate(ctx, s.policy.generator, PromptId::Vanilla,
                               chat_bindings(s, PromptId::Vanilla)),
                      {}, {}, true, {}};
    trace.candidates.push_back(vanilla);
    trace.selected = 0;
    try {
      trace.candidates[0].verdict = judge_utterance(ctx, s.policy.scorer, s.setup().topic,
                                                    s.transcript.utterances, vanilla.text);
    } catch (const Error& e) {
      trace.warnings.push_back(std::string("emitted unjudged: ") + e.kind() + ": " + e.what());
      return;
    }
    if (trace.candidates[0].verdict->non_abrupt) return;
    try {
      trace.candidates.push_back(
          Candidate{CandidateCategory::VanillaRewritten,
                    generate(ctx, s.policy.generator, PromptId::Rewrite,
                             rewrite_bindings(s, PromptId::Rewrite, trace.line, vanilla.text)),
                    {}, {}, true, {}});
      trace.selected = 1;
    } catch (const Error& e) {
      trace.warnings.push_back(std::string("rewrite failed: ") + e.kind() + ": " + e.what());
    }
  }

  void strategy_turn(Session& s, TurnTrace& trace) const {
    trace.candidates = build_candidates(s);
    const auto sel = select_response(trace.candidates);
    trace.selected = sel.index;
    if (sel.needs_rewrite) rewrite_safe(s, trace, trace.candidates[sel.index].text);
  }

  void rewrite_safe(Session& s, TurnTrace& trace, const std::string& text) const {
    auto ctx = context(s, trace.line);
    try {
      trace.candidates.push_back(
          Candidate{CandidateCategory::SafeRewritten,
                    generate(ctx, s.policy.generator, PromptId::SafeRewrite,
                             rewrite_bindings(s, PromptId::SafeRewrite, trace.line, text)),
                    {}, {}, true, {}});
      trace.selected = trace.candidates.size() - 1;
    } catch (const Error& e) {
      trace.warnings.push_back(std::string("safe rewrite failed: ") + e.kind() + ": " + e.what());
    }
  }

  // Topic-only generation once the answer is inferable.
  void acquired_turn(Session& s, TurnTrace& trace) const {
    auto ctx = context(s, trace.line);
    Candidate safe{CandidateCategory::Safe,
                   generate(ctx, s.policy.generator, PromptId::Safe,
                            {{"TOPIC", s.setup().topic.text()},
                             {"CHAT", chat_binding(PromptId::Safe, s.transcript.utterances)}}),
                   {}, {}, true, {}};
    trace.candidates.push_back(safe);
    trace.selected = 0;
    try {
      trace.candidates[0].verdict = judge_utterance(ctx, s.policy.scorer, s.setup().topic,
                                                    s.transcript.utterances, safe.text);
    } catch (const Error& e) {
      trace.warnings.push_back(std::string("emitted unjudged: ") + e.kind() + ": " + e.what());
      return;
    }
    if (!trace.candidates[0].verdict->non_abrupt) rewrite_safe(s, trace, safe.text);
  }

  template <typename T>
  std::vector<T> run_all(const std::vector<std::function<T()>>& tasks) const {
    std::vector<T> out;
    out.reserve(tasks.size());
    const std::size_t width = std::max<std::size_t>(1, options_.parallelism);
    if (width == 1) {
      for (const auto& t : tasks) out.push_back(t());
      return out;
    }
    for (std::size_t begin = 0; begin < tasks.size(); begin += width) {
      std::vector<std::future<T>> batch;
      for (std::size_t i = begin; i < std::min(tasks.size(), begin + width); ++i)
        batch.push_back(std::async(std::launch::async, tasks[i]));
      for (auto& f : batch) out.push_back(f.get());
    }
    return out;
  }

  Gateway* gateway_;
  const PromptRegistry* prompts_;
  EngineOptions options_;
};

// ---------------------------------------------------------------------------
// JSON

inline void to_json(json& j, const SystemPolicy& p) {
  j = json{{"kind", to_string(p.kind)}, {"label", p.label}, {"generator", p.generator}};
  if (!p.scorer.empty()) j["scorer"] = p.scorer;
  if (!p.predictor.empty()) j["predictor"] = p.predictor;
}
inline void from_json(const json& j, SystemPolicy& p) {
  p.kind = parse_policy_kind(j.at("kind").get<std::string>());
  p.label = j.value("label", "");
  p.generator = j.value("generator", "");
  p.scorer = j.value("scorer", "");
  p.predictor = j.value("predictor", "");
}

inline void to_json(json& j, const Candidate& c) {
  j = json{{"category", to_string(c.category)}, {"text", c.text}, {"available", c.available}};
  if (c.relationship_type) j["relationship_type"] = *c.relationship_type;
  if (c.verdict) j["verdict"] = *c.verdict;
  if (!c.error.empty()) j["error"] = c.error;
}
inline void from_json(const json& j, Candidate& c) {
  c.category = parse_candidate_category(j.at("category").get<std::string>());
  c.text = j.value("text", "");
  c.available = j.value("available", true);
  c.relationship_type.reset();
  if (j.contains("relationship_type")) c.relationship_type = j.at("relationship_type").get<int>();
  c.verdict.reset();
  if (j.contains("verdict")) c.verdict = j.at("verdict").get<AbruptnessVerdict>();
  c.error = j.value("error", "");
}

inline void to_json(json& j, const BeliefUpdate& u) {
  j = json{{"user_line", u.user_line}, {"before", u.before}, {"after", u.after}};
  if (u.prediction) j["prediction"] = to_string(*u.prediction);
  if (!u.warning.empty()) j["warning"] = u.warning;
}
inline void from_json(const json& j, BeliefUpdate& u) {
  u.user_line = j.at("user_line").get<int>();
  u.before = j.at("before").get<AcquisitionBelief>();
  u.after = j.at("after").get<AcquisitionBelief>();
  u.prediction.reset();
  if (j.contains("prediction"))
    u.prediction = parse_prediction_label(j.at("prediction").get<std::string>());
  u.warning = j.value("warning", "");
}

inline void to_json(json& j, const TurnTrace& t) {
  j = json{{"line", t.line},
           {"candidates", t.candidates},
           {"selected", t.selected},
           {"belief_before", t.belief_before},
           {"belief_after", t.belief_after}};
  if (!t.warnings.empty()) j["warnings"] = t.warnings;
}
inline void from_json(const json& j, TurnTrace& t) {
  t.line = j.at("line").get<int>();
  t.candidates = j.at("candidates").get<std::vector<Candidate>>();
  t.selected = j.at("selected").get<std::size_t>();
  if (t.selected >= t.candidates.size()) throw InvalidValue("trace selects a missing candidate");
  t.belief_before = j.at("belief_before").get<AcquisitionBelief>();
  t.belief_after = j.at("belief_after").get<AcquisitionBelief>();
  t.warnings = j.value("warnings", std::vector<std::string>{});
}

inline void to_json(json& j, const Prototype& p) {
  j = json{{"type", p.type_id}, {"text", p.text}};
  if (p.verdict) j["verdict"] = *p.verdict;
}
inline void from_json(const json& j, Prototype& p) {
  p.type_id = j.at("type").get<int>();
  p.text = j.at("text").get<std::string>();
  p.verdict.reset();
  if (j.contains("verdict")) p.verdict = j.at("verdict").get<AbruptnessVerdict>();
}

// The `trace` extension block stored on corpus records.
inline json trace_block(const Session& s) {
  json j{{"policy", s.policy},
         {"seed", s.seed},
         {"turns", s.traces},
         {"belief_timeline", s.belief_timeline},
         {"belief", s.belief},
         {"calls", s.calls}};
  if (!s.prototypes.empty()) j["prototypes"] = s.prototypes;
  if (s.ranking) j["ranking"] = *s.ranking;
  if (!s.warnings.empty()) j["warnings"] = s.warnings;
  return j;
}

inline void to_json(json& j, const Session& s) {
  j = trace_block(s);
  j["id"] = s.id;
  j["transcript"] = s.transcript;
}
inline void from_json(const json& j, Session& s) {
  s.id = j.value("id", "");
  s.policy = j.at("policy").get<SystemPolicy>();
  s.seed = j.value("seed", std::uint64_t{0});
  s.transcript = j.at("transcript").get<Transcript>();
  s.traces = j.value("turns", std::vector<TurnTrace>{});
  s.belief_timeline = j.value("belief_timeline", std::vector<BeliefUpdate>{});
  s.belief = j.at("belief").get<AcquisitionBelief>();
  s.calls = j.value("calls", CallCounter{});
  s.prototypes = j.value("prototypes", std::vector<Prototype>{});
  s.ranking.reset();
  if (j.contains("ranking")) s.ranking = j.at("ranking").get<PrototypeRanking>();
  s.warnings = j.value("warnings", std::vector<std::string>{});
}

}  // namespace pivot
