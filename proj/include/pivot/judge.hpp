#pragma once

// Automated judgments shared by the engine and the evaluation stack.

#include <algorithm>
#include <regex>
#include <set>
#include <string>
#include <vector>

#include "pivot/core.hpp"
#include "pivot/gateway.hpp"
#include "pivot/prompts.hpp"

namespace pivot {

inline constexpr double kDefaultThreshold = 0.5;
inline constexpr std::size_t kDefaultTopPrototypes = 4;

struct AbruptnessVerdict {
  ScoreDistribution distribution;
  bool non_abrupt = false;
  double threshold = kDefaultThreshold;

  bool operator==(const AbruptnessVerdict&) const = default;
};

// Non-abrupt iff the probability of rating 3 strictly exceeds the threshold.
inline AbruptnessVerdict flag_utterance(const ScoreDistribution& dist,
                                        double threshold = kDefaultThreshold) {
  if (!(threshold >= 0.0 && threshold <= 1.0))
    throw InvalidThreshold("threshold " + std::to_string(threshold) + " outside [0,1]");
  if (!dist.valid()) throw InvalidValue("invalid score distribution");
  return {dist, dist.p3 > threshold, threshold};
}

// Everything a model-backed judgment needs besides the profile name.
struct ModelContext {
  Gateway* gateway = nullptr;
  const PromptRegistry* prompts = nullptr;
  CallCounter* counter = nullptr;
  CallOptions options;
  double threshold = kDefaultThreshold;

  Gateway& gw() const { return *gateway; }
  const PromptRegistry& reg() const { return *prompts; }
  CallCounter& calls() const { return *counter; }
};

// Strips the "N CHATBOT:" framing models echo back from the numbered-chat
// prompts; falls back to the whole reply on one line.
inline std::string clean_reply(std::string_view raw) {
  static const std::regex chatbot_line(R"(^\s*\*?\s*\{?\d*\}?\s*CHATBOT:\s*(.*)$)");
  std::string fallback;
  for (const auto& line : split_lines(raw)) {
    std::smatch m;
    if (std::regex_match(line, m, chatbot_line)) {
      std::string text = trim(m[1].str());
      if (!text.empty()) {
        fallback = text;
        break;
      }
      continue;
    }
    const std::string t = trim(line);
    if (t.empty()) continue;
    if (!fallback.empty()) fallback += ' ';
    fallback += t;
  }
  if (fallback.size() >= 2 && fallback.front() == '"' && fallback.back() == '"')
    fallback = trim(fallback.substr(1, fallback.size() - 2));
  if (fallback.empty()) throw EmptyGeneration("backend returned an empty reply");
  return fallback;
}

// Single Yes/No classification reply.
inline bool parse_yes_no(std::string_view raw) {
  std::string word;
  for (char c : trim(raw)) {
    if (std::isalpha(static_cast<unsigned char>(c)))
      word += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    else if (!word.empty())
      break;
  }
  if (word == "yes") return true;
  if (word == "no") return false;
  throw UnparsableVerdict("expected Yes or No, got '" + trim(raw).substr(0, 80) + "'");
}

inline AbruptnessVerdict judge_utterance(const ModelContext& ctx, const std::string& scorer,
                                         const Topic& topic,
                                         const std::vector<Utterance>& history,
                                         const std::string& utterance) {
  std::vector<Utterance> chat = history;
  chat.push_back(Utterance{static_cast<int>(history.size()) + 1, Role::System, utterance, false});
  const auto prompt = ctx.reg().render(
      PromptId::AbruptEval,
      {{"TOPIC", topic.text()}, {"CHAT", chat_binding(PromptId::AbruptEval, chat)}});
  const auto dist = ctx.gw().score_abruptness(scorer, prompt, ctx.calls(), ctx.options);
  return flag_utterance(dist, ctx.threshold);
}

inline Prediction predict_answer(const ModelContext& ctx, const std::string& generator,
                                 const Transcript& transcript, const std::string& question) {
  if (transcript.user_turns() == 0)
    throw PreconditionError("answer prediction needs at least one user utterance");
  const auto prompt = ctx.reg().render(
      PromptId::Predict, {{"CHAT", chat_binding(PromptId::Predict, transcript.utterances)},
                          {"QUESTION", question}});
  return parse_prediction(ctx.gw().generate(generator, prompt, ctx.calls(), ctx.options).text);
}

// Prototype rating sees the topic and the utterance only, never chat history.
inline AbruptnessVerdict judge_prototype(const ModelContext& ctx, const std::string& scorer,
                                         const Topic& topic, const std::string& prototype) {
  if (trim(prototype).empty()) throw PreconditionError("prototype text is empty");
  const auto prompt =
      ctx.reg().render(PromptId::EvalKey, {{"TOPIC", topic.text()}, {"UTTERANCE", prototype}});
  return flag_utterance(ctx.gw().score_abruptness(scorer, prompt, ctx.calls(), ctx.options),
                        ctx.threshold);
}

struct PrototypeScore {
  int type_id = 0;
  ScoreDistribution distribution;

  bool operator==(const PrototypeScore&) const = default;
};

struct PrototypeRanking {
  std::vector<PrototypeScore> entries;  // descending p3, ties by ascending id
  std::vector<int> selected;            // first k ids of `entries`

  bool operator==(const PrototypeRanking&) const = default;
};

inline PrototypeRanking rank_prototypes(std::vector<PrototypeScore> scores,
                                        std::size_t top_k = kDefaultTopPrototypes) {
  if (scores.size() != kStrategyTypeCount)
    throw ArityError("expected " + std::to_string(kStrategyTypeCount) +
                     " prototype scores, got " + std::to_string(scores.size()));
  std::set<int> seen;
  for (const auto& s : scores) {
    if (s.type_id < 1 || s.type_id > kStrategyTypeCount)
      throw InvalidValue("relationship type " + std::to_string(s.type_id) +
                         " is not strategy-usable");
    if (!seen.insert(s.type_id).second)
      throw DuplicateType("relationship type " + std::to_string(s.type_id) + " appears twice");
  }
  std::stable_sort(scores.begin(), scores.end(), [](const auto& a, const auto& b) {
    if (a.distribution.p3 != b.distribution.p3) return a.distribution.p3 > b.distribution.p3;
    return a.type_id < b.type_id;
  });
  PrototypeRanking r;
  r.entries = std::move(scores);
  for (std::size_t i = 0; i < std::min(top_k, r.entries.size()); ++i)
    r.selected.push_back(r.entries[i].type_id);
  return r;
}

namespace detail {

inline const Utterance& key_system_line(const Transcript& t, int key_line) {
  for (const auto& u : t.utterances)
    if (u.line == key_line) {
      if (u.role != Role::System)
        throw PreconditionError("line " + std::to_string(key_line) + " is not a system line");
      return u;
    }
  throw IndexError("transcript has no line " + std::to_string(key_line));
}

inline std::string explanation_prompt(const ModelContext& ctx, PromptId id, const Topic& topic,
                                      const std::string& question, const Transcript& t,
                                      int key_line) {
  key_system_line(t, key_line);
  const auto chat = t.prefix(key_line).utterances;
  return ctx.reg().render(id, {{"TOPIC", topic.text()},
                               {"QUESTION", question},
                               {"CHAT", chat_binding(id, chat, key_line)}});
}

}  // namespace detail

// True iff the backend says the key line already explains why it asks.
inline bool detect_explanation(const ModelContext& ctx, const std::string& generator,
                               const Topic& topic, const std::string& question,
                               const Transcript& transcript, int key_line) {
  const auto prompt =
      detail::explanation_prompt(ctx, PromptId::EvalReason, topic, question, transcript, key_line);
  return parse_yes_no(ctx.gw().generate(generator, prompt, ctx.calls(), ctx.options).text);
}

inline std::string add_explanation(const ModelContext& ctx, const std::string& generator,
                                   const Topic& topic, const std::string& question,
                                   const Transcript& transcript, int key_line) {
  const auto prompt =
      detail::explanation_prompt(ctx, PromptId::AddReason, topic, question, transcript, key_line);
  return clean_reply(ctx.gw().generate(generator, prompt, ctx.calls(), ctx.options).text);
}

inline void to_json(json& j, const AbruptnessVerdict& v) {
  j = json{{"distribution", v.distribution}, {"non_abrupt", v.non_abrupt}, {"threshold", v.threshold}};
}
inline void from_json(const json& j, AbruptnessVerdict& v) {
  v.distribution = j.at("distribution").get<ScoreDistribution>();
  v.threshold = j.value("threshold", kDefaultThreshold);
  v.non_abrupt = j.at("non_abrupt").get<bool>();
}

inline void to_json(json& j, const PrototypeScore& s) {
  j = json{{"type", s.type_id}, {"distribution", s.distribution}};
}
inline void from_json(const json& j, PrototypeScore& s) {
  s.type_id = j.at("type").get<int>();
  s.distribution = j.at("distribution").get<ScoreDistribution>();
}

inline void to_json(json& j, const PrototypeRanking& r) {
  j = json{{"entries", r.entries}, {"selected", r.selected}};
}
inline void from_json(const json& j, PrototypeRanking& r) {
  r.entries = j.at("entries").get<std::vector<PrototypeScore>>();
  r.selected = j.at("selected").get<std::vector<int>>();
}

}  // namespace pivot
