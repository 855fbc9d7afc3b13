#pragma once

// Deterministic stand-ins for model backends and small fixture builders
// shared by the unit tests and the acceptance binary.

#include <cstdint>
#include <regex>
#include <string>
#include <vector>

#include "pivot/pivot.hpp"

namespace pivot::testing {

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline const PromptRegistry& registry() {
  static const PromptRegistry reg = PromptRegistry::load_default();
  return reg;
}

// Relationship type named in a prototype-preparation prompt.
inline int type_in_prompt(std::string_view prompt) {
  for (int id = 1; id <= kStrategyTypeCount; ++id)
    if (prompt.find(relationship_binding(id)) != std::string_view::npos) return id;
  return 0;
}

inline int prototype_in_prompt(std::string_view prompt) {
  static const std::regex re(R"(Prototype (\d))");
  const std::string s(prompt);
  std::smatch sm;
  if (std::regex_search(s, sm, re)) return std::stoi(sm[1].str());
  return 0;
}

// Replies depend only on the prompt, so reruns are byte-identical.
inline std::string synthetic_generate(std::string_view prompt) {
  const auto id = registry().identify(prompt);
  if (!id) throw ScriptError("synthetic generator got an unrecognized prompt");
  const std::string h = std::to_string(fnv1a(prompt) % 10000);
  switch (*id) {
    case PromptId::PrepareKey:
      return "TOPIC: x\nQUESTION: y\nUTTERANCE: Prototype " + std::to_string(type_in_prompt(prompt)) +
             " draft " + h + ".";
    case PromptId::RewriteKey:
      return "CHATBOT: Key line from prototype " + std::to_string(prototype_in_prompt(prompt)) + " (" + h + ")";
    case PromptId::GenCushion:
      return "CHATBOT: Cushion line before prototype " + std::to_string(prototype_in_prompt(prompt)) + " (" + h + ")";
    case PromptId::Vanilla: return "Vanilla line " + h + ".";
    case PromptId::Safe: return "Safe line " + h + ".";
    case PromptId::Rewrite: return "Rewritten vanilla line " + h + ".";
    case PromptId::SafeRewrite: return "Rewritten safe line " + h + ".";
    case PromptId::Insight: return "Insight line " + h + ".";
    case PromptId::Predict: return "Q1: 1/CannotGuess";
    case PromptId::EvalReason: return "No";
    case PromptId::AddReason: return "Explained line " + h + ".";
    default: return "- item " + h;
  }
}

inline ScoreDistribution synthetic_score(std::string_view prompt) {
  const double p3 = static_cast<double>(fnv1a(prompt) % 101) / 100.0;
  return ScoreDistribution::make(0.0, 1.0 - p3, p3);
}

inline bool reads_negated(std::string_view sentence) {
  const std::string s = " " + to_lower(sentence) + " ";
  return s.find(" not ") != std::string::npos || s.find("n't ") != std::string::npos ||
         s.find(" cannot ") != std::string::npos || s.find(" never ") != std::string::npos;
}

// Replay predictor that infers the answer from a disclosed source sentence:
// one repeatable entry per distinct sentence, then a CannotGuess fallback.
inline std::shared_ptr<ScriptedBackend> faithful_predictor(const std::vector<TaskSetup>& setups) {
  std::vector<ScriptEntry> entries;
  std::set<std::string> seen;
  for (const auto& s : setups) {
    const auto& src = s.persona.sentences.at(s.question().source_index).text;
    if (!seen.insert(src).second) continue;
    entries.push_back(ScriptEntry{"USER: " + src,
                                  std::string("Q1: 3/") + (reads_negated(src) ? "No" : "Yes"),
                                  {}, {}, true});
  }
  entries.push_back(ScriptEntry{"", std::string("Q1: 1/CannotGuess"), {}, {}, true});
  return std::make_shared<ScriptedBackend>(BackendKind::ScriptedGenerator, std::move(entries));
}

inline BackendProfile profile(std::string name, BackendKind kind = BackendKind::ScriptedGenerator) {
  BackendProfile p;
  p.name = std::move(name);
  p.kind = kind;
  return p;
}

// Gateway with "gen" (synthetic generator), "judge" (synthetic scorer) and
// "pred" (synthetic predictor unless a replay is supplied).
inline std::unique_ptr<Gateway> synthetic_gateway(std::shared_ptr<Backend> predictor = nullptr) {
  auto gw = std::make_unique<Gateway>(4);
  gw->add(profile("gen"), std::make_shared<FunctionBackend>(synthetic_generate, nullptr));
  gw->add(profile("judge", BackendKind::ScriptedScorer),
          std::make_shared<FunctionBackend>(nullptr, synthetic_score));
  gw->add(profile("pred"),
          predictor ? predictor : std::make_shared<FunctionBackend>(synthetic_generate, nullptr));
  return gw;
}

inline SystemPolicy policy(PolicyKind kind, std::string label = {}) {
  SystemPolicy p;
  p.kind = kind;
  p.label = label;
  p.generator = "gen";
  if (kind == PolicyKind::Framework || kind == PolicyKind::Strategy) p.scorer = "judge";
  p.predictor = "pred";
  return p;
}

inline const std::vector<std::string>& persona_pool() {
  static const std::vector<std::string> pool{
      "I enjoy cold drinks.",           "I am particular about audio equipment.",
      "I like to exercise.",            "I have a dog.",
      "I can swim.",                    "I play the guitar.",
      "I am a morning person.",         "I have been to Japan.",
      "I love spicy food.",             "I drink coffee every day.",
      "I am allergic to cats.",         "I watch horror movies.",
      "I have two sisters.",            "I ride a bicycle to work.",
      "I am learning French.",          "I grow tomatoes in my garden.",
      "I collect vinyl records.",       "I can drive a car.",
      "I am a vegetarian.",             "I read science fiction novels.",
      "I live near the ocean.",         "I have a tattoo.",
      "I enjoy camping in the mountains.", "I am afraid of heights.",
      "I speak three languages.",       "I bake bread on weekends.",
      "I own a smartphone.",            "I like jazz music.",
      "I am good at chess.",            "I work from home.",
      "My favorite color is green.",    "My brother is a doctor.",
      "I have a driver's license.",     "I prefer tea to coffee.",
      "I am a big fan of baseball.",    "I practice yoga.",
      "I sleep eight hours a night.",   "I knit scarves.",
      "I paint watercolors.",           "I can play the piano."};
  return pool;
}

inline const std::vector<std::string>& topic_pool() {
  static const std::vector<std::string> topics{
      "fishing",   "cooking",  "movies",    "travel",     "soccer",   "gardening",
      "music",     "books",    "photography", "hiking",   "video games", "coffee",
      "cars",      "fashion",  "painting",  "pets",       "baseball", "camping",
      "board games", "history", "science",  "smartphones", "dancing", "theater",
      "skiing",    "cycling",  "anime",     "architecture", "wine",   "astronomy"};
  return topics;
}

inline std::vector<TaskSetup> sample_setups(std::size_t count, std::uint64_t seed,
                                            std::size_t persona_size = 4) {
  return generate_setups(topic_pool(), persona_pool(), persona_size, count, seed);
}

inline TaskSetup fishing_setup() {
  TaskSetup s;
  s.id = "fishing-1";
  s.topic = Topic("Fishing");
  s.persona.sentences = {
      {"I enjoy camping.", Polarity::Affirmative, SentenceOrigin::Given},
      {"I don't enjoy cold drinks.", Polarity::Negated, SentenceOrigin::AutoNegated},
      {"I am particular about audio equipment.", Polarity::Affirmative, SentenceOrigin::Given},
      {"I am not a morning person.", Polarity::Negated, SentenceOrigin::AutoNegated}};
  s.questions = {Question{"Are you particular about audio equipment?", 2, Answer::Yes}};
  return s;
}

// Complete 18-line transcript with placeholder utterances.
inline Transcript full_transcript(TaskSetup setup = fishing_setup()) {
  Transcript t = open_transcript(std::move(setup));
  while (!t.complete())
    t.append(t.next_role(), t.next_role() == Role::User ? "user line " + std::to_string(t.next_line())
                                                         : "system line " + std::to_string(t.next_line()));
  return t;
}

// Full-mode bundle with the same abruptness rating everywhere and the given
// predictability verdicts.
inline AnnotationBundle uniform_bundle(const Transcript& t, int rating, bool acquired) {
  AnnotationBundle b;
  for (int e = 0; e < 3; ++e) {
    AbruptnessAnnotation a{"a" + std::to_string(e), {}};
    for (int line : non_init_system_lines(t)) a.scores[line] = rating;
    b.abruptness.push_back(a);
    PredictabilityAnnotation p{"p" + std::to_string(e), 1, std::nullopt, {}};
    if (acquired) p = {"p" + std::to_string(e), 3, Answer::Yes, {8}};
    b.predictability.push_back(p);
  }
  return b;
}

inline ChatRecord annotated_record(std::string id, std::string system, bool acquired, bool non_abrupt,
                                   TaskSetup setup = fishing_setup()) {
  ChatRecord r;
  r.id = std::move(id);
  r.system = std::move(system);
  r.transcript = full_transcript(std::move(setup));
  r.annotations = uniform_bundle(r.transcript, non_abrupt ? 3 : 1, acquired);
  return r;
}

}  // namespace pivot::testing
