#pragma once

// Domain types shared by every module: task setup, transcripts, relationship
// types, acquisition belief and 3-point score distributions.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "pivot/errors.hpp"

namespace pivot {

using nlohmann::json;

inline constexpr int kMaxLines = 18;
inline constexpr int kMaxSystemTurns = 8;  // excluding the opener
inline constexpr int kMaxUserTurns = 9;
inline constexpr int kSystemWordCap = 30;

enum class Role { System, User };
enum class Polarity { Affirmative, Negated };
enum class SentenceOrigin { Given, AutoNegated };
enum class Answer { Yes, No };
enum class Prediction { Yes, No, CannotGuess };
enum class BeliefState { Acquiring, Acquired };

// ---------------------------------------------------------------------------
// enum <-> text

inline std::string_view to_string(Role r) { return r == Role::System ? "system" : "user"; }
inline std::string_view to_string(Polarity p) {
  return p == Polarity::Affirmative ? "affirmative" : "negated";
}
inline std::string_view to_string(SentenceOrigin o) {
  return o == SentenceOrigin::Given ? "given" : "auto_negated";
}
inline std::string_view to_string(Answer a) { return a == Answer::Yes ? "Yes" : "No"; }
inline std::string_view to_string(Prediction p) {
  switch (p) {
    case Prediction::Yes: return "Yes";
    case Prediction::No: return "No";
    case Prediction::CannotGuess: return "CannotGuess";
  }
  return "CannotGuess";
}
inline std::string_view to_string(BeliefState s) {
  return s == BeliefState::Acquiring ? "acquiring" : "acquired";
}

namespace detail {

template <typename E, std::size_t N>
E parse_enum(std::string_view text, const std::array<E, N>& values, std::string_view what) {
  for (E v : values) {
    if (to_string(v) == text) return v;
  }
  throw InvalidValue("unknown " + std::string(what) + " '" + std::string(text) + "'");
}

}  // namespace detail

inline Role parse_role(std::string_view s) {
  return detail::parse_enum(s, std::array{Role::System, Role::User}, "role");
}
inline Polarity parse_polarity(std::string_view s) {
  return detail::parse_enum(s, std::array{Polarity::Affirmative, Polarity::Negated}, "polarity");
}
inline SentenceOrigin parse_origin(std::string_view s) {
  return detail::parse_enum(s, std::array{SentenceOrigin::Given, SentenceOrigin::AutoNegated},
                            "origin");
}
inline Answer parse_answer(std::string_view s) {
  return detail::parse_enum(s, std::array{Answer::Yes, Answer::No}, "answer");
}
inline Prediction parse_prediction_label(std::string_view s) {
  return detail::parse_enum(
      s, std::array{Prediction::Yes, Prediction::No, Prediction::CannotGuess}, "prediction");
}
inline BeliefState parse_belief_state(std::string_view s) {
  return detail::parse_enum(s, std::array{BeliefState::Acquiring, BeliefState::Acquired},
                            "belief state");
}

inline std::optional<Answer> as_answer(Prediction p) {
  if (p == Prediction::Yes) return Answer::Yes;
  if (p == Prediction::No) return Answer::No;
  return std::nullopt;
}

inline Prediction as_prediction(Answer a) {
  return a == Answer::Yes ? Prediction::Yes : Prediction::No;
}

// ---------------------------------------------------------------------------
// Text helpers

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline std::string to_lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

inline std::vector<std::string> split_lines(std::string_view text) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string line(text.substr(pos, nl - pos));
    if (!line.empty() && line.back() == '\r') line.pop_back();
    out.push_back(std::move(line));
    pos = nl + 1;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Task setup

class Topic {
 public:
  Topic() = default;
  explicit Topic(std::string text) : text_(std::move(text)) {
    if (text_.empty()) throw InvalidValue("topic must be non-empty");
    if (text_.find_first_of("\r\n") != std::string::npos)
      throw InvalidValue("topic must not contain line breaks");
  }

  const std::string& text() const noexcept { return text_; }
  bool operator==(const Topic&) const = default;

 private:
  std::string text_;
};

struct PersonaSentence {
  std::string text;
  Polarity polarity = Polarity::Affirmative;
  SentenceOrigin origin = SentenceOrigin::Given;

  bool operator==(const PersonaSentence&) const = default;
};

struct PersonaSet {
  std::vector<PersonaSentence> sentences;

  std::size_t negated_count() const {
    return static_cast<std::size_t>(std::count_if(
        sentences.begin(), sentences.end(),
        [](const PersonaSentence& s) { return s.polarity == Polarity::Negated; }));
  }

  // Half affirmative, half negated; odd sizes may round either way.
  bool balanced() const {
    const std::size_t n = sentences.size();
    const std::size_t k = negated_count();
    return k == n / 2 || k == (n + 1) / 2;
  }

  bool operator==(const PersonaSet&) const = default;
};

struct Question {
  std::string text;
  std::size_t source_index = 0;
  Answer gold_answer = Answer::Yes;

  bool operator==(const Question&) const = default;
};

struct TaskSetup {
  std::string id;
  Topic topic;
  PersonaSet persona;
  std::vector<Question> questions;  // runtime enforces exactly one

  const Question& question() const {
    if (questions.size() != 1)
      throw PreconditionError("task setup must carry exactly one question (m=1), has " +
                              std::to_string(questions.size()));
    return questions.front();
  }

  bool operator==(const TaskSetup&) const = default;
};

// Answer polarity follows the polarity of the persona sentence the question
// was built from.
inline Answer gold_answer(const PersonaSet& persona, const Question& q) {
  if (q.source_index >= persona.sentences.size())
    throw IndexError("question source index " + std::to_string(q.source_index) +
                     " out of range for persona set of size " +
                     std::to_string(persona.sentences.size()));
  return persona.sentences[q.source_index].polarity == Polarity::Affirmative ? Answer::Yes
                                                                            : Answer::No;
}

inline std::string opener_text(const Topic& topic) {
  return "Hi! Let's talk about " + topic.text() + "!";
}

// ---------------------------------------------------------------------------
// Transcript

struct Utterance {
  int line = 0;
  Role role = Role::System;
  std::string text;
  bool is_init = false;

  bool operator==(const Utterance&) const = default;
};

struct Transcript {
  TaskSetup setup;
  std::vector<Utterance> utterances;

  int next_line() const { return static_cast<int>(utterances.size()) + 1; }

  // Role expected for the next line under strict alternation.
  Role next_role() const { return next_line() % 2 == 1 ? Role::System : Role::User; }

  int system_turns() const {
    return static_cast<int>(std::count_if(utterances.begin(), utterances.end(), [](auto& u) {
      return u.role == Role::System && !u.is_init;
    }));
  }

  int user_turns() const {
    return static_cast<int>(std::count_if(utterances.begin(), utterances.end(),
                                          [](auto& u) { return u.role == Role::User; }));
  }

  bool complete() const { return static_cast<int>(utterances.size()) == kMaxLines; }

  const Utterance* last_user() const {
    for (auto it = utterances.rbegin(); it != utterances.rend(); ++it)
      if (it->role == Role::User) return &*it;
    return nullptr;
  }

  // Appends the next line, enforcing alternation and the line cap.
  const Utterance& append(Role role, std::string text) {
    if (next_line() > kMaxLines)
      throw ProtocolError("transcript already holds " + std::to_string(kMaxLines) + " lines");
    if (role != next_role())
      throw ProtocolError("line " + std::to_string(next_line()) + " must be spoken by the " +
                          std::string(to_string(next_role())));
    utterances.push_back(Utterance{next_line(), role, std::move(text), false});
    return utterances.back();
  }

  // Returns a copy holding only lines 1..last_line.
  Transcript prefix(int last_line) const {
    Transcript t;
    t.setup = setup;
    for (const auto& u : utterances)
      if (u.line <= last_line) t.utterances.push_back(u);
    return t;
  }

  bool operator==(const Transcript&) const = default;
};

inline Transcript open_transcript(TaskSetup setup) {
  Transcript t;
  t.utterances.push_back(Utterance{1, Role::System, opener_text(setup.topic), true});
  t.setup = std::move(setup);
  return t;
}

struct Violation {
  int line = 0;  // 0 when the violation concerns the whole transcript
  std::string rule;
  std::string detail;

  bool operator==(const Violation&) const = default;
};

inline std::size_t word_count(std::string_view text) {
  std::size_t n = 0;
  bool in_word = false;
  for (char c : text) {
    const bool space = c == ' ' || c == '\t' || c == '\n' || c == '\r';
    if (!space && !in_word) ++n;
    in_word = !space;
  }
  return n;
}

inline std::vector<Violation> validate_transcript(const Transcript& t) {
  std::vector<Violation> out;
  const auto& us = t.utterances;
  if (static_cast<int>(us.size()) > kMaxLines)
    out.push_back({0, "length", "transcript has " + std::to_string(us.size()) +
                                    " lines, cap is " + std::to_string(kMaxLines)});
  for (std::size_t i = 0; i < us.size(); ++i) {
    const Utterance& u = us[i];
    const int expected_line = static_cast<int>(i) + 1;
    if (u.line != expected_line)
      out.push_back({u.line, "numbering",
                     "expected line " + std::to_string(expected_line) + ", found " +
                         std::to_string(u.line)});
    const Role expected_role = expected_line % 2 == 1 ? Role::System : Role::User;
    if (u.role != expected_role) {
      if (i > 0 && us[i - 1].role == u.role)
        out.push_back({expected_line, "alternation",
                       "consecutive " + std::string(to_string(u.role)) + " lines"});
      else
        out.push_back({expected_line, "role",
                       "line " + std::to_string(expected_line) + " must be " +
                           std::string(to_string(expected_role))});
    }
    if (expected_line == 1) {
      if (!u.is_init) out.push_back({1, "init", "line 1 must be the opener"});
    } else if (u.is_init) {
      out.push_back({expected_line, "init", "only line 1 may be the opener"});
    }
  }
  if (t.system_turns() > kMaxSystemTurns)
    out.push_back({0, "system_turns", std::to_string(t.system_turns()) +
                                          " non-opener system lines, cap is " +
                                          std::to_string(kMaxSystemTurns)});
  if (t.user_turns() > kMaxUserTurns)
    out.push_back({0, "user_turns", std::to_string(t.user_turns()) +
                                        " user lines, cap is " + std::to_string(kMaxUserTurns)});
  return out;
}

// Non-fatal protocol observations (the 30-word guidance for system lines).
inline std::vector<Violation> lint_transcript(const Transcript& t) {
  std::vector<Violation> out;
  for (const auto& u : t.utterances) {
    if (u.role == Role::System && !u.is_init && word_count(u.text) > kSystemWordCap)
      out.push_back({u.line, "word_cap",
                     std::to_string(word_count(u.text)) + " words exceeds " +
                         std::to_string(kSystemWordCap)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Relationship types between TOPIC and QUESTION

struct RelationshipType {
  int id;
  std::string_view name;
  std::string_view description;
  bool strategy_usable;
};

inline constexpr std::array<RelationshipType, 9> kRelationshipTypes{{
    {1, "SUB-THEME",
     "TOPIC can feature goods, events, or other things related to QUESTION, or vice versa.", true},
    {2, "PLACE",
     "TOPIC can be the place, organization or event where the event related to QUESTION "
     "occurs, or vice versa.",
     true},
    {3, "MEANS", "TOPIC can be a means to achieve a goal related to QUESTION, or vice versa.",
     true},
    {4, "CO-OCCUR",
     "TOPIC can occur or exist at the same time (or before or after) as the event or object "
     "related to QUESTION, or vice versa.",
     true},
    {5, "CAUSE",
     "TOPIC can be the cause of the event, situation or state related to QUESTION, or vice "
     "versa.",
     true},
    {6, "PREREQUISITE",
     "TOPIC can be a prerequisite for dealing with something related to QUESTION, or vice "
     "versa.",
     true},
    {7, "DOER", "TOPIC can be done by QUESTION, or vice versa.", true},
    {8, "COMMONALITY",
     "TOPIC has common points with something related to QUESTION, or vice versa.", false},
    {9, "NO-RELATION", "The relationship between TOPIC and QUESTION is not introduced.", false},
}};

inline constexpr int kStrategyTypeCount = 7;

inline const RelationshipType& relationship_type(int id) {
  if (id < 1 || id > static_cast<int>(kRelationshipTypes.size()))
    throw InvalidValue("relationship type id " + std::to_string(id) + " outside 1..9");
  return kRelationshipTypes[static_cast<std::size_t>(id - 1)];
}

// Text bound to the RELATIONSHIP_TYPE placeholder of the prototype prompt.
inline std::string relationship_binding(int id) {
  const auto& r = relationship_type(id);
  return std::string(r.name) + ": " + std::string(r.description);
}

// ---------------------------------------------------------------------------
// Acquisition belief

struct AcquisitionBelief {
  BeliefState state = BeliefState::Acquiring;
  Prediction predicted = Prediction::CannotGuess;
  std::optional<int> acquired_at_line;

  static AcquisitionBelief acquiring() { return {}; }
  static AcquisitionBelief acquired(Answer a, int line) {
    return {BeliefState::Acquired, as_prediction(a), line};
  }

  bool valid() const {
    const bool decided = predicted != Prediction::CannotGuess;
    return (state == BeliefState::Acquired) == decided &&
           (state == BeliefState::Acquired) == acquired_at_line.has_value();
  }

  bool operator==(const AcquisitionBelief&) const = default;
};

// ---------------------------------------------------------------------------
// Probabilities over ratings {1,2,3}

struct ScoreDistribution {
  double p1 = 0.0;
  double p2 = 0.0;
  double p3 = 1.0;

  static constexpr double kSumTolerance = 1e-9;

  static ScoreDistribution make(double p1, double p2, double p3) {
    ScoreDistribution d{p1, p2, p3};
    if (!d.valid()) {
      std::ostringstream os;
      os << "invalid score distribution {" << p1 << ", " << p2 << ", " << p3 << "}";
      throw InvalidValue(os.str());
    }
    return d;
  }

  bool valid() const {
    for (double p : {p1, p2, p3})
      if (!(p >= 0.0 && p <= 1.0)) return false;
    return std::abs(p1 + p2 + p3 - 1.0) <= kSumTolerance;
  }

  // Rating with the highest probability; ties resolve to the higher rating.
  int mode() const {
    if (p3 >= p2 && p3 >= p1) return 3;
    if (p2 >= p1) return 2;
    return 1;
  }

  bool operator==(const ScoreDistribution&) const = default;
};

// ---------------------------------------------------------------------------
// JSON encoding (canonical record layout lives in record.hpp)

inline void to_json(json& j, const PersonaSentence& s) {
  j = json{{"text", s.text},
           {"polarity", to_string(s.polarity)},
           {"origin", to_string(s.origin)}};
}
inline void from_json(const json& j, PersonaSentence& s) {
  s.text = j.at("text").get<std::string>();
  if (s.text.empty()) throw InvalidValue("persona sentence must be non-empty");
  s.polarity = parse_polarity(j.value("polarity", "affirmative"));
  s.origin = parse_origin(j.value("origin", "given"));
}

inline void to_json(json& j, const Question& q) {
  j = json{{"text", q.text}, {"source_index", q.source_index}, {"gold_answer", to_string(q.gold_answer)}};
}
inline void from_json(const json& j, Question& q) {
  q.text = j.at("text").get<std::string>();
  q.source_index = j.at("source_index").get<std::size_t>();
  q.gold_answer = parse_answer(j.at("gold_answer").get<std::string>());
}

inline void to_json(json& j, const TaskSetup& s) {
  j = json{{"id", s.id},
           {"topic", s.topic.text()},
           {"persona", s.persona.sentences},
           {"questions", s.questions}};
}
inline void from_json(const json& j, TaskSetup& s) {
  s.id = j.value("id", "");
  s.topic = Topic(j.at("topic").get<std::string>());
  s.persona.sentences = j.at("persona").get<std::vector<PersonaSentence>>();
  s.questions = j.at("questions").get<std::vector<Question>>();
}

inline void to_json(json& j, const Utterance& u) {
  j = json{{"line", u.line}, {"role", to_string(u.role)}, {"text", u.text}};
  if (u.is_init) j["init"] = true;
}
inline void from_json(const json& j, Utterance& u) {
  u.line = j.at("line").get<int>();
  u.role = parse_role(j.at("role").get<std::string>());
  u.text = j.at("text").get<std::string>();
  u.is_init = j.value("init", false);
}

inline void to_json(json& j, const Transcript& t) {
  j = json{{"setup", t.setup}, {"utterances", t.utterances}};
}
inline void from_json(const json& j, Transcript& t) {
  t.setup = j.at("setup").get<TaskSetup>();
  t.utterances = j.at("utterances").get<std::vector<Utterance>>();
}

inline void to_json(json& j, const AcquisitionBelief& b) {
  j = json{{"state", to_string(b.state)}, {"predicted", to_string(b.predicted)}};
  if (b.acquired_at_line) j["acquired_at_line"] = *b.acquired_at_line;
}
inline void from_json(const json& j, AcquisitionBelief& b) {
  b.state = parse_belief_state(j.at("state").get<std::string>());
  b.predicted = parse_prediction_label(j.at("predicted").get<std::string>());
  b.acquired_at_line.reset();
  if (j.contains("acquired_at_line")) b.acquired_at_line = j.at("acquired_at_line").get<int>();
  if (!b.valid()) throw InvalidValue("inconsistent acquisition belief");
}

inline void to_json(json& j, const ScoreDistribution& d) {
  j = json{{"p1", d.p1}, {"p2", d.p2}, {"p3", d.p3}};
}
inline void from_json(const json& j, ScoreDistribution& d) {
  if (j.is_array()) {
    if (j.size() != 3) throw InvalidValue("score distribution array must have 3 entries");
    d = ScoreDistribution::make(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
    return;
  }
  d = ScoreDistribution::make(j.value("p1", 0.0), j.value("p2", 0.0), j.value("p3", 0.0));
}

inline void to_json(json& j, const Violation& v) {
  j = json{{"line", v.line}, {"rule", v.rule}, {"detail", v.detail}};
}

}  // namespace pivot
