#pragma once

// Annotation schema, chat-level aggregation, task metrics, inter-annotator
// agreement and classifier-validation statistics.

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "pivot/core.hpp"

namespace pivot {

inline constexpr std::size_t kEvaluatorsPerPerspective = 3;

struct AbruptnessAnnotation {
  std::string evaluator;
  std::map<int, int> scores;  // system line -> 1..3

  bool operator==(const AbruptnessAnnotation&) const = default;
};

struct PredictabilityAnnotation {
  std::string evaluator;
  int score = 1;  // 1..3
  std::optional<Answer> inferred;
  std::set<int> identified_lines;

  bool operator==(const PredictabilityAnnotation&) const = default;
};

inline void validate(const PredictabilityAnnotation& a) {
  if (a.evaluator.empty()) throw SchemaViolation("predictability annotation needs an evaluator id");
  if (a.score < 1 || a.score > 3)
    throw SchemaViolation("predictability score " + std::to_string(a.score) + " outside 1..3");
  if ((a.score == 1) != !a.inferred)
    throw SchemaViolation("inferred answer must be absent exactly when the score is 1");
  if ((a.score == 1) != a.identified_lines.empty())
    throw SchemaViolation("identified lines must be empty exactly when the score is 1");
}

inline void validate(const AbruptnessAnnotation& a) {
  if (a.evaluator.empty()) throw SchemaViolation("abruptness annotation needs an evaluator id");
  for (const auto& [line, score] : a.scores)
    if (score < 1 || score > 3)
      throw SchemaViolation("abruptness score " + std::to_string(score) + " on line " +
                            std::to_string(line) + " outside 1..3");
}

// Full: three evaluators per perspective. Reduced: one evaluator, with
// abruptness merged conservatively against a model verdict per line.
enum class AnnotationMode { Full, Reduced };

inline std::string_view to_string(AnnotationMode m) {
  return m == AnnotationMode::Full ? "full" : "reduced";
}
inline AnnotationMode parse_annotation_mode(std::string_view s) {
  return detail::parse_enum(s, std::array{AnnotationMode::Full, AnnotationMode::Reduced},
                            "annotation mode");
}

struct AnnotationBundle {
  AnnotationMode mode = AnnotationMode::Full;
  std::vector<AbruptnessAnnotation> abruptness;
  std::vector<PredictabilityAnnotation> predictability;
  std::map<int, bool> model_non_abrupt;  // reduced mode: system line -> model verdict

  std::size_t required() const {
    return mode == AnnotationMode::Full ? kEvaluatorsPerPerspective : 1;
  }
  bool abruptness_complete() const { return abruptness.size() == required(); }
  bool predictability_complete() const { return predictability.size() == required(); }
  bool complete() const { return abruptness_complete() && predictability_complete(); }

  bool operator==(const AnnotationBundle&) const = default;
};

// Checks that every annotation refers to lines of the right role.
inline void validate(const AnnotationBundle& b, const Transcript& t) {
  auto role_of = [&](int line) -> std::optional<Role> {
    for (const auto& u : t.utterances)
      if (u.line == line) return u.is_init ? std::nullopt : std::optional<Role>(u.role);
    return std::nullopt;
  };
  if (b.abruptness.size() > b.required() || b.predictability.size() > b.required())
    throw SchemaViolation("too many annotations for " + std::string(to_string(b.mode)) + " mode");
  std::set<std::string> seen;
  for (const auto& a : b.abruptness) {
    validate(a);
    if (!seen.insert(a.evaluator).second)
      throw DuplicateAnnotation("evaluator '" + a.evaluator + "' rated abruptness twice");
    for (const auto& [line, score] : a.scores)
      if (role_of(line) != Role::System)
        throw SchemaViolation("abruptness score on line " + std::to_string(line) +
                              ", which is not a non-init system line");
  }
  seen.clear();
  for (const auto& p : b.predictability) {
    validate(p);
    if (!seen.insert(p.evaluator).second)
      throw DuplicateAnnotation("evaluator '" + p.evaluator + "' rated predictability twice");
    for (int line : p.identified_lines)
      if (role_of(line) != Role::User)
        throw SchemaViolation("identified line " + std::to_string(line) + " is not a user line");
  }
  for (const auto& [line, v] : b.model_non_abrupt)
    if (role_of(line) != Role::System)
      throw SchemaViolation("model verdict on line " + std::to_string(line) +
                            ", which is not a non-init system line");
}

// ---------------------------------------------------------------------------
// Aggregation rules

inline bool utterance_non_abrupt(std::span<const int> ratings) {
  if (ratings.size() != kEvaluatorsPerPerspective)
    throw ArityError("expected 3 ratings, got " + std::to_string(ratings.size()));
  return std::count(ratings.begin(), ratings.end(), 3) >= 2;
}

inline bool utterance_non_abrupt(std::initializer_list<int> ratings) {
  return utterance_non_abrupt(std::span<const int>(ratings.begin(), ratings.size()));
}

inline bool conservative_non_abrupt(std::optional<bool> human, std::optional<bool> model) {
  if (!human || !model) throw IncompleteAnnotation("conservative merge needs both verdicts");
  return *human && *model;
}

inline std::vector<int> non_init_system_lines(const Transcript& t) {
  std::vector<int> out;
  for (const auto& u : t.utterances)
    if (u.role == Role::System && !u.is_init) out.push_back(u.line);
  return out;
}

// Per-line non-abrupt verdict under the bundle's mode.
inline std::map<int, bool> line_non_abrupt(const AnnotationBundle& b, const Transcript& t) {
  if (!b.abruptness_complete())
    throw IncompleteAnnotation("need " + std::to_string(b.required()) +
                               " abruptness annotations, have " +
                               std::to_string(b.abruptness.size()));
  std::map<int, bool> out;
  for (int line : non_init_system_lines(t)) {
    std::vector<int> ratings;
    for (const auto& a : b.abruptness) {
      auto it = a.scores.find(line);
      if (it == a.scores.end())
        throw IncompleteAnnotation("evaluator '" + a.evaluator + "' has no score for line " +
                                   std::to_string(line));
      ratings.push_back(it->second);
    }
    if (b.mode == AnnotationMode::Full) {
      out[line] = utterance_non_abrupt(ratings);
    } else {
      auto m = b.model_non_abrupt.find(line);
      if (m == b.model_non_abrupt.end())
        throw IncompleteAnnotation("no model verdict for line " + std::to_string(line));
      out[line] = conservative_non_abrupt(ratings.front() == 3, m->second);
    }
  }
  return out;
}

inline bool chat_non_abrupt(const AnnotationBundle& b, const Transcript& t) {
  const auto lines = line_non_abrupt(b, t);
  return std::all_of(lines.begin(), lines.end(), [](const auto& kv) { return kv.second; });
}

struct AcquisitionOutcome {
  bool acquired = false;
  std::optional<Answer> answer;

  bool operator==(const AcquisitionOutcome&) const = default;
};

inline AcquisitionOutcome chat_acquired(std::span<const PredictabilityAnnotation> preds) {
  if (preds.size() != kEvaluatorsPerPerspective)
    throw ArityError("expected 3 predictability annotations, got " + std::to_string(preds.size()));
  for (auto answer : {Answer::Yes, Answer::No}) {
    const auto n = std::count_if(preds.begin(), preds.end(),
                                 [&](const auto& p) { return p.inferred == answer; });
    if (n >= 2) return {true, answer};
  }
  return {false, std::nullopt};
}

inline std::optional<int> first_acquisition_line(std::span<const PredictabilityAnnotation> preds) {
  std::map<int, int> votes;
  for (const auto& p : preds)
    for (int line : p.identified_lines) ++votes[line];
  const std::size_t need = preds.size() == 1 ? 1 : 2;
  for (const auto& [line, n] : votes)
    if (static_cast<std::size_t>(n) >= need) return line;
  return std::nullopt;
}

inline AcquisitionOutcome acquisition_outcome(const AnnotationBundle& b) {
  if (!b.predictability_complete())
    throw IncompleteAnnotation("need " + std::to_string(b.required()) +
                               " predictability annotations, have " +
                               std::to_string(b.predictability.size()));
  if (b.mode == AnnotationMode::Reduced) {
    const auto& p = b.predictability.front();
    return {p.inferred.has_value(), p.inferred};
  }
  return chat_acquired(b.predictability);
}

struct ChatFlags {
  bool acquired = false;
  std::optional<Answer> answer;
  bool non_abrupt = false;
  bool success = false;
  std::optional<int> first_acquisition_line;

  bool operator==(const ChatFlags&) const = default;
};

inline ChatFlags evaluate_chat(const AnnotationBundle& b, const Transcript& t) {
  ChatFlags f;
  const auto acq = acquisition_outcome(b);
  f.acquired = acq.acquired;
  f.answer = acq.answer;
  f.non_abrupt = chat_non_abrupt(b, t);
  f.success = f.acquired && f.non_abrupt;
  if (f.acquired) f.first_acquisition_line = first_acquisition_line(b.predictability);
  return f;
}

// ---------------------------------------------------------------------------
// Metrics

struct LabeledOutcome {
  std::string system;
  bool acquired = false;
  bool non_abrupt = false;
};

struct SystemMetrics {
  std::string system;
  std::size_t chats = 0;
  std::size_t acquired = 0;
  std::size_t non_abrupt = 0;
  std::size_t success = 0;

  double pct(std::size_t n) const { return chats ? 100.0 * static_cast<double>(n) / static_cast<double>(chats) : 0.0; }
  double acq() const { return pct(acquired); }
  double nabr() const { return pct(non_abrupt); }
  double suc() const { return pct(success); }

  bool operator==(const SystemMetrics&) const = default;
};

struct MetricsReport {
  std::vector<SystemMetrics> systems;  // in order of first appearance
  std::vector<std::string> notes;

  const SystemMetrics* find(std::string_view system) const {
    for (const auto& s : systems)
      if (s.system == system) return &s;
    return nullptr;
  }
};

inline MetricsReport compute_metrics(const std::vector<LabeledOutcome>& outcomes) {
  MetricsReport r;
  for (const auto& o : outcomes) {
    auto it = std::find_if(r.systems.begin(), r.systems.end(),
                           [&](const auto& s) { return s.system == o.system; });
    if (it == r.systems.end()) {
      r.systems.push_back(SystemMetrics{o.system});
      it = std::prev(r.systems.end());
    }
    ++it->chats;
    it->acquired += o.acquired;
    it->non_abrupt += o.non_abrupt;
    it->success += o.acquired && o.non_abrupt;
  }
  return r;
}

inline std::string format_metrics_table(const MetricsReport& r) {
  std::size_t w = 6;
  for (const auto& s : r.systems) w = std::max(w, s.system.size());
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(w)) << "system" << std::right << std::setw(7)
     << "chats" << std::setw(8) << "ACQ" << std::setw(8) << "N-ABR" << std::setw(8) << "SUC"
     << '\n';
  os << std::fixed << std::setprecision(1);
  for (const auto& s : r.systems)
    os << std::left << std::setw(static_cast<int>(w)) << s.system << std::right << std::setw(7)
       << s.chats << std::setw(7) << s.acq() << '%' << std::setw(7) << s.nabr() << '%'
       << std::setw(7) << s.suc() << '%' << '\n';
  for (const auto& n : r.notes) os << "note: " << n << '\n';
  return os.str();
}

inline void to_json(json& j, const SystemMetrics& s) {
  j = json{{"system", s.system},   {"chats", s.chats},   {"acquired", s.acquired},
           {"non_abrupt", s.non_abrupt}, {"success", s.success}, {"ACQ", s.acq()},
           {"N-ABR", s.nabr()},     {"SUC", s.suc()}};
}
inline void to_json(json& j, const MetricsReport& r) {
  j = json{{"systems", r.systems}, {"notes", r.notes}};
}

// ---------------------------------------------------------------------------
// Agreement and classifier statistics

struct KappaResult {
  double value = 0.0;
  double observed = 0.0;  // mean per-item agreement
  double expected = 0.0;  // chance agreement
  bool degenerate = false;  // expected agreement is 1 (a single category in use)
};

// Fleiss' kappa over an item x rater matrix of category labels.
inline KappaResult fleiss_kappa(const std::vector<std::vector<int>>& ratings) {
  if (ratings.empty()) throw ArityError("kappa needs at least one item");
  const std::size_t n = ratings.front().size();
  if (n < 2) throw ArityError("kappa needs at least two raters");
  std::map<int, double> totals;
  double p_sum = 0.0;
  for (const auto& item : ratings) {
    if (item.size() != n) throw ArityError("ragged rating matrix");
    std::map<int, double> counts;
    for (int c : item) counts[c] += 1.0;
    double sq = 0.0;
    for (const auto& [c, k] : counts) {
      sq += k * k;
      totals[c] += k;
    }
    p_sum += (sq - static_cast<double>(n)) / (static_cast<double>(n) * static_cast<double>(n - 1));
  }
  const double items = static_cast<double>(ratings.size());
  KappaResult r;
  r.observed = p_sum / items;
  for (const auto& [c, k] : totals) {
    const double p = k / (items * static_cast<double>(n));
    r.expected += p * p;
  }
  if (std::abs(1.0 - r.expected) < 1e-12) {
    r.degenerate = true;
    r.value = 1.0;
    return r;
  }
  r.value = (r.observed - r.expected) / (1.0 - r.expected);
  return r;
}

struct PrfResult {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  bool zero_division = false;
};

inline double f1_score(double precision, double recall) {
  if (precision < 0.0 || recall < 0.0) throw InvalidValue("precision and recall must be >= 0");
  const double d = precision + recall;
  return d == 0.0 ? 0.0 : 2.0 * precision * recall / d;
}

inline PrfResult precision_recall_f1(long long tp, long long fp, long long fn) {
  if (tp < 0 || fp < 0 || fn < 0) throw InvalidCounts("counts must be non-negative");
  PrfResult r;
  if (tp + fp == 0) r.zero_division = true;
  else r.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
  if (tp + fn == 0) r.zero_division = true;
  else r.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
  if (r.precision + r.recall == 0.0) r.zero_division = true;
  r.f1 = f1_score(r.precision, r.recall);
  return r;
}

inline double prediction_agreement(std::span<const Prediction> model,
                                   std::span<const Prediction> human) {
  if (model.empty() || human.empty()) throw ArityError("agreement needs non-empty lists");
  if (model.size() != human.size())
    throw ArityError("verdict lists differ in length: " + std::to_string(model.size()) + " vs " +
                     std::to_string(human.size()));
  std::size_t same = 0;
  for (std::size_t i = 0; i < model.size(); ++i) same += model[i] == human[i];
  return static_cast<double>(same) / static_cast<double>(model.size());
}

// ---------------------------------------------------------------------------
// JSON

inline void to_json(json& j, const AbruptnessAnnotation& a) {
  json scores = json::object();
  for (const auto& [line, s] : a.scores) scores[std::to_string(line)] = s;
  j = json{{"evaluator", a.evaluator}, {"scores", scores}};
}
inline void from_json(const json& j, AbruptnessAnnotation& a) {
  a.evaluator = j.at("evaluator").get<std::string>();
  a.scores.clear();
  for (const auto& [k, v] : j.at("scores").items()) {
    std::size_t used = 0;
    int line = 0;
    try {
      line = std::stoi(k, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != k.size()) throw SchemaViolation("abruptness score key '" + k + "' is not a line");
    a.scores[line] = v.get<int>();
  }
  validate(a);
}

inline void to_json(json& j, const PredictabilityAnnotation& a) {
  j = json{{"evaluator", a.evaluator},
           {"score", a.score},
           {"inferred", a.inferred ? json(to_string(*a.inferred)) : json(nullptr)},
           {"identified_lines", a.identified_lines}};
}
inline void from_json(const json& j, PredictabilityAnnotation& a) {
  a.evaluator = j.at("evaluator").get<std::string>();
  a.score = j.at("score").get<int>();
  a.inferred.reset();
  if (j.contains("inferred") && !j.at("inferred").is_null()) {
    const auto s = j.at("inferred").get<std::string>();
    if (to_lower(s) != "none") a.inferred = parse_answer(s);
  }
  a.identified_lines = j.value("identified_lines", std::set<int>{});
  validate(a);
}

inline void to_json(json& j, const AnnotationBundle& b) {
  j = json{{"mode", to_string(b.mode)},
           {"abruptness", b.abruptness},
           {"predictability", b.predictability}};
  if (!b.model_non_abrupt.empty()) {
    json m = json::object();
    for (const auto& [line, v] : b.model_non_abrupt) m[std::to_string(line)] = v;
    j["model_non_abrupt"] = m;
  }
}
inline void from_json(const json& j, AnnotationBundle& b) {
  b.mode = parse_annotation_mode(j.value("mode", "full"));
  b.abruptness = j.value("abruptness", std::vector<AbruptnessAnnotation>{});
  b.predictability = j.value("predictability", std::vector<PredictabilityAnnotation>{});
  b.model_non_abrupt.clear();
  if (j.contains("model_non_abrupt"))
    for (const auto& [k, v] : j.at("model_non_abrupt").items())
      b.model_non_abrupt[std::stoi(k)] = v.get<bool>();
}

inline void to_json(json& j, const ChatFlags& f) {
  j = json{{"acquired", f.acquired},
           {"answer", f.answer ? json(to_string(*f.answer)) : json(nullptr)},
           {"non_abrupt", f.non_abrupt},
           {"success", f.success},
           {"first_acquisition_line",
            f.first_acquisition_line ? json(*f.first_acquisition_line) : json(nullptr)}};
}

inline void to_json(json& j, const KappaResult& k) {
  j = json{{"kappa", k.value}, {"observed", k.observed}, {"expected", k.expected},
           {"degenerate", k.degenerate}};
}

inline void to_json(json& j, const PrfResult& r) {
  j = json{{"precision", r.precision}, {"recall", r.recall}, {"f1", r.f1},
           {"zero_division", r.zero_division}};
}

}  // namespace pivot
