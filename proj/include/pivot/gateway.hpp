#pragma once

// Backend abstraction for every generative and scoring model call. Backends
// are registered under a profile name; sessions pass a CallCounter so the
// per-session request budget is enforced at the gateway.

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <string_view>
#include <vector>

#include "pivot/core.hpp"

namespace pivot {

enum class BackendKind { RemoteChatModel, ScriptedGenerator, ScriptedScorer };

inline std::string_view to_string(BackendKind k) {
  switch (k) {
    case BackendKind::RemoteChatModel: return "remote";
    case BackendKind::ScriptedGenerator: return "scripted_generator";
    case BackendKind::ScriptedScorer: return "scripted_scorer";
  }
  return "remote";
}

inline BackendKind parse_backend_kind(std::string_view s) {
  return detail::parse_enum(s,
                            std::array{BackendKind::RemoteChatModel,
                                       BackendKind::ScriptedGenerator,
                                       BackendKind::ScriptedScorer},
                            "backend kind");
}

struct BackendProfile {
  std::string name;
  BackendKind kind = BackendKind::ScriptedGenerator;
  std::string endpoint;        // remote only
  std::string model;           // remote only
  std::string api_key_env;     // remote only; the variable name, never the key
  std::string script_source;   // scripted only; replay file path (may be empty for in-memory)
  std::optional<std::size_t> request_budget;  // max calls per session, unlimited when empty
  json options = json::object();              // pass-through decoding options
  json scoring = json::object();              // remote scoring mode, see remote.hpp
};

struct CallOptions {
  std::uint64_t seed = 0;
};

struct GenerationResult {
  std::string text;
  std::string backend;
  std::chrono::microseconds latency{0};
};

class Backend {
 public:
  virtual ~Backend() = default;
  virtual bool can_generate() const = 0;
  virtual bool can_score() const = 0;
  virtual std::string generate(std::string_view prompt, const CallOptions& opts) = 0;
  virtual ScoreDistribution score(std::string_view prompt, const CallOptions& opts) = 0;
};

// ---------------------------------------------------------------------------
// Scripted replay backend

// One replay entry. Entries are tried in order; the first unconsumed entry
// whose `match` is a substring of the prompt answers the call. Entries with
// `repeat` stay active after use.
struct ScriptEntry {
  std::string match;
  std::optional<std::string> response;
  std::optional<ScoreDistribution> scores;
  std::optional<std::string> error;  // "transport" raises TransportError
  bool repeat = false;
};

inline ScoreDistribution parse_script_scores(const json& j) {
  if (j.is_number()) {
    // Shorthand: a bare number is p3 with the remainder on rating 2.
    const double p3 = j.get<double>();
    return ScoreDistribution::make(0.0, 1.0 - p3, p3);
  }
  if (j.is_object() && j.size() == 1 && j.contains("p3")) {
    const double p3 = j.at("p3").get<double>();
    return ScoreDistribution::make(0.0, 1.0 - p3, p3);
  }
  try {
    return j.get<ScoreDistribution>();
  } catch (const InvalidValue& e) {
    throw ScriptError(std::string("script scores rejected: ") + e.what());
  }
}

inline ScriptEntry parse_script_entry(const json& j) {
  ScriptEntry e;
  if (j.is_string()) {
    e.response = j.get<std::string>();
    return e;
  }
  e.match = j.value("match", "");
  e.repeat = j.value("repeat", false);
  if (j.contains("response")) e.response = j.at("response").get<std::string>();
  if (j.contains("scores")) e.scores = parse_script_scores(j.at("scores"));
  if (j.contains("error")) e.error = j.at("error").get<std::string>();
  if (!e.response && !e.scores && !e.error)
    throw ScriptError("script entry needs one of response, scores, error: " + j.dump());
  return e;
}

inline std::vector<ScriptEntry> load_script_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ScriptError("cannot open replay file " + path);
  std::vector<ScriptEntry> entries;
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      entries.push_back(parse_script_entry(json::parse(line)));
    } catch (const json::exception& e) {
      throw ScriptError(path + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return entries;
}

class ScriptedBackend final : public Backend {
 public:
  ScriptedBackend(BackendKind kind, std::vector<ScriptEntry> entries)
      : kind_(kind), entries_(std::move(entries)), used_(entries_.size(), false) {
    for (const auto& e : entries_) {
      if (kind_ == BackendKind::ScriptedGenerator && !e.response && !e.error)
        throw ScriptError("generator script entry without response");
      if (kind_ == BackendKind::ScriptedScorer && !e.scores && !e.error)
        throw ScriptError("scorer script entry without scores");
    }
  }

  static std::shared_ptr<ScriptedBackend> responses(std::vector<std::string> texts) {
    std::vector<ScriptEntry> entries;
    for (auto& t : texts) entries.push_back(ScriptEntry{"", std::move(t), {}, {}, false});
    return std::make_shared<ScriptedBackend>(BackendKind::ScriptedGenerator, std::move(entries));
  }

  static std::shared_ptr<ScriptedBackend> distributions(std::vector<ScoreDistribution> dists) {
    std::vector<ScriptEntry> entries;
    for (auto& d : dists) entries.push_back(ScriptEntry{"", {}, d, {}, false});
    return std::make_shared<ScriptedBackend>(BackendKind::ScriptedScorer, std::move(entries));
  }

  bool can_generate() const override { return kind_ == BackendKind::ScriptedGenerator; }
  bool can_score() const override { return kind_ == BackendKind::ScriptedScorer; }

  std::string generate(std::string_view prompt, const CallOptions&) override {
    return *take(prompt).response;
  }

  ScoreDistribution score(std::string_view prompt, const CallOptions&) override {
    return *take(prompt).scores;
  }

  std::size_t remaining() const {
    std::lock_guard lock(mu_);
    return static_cast<std::size_t>(std::count(used_.begin(), used_.end(), false));
  }

 private:
  const ScriptEntry& take(std::string_view prompt) {
    std::lock_guard lock(mu_);
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      if (used_[i]) continue;
      const auto& e = entries_[i];
      if (!e.match.empty() && prompt.find(e.match) == std::string_view::npos) continue;
      if (!e.repeat) used_[i] = true;
      if (e.error) throw TransportError("scripted failure: " + *e.error);
      return e;
    }
    throw ScriptUnderrun("no scripted entry left for this request");
  }

  BackendKind kind_;
  std::vector<ScriptEntry> entries_;
  std::vector<bool> used_;
  mutable std::mutex mu_;
};

// Programmatic backend for tests and embedding.
class FunctionBackend final : public Backend {
 public:
  using GenerateFn = std::function<std::string(std::string_view)>;
  using ScoreFn = std::function<ScoreDistribution(std::string_view)>;

  FunctionBackend(GenerateFn gen, ScoreFn score) : gen_(std::move(gen)), score_(std::move(score)) {}

  bool can_generate() const override { return static_cast<bool>(gen_); }
  bool can_score() const override { return static_cast<bool>(score_); }
  std::string generate(std::string_view prompt, const CallOptions&) override { return gen_(prompt); }
  ScoreDistribution score(std::string_view prompt, const CallOptions&) override {
    return score_(prompt);
  }

 private:
  GenerateFn gen_;
  ScoreFn score_;
};

// ---------------------------------------------------------------------------
// Call accounting

struct CallCounts {
  std::size_t generate = 0;
  std::size_t score = 0;
  std::size_t total() const { return generate + score; }
  bool operator==(const CallCounts&) const = default;
};

struct CallCounter {
  std::map<std::string, CallCounts> per_profile;

  CallCounts of(const std::string& profile) const {
    auto it = per_profile.find(profile);
    return it == per_profile.end() ? CallCounts{} : it->second;
  }

  CallCounts total() const {
    CallCounts t;
    for (const auto& [_, c] : per_profile) {
      t.generate += c.generate;
      t.score += c.score;
    }
    return t;
  }

  bool operator==(const CallCounter&) const = default;
};

inline void to_json(json& j, const CallCounter& c) {
  j = json::object();
  for (const auto& [name, counts] : c.per_profile)
    j[name] = json{{"generate", counts.generate}, {"score", counts.score}};
}
inline void from_json(const json& j, CallCounter& c) {
  c.per_profile.clear();
  for (const auto& [name, v] : j.items())
    c.per_profile[name] = CallCounts{v.value("generate", std::size_t{0}),
                                     v.value("score", std::size_t{0})};
}

// ---------------------------------------------------------------------------
// Gateway

class Gateway {
 public:
  explicit Gateway(std::size_t parallelism = 4)
      : slots_(std::make_unique<std::counting_semaphore<1024>>(
            static_cast<std::ptrdiff_t>(std::clamp<std::size_t>(parallelism, 1, 1024)))) {}

  void add(BackendProfile profile, std::shared_ptr<Backend> backend) {
    if (profile.name.empty()) throw ConfigError("backend profile needs a name");
    if (!backend) throw ConfigError("backend profile '" + profile.name + "' has no backend");
    std::lock_guard lock(mu_);
    auto name = profile.name;
    entries_[name] = Entry{std::move(profile), std::move(backend)};
  }

  bool has(const std::string& name) const {
    std::lock_guard lock(mu_);
    return entries_.count(name) > 0;
  }

  const BackendProfile& profile(const std::string& name) const { return entry(name).profile; }
  std::shared_ptr<Backend> backend(const std::string& name) const { return entry(name).backend; }

  std::vector<std::string> names() const {
    std::lock_guard lock(mu_);
    std::vector<std::string> out;
    for (const auto& [n, _] : entries_) out.push_back(n);
    return out;
  }

  // Returns the backend output verbatim.
  GenerationResult generate(const std::string& name, std::string_view prompt,
                            CallCounter& counter, const CallOptions& opts = {}) {
    const Entry& e = entry(name);
    if (!e.backend->can_generate())
      throw ConfigError("profile '" + name + "' cannot generate text");
    charge(e, counter, /*scoring=*/false);
    const auto start = std::chrono::steady_clock::now();
    std::string text;
    {
      SlotGuard slot(*slots_);
      text = e.backend->generate(prompt, opts);
    }
    return {std::move(text), name,
            std::chrono::duration_cast<std::chrono::microseconds>(
                std::chrono::steady_clock::now() - start)};
  }

  ScoreDistribution score_abruptness(const std::string& name, std::string_view prompt,
                                     CallCounter& counter, const CallOptions& opts = {}) {
    const Entry& e = entry(name);
    if (!e.backend->can_score()) throw ConfigError("profile '" + name + "' cannot score");
    charge(e, counter, /*scoring=*/true);
    ScoreDistribution d;
    {
      SlotGuard slot(*slots_);
      d = e.backend->score(prompt, opts);
    }
    if (!d.valid()) throw TransportError("backend '" + name + "' returned an invalid distribution");
    return d;
  }

 private:
  struct Entry {
    BackendProfile profile;
    std::shared_ptr<Backend> backend;
  };

  struct SlotGuard {
    explicit SlotGuard(std::counting_semaphore<1024>& s) : sem(s) { sem.acquire(); }
    ~SlotGuard() { sem.release(); }
    std::counting_semaphore<1024>& sem;
  };

  const Entry& entry(const std::string& name) const {
    std::lock_guard lock(mu_);
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ConfigError("unknown backend profile '" + name + "'");
    return it->second;
  }

  void charge(const Entry& e, CallCounter& counter, bool scoring) {
    std::lock_guard lock(count_mu_);
    auto& c = counter.per_profile[e.profile.name];
    if (e.profile.request_budget && c.total() >= *e.profile.request_budget)
      throw BudgetExhausted("request budget of profile '" + e.profile.name + "' exhausted (" +
                            std::to_string(*e.profile.request_budget) + " calls)");
    (scoring ? c.score : c.generate) += 1;
  }

  mutable std::mutex mu_;
  std::mutex count_mu_;
  std::map<std::string, Entry> entries_;
  std::unique_ptr<std::counting_semaphore<1024>> slots_;
};

// ---------------------------------------------------------------------------
// Reply parsing

// Extracts the Q1 verdict of a Predict-prompt reply ("Q1: 3/Yes").
inline Prediction parse_prediction(std::string_view raw) {
  for (const auto& line : split_lines(raw)) {
    const std::string t = trim(line);
    if (t.size() < 3 || to_lower(t.substr(0, 3)) != "q1:") continue;
    std::string rest = to_lower(t.substr(3));
    if (auto slash = rest.rfind('/'); slash != std::string::npos) rest = rest.substr(slash + 1);
    std::string token;
    for (char c : rest)
      if (std::isalpha(static_cast<unsigned char>(c))) token += c;
    if (token == "yes") return Prediction::Yes;
    if (token == "no") return Prediction::No;
    if (token == "cannotguess" || token == "unpredictable") return Prediction::CannotGuess;
    throw UnparsableVerdict("unrecognized Q1 verdict in '" + t + "'");
  }
  throw UnparsableVerdict("no 'Q1:' line in prediction reply");
}

}  // namespace pivot
