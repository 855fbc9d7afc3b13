#pragma once

// Persona and question construction, pool generation, corpus statistics and
// fine-tune data export.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "pivot/core.hpp"
#include "pivot/evaluation.hpp"
#include "pivot/judge.hpp"
#include "pivot/prompts.hpp"
#include "pivot/record.hpp"

namespace pivot {

// ---------------------------------------------------------------------------
// Deterministic sampling

// Portable seeded RNG: mt19937_64 output is specified by the standard, the
// standard distributions are not, so index draws use rejection sampling.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::size_t index(std::size_t n) {
    if (n == 0) throw InvalidValue("cannot draw from an empty range");
    const std::uint64_t bound = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t x;
    do x = gen_();
    while (x >= limit);
    return static_cast<std::size_t>(x % bound);
  }

  bool chance(std::size_t num, std::size_t den) { return index(den) < num; }

  double unit() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[index(i)]);
  }

  std::uint64_t next() { return gen_(); }

 private:
  std::mt19937_64 gen_;
};

// ---------------------------------------------------------------------------
// Sentence transformation

class SentenceTransformer {
 public:
  virtual ~SentenceTransformer() = default;
  virtual std::string negate(std::string_view affirmative) const = 0;
  virtual std::string affirm(std::string_view negated) const = 0;
  virtual std::string to_question(std::string_view affirmative) const = 0;
};

namespace detail {

struct Clause {
  std::vector<std::string> words;
  std::string tail;  // trailing punctuation
};

inline Clause split_clause(std::string_view text) {
  Clause c;
  std::string body = trim(text);
  while (!body.empty() && (body.back() == '.' || body.back() == '!' || body.back() == '?')) {
    c.tail.insert(c.tail.begin(), body.back());
    body.pop_back();
  }
  std::istringstream is(body);
  for (std::string w; is >> w;) c.words.push_back(w);
  return c;
}

inline std::string join(const std::vector<std::string>& words, std::size_t from = 0) {
  std::string out;
  for (std::size_t i = from; i < words.size(); ++i) {
    if (!out.empty()) out += ' ';
    out += words[i];
  }
  return out;
}

inline bool is_word(std::string_view w) {
  return !w.empty() && std::all_of(w.begin(), w.end(), [](unsigned char c) { return std::isalpha(c); });
}

inline bool is_modal(std::string_view w) {
  static const std::set<std::string, std::less<>> m{"can", "could", "will", "would", "should",
                                                     "must", "might", "may"};
  return m.count(w) > 0;
}

inline bool is_participle(std::string_view w) {
  static const std::set<std::string, std::less<>> irregular{
      "been", "gone", "seen", "done", "had", "made", "taken", "known", "got", "gotten",
      "never", "always", "ever", "lived", "worked", "played", "visited", "traveled", "travelled"};
  const std::string lw = to_lower(w);
  if (irregular.count(lw)) return true;
  return lw.size() > 3 && lw.compare(lw.size() - 2, 2, "ed") == 0;
}

// Present-tense verbs that happen to end in -ed.
inline bool ed_present_verb(std::string_view w) {
  static const std::set<std::string, std::less<>> v{"need", "feed", "breed", "bleed", "speed",
                                                     "proceed", "succeed", "exceed", "seed",
                                                     "heed", "embed", "shed", "wed", "shred"};
  return v.count(w) > 0;
}

inline bool is_function_word(std::string_view w) {
  static const std::set<std::string, std::less<>> f{
      "a",  "an",  "the", "to",   "and", "or", "but", "of",   "in",  "on",  "at",
      "it", "is",  "was", "were", "are", "am", "be",  "not",  "no",  "too", "also",
      "so", "if",  "as",  "for",  "with", "by", "from", "this", "that", "there"};
  return f.count(to_lower(w)) > 0;
}

// Verb usable after "don't"/"Do you": lowercase, alphabetic, not obviously past tense.
inline bool plain_verb(std::string_view w) {
  if (!is_word(w) || w != to_lower(w) || is_function_word(w)) return false;
  if (w.size() > 2 && w.substr(w.size() - 2) == "ed" && !ed_present_verb(w)) return false;
  static const std::set<std::string, std::less<>> past{"went", "was", "had", "did", "saw", "got",
                                                        "made", "took", "came", "ate", "grew",
                                                        "knew", "began", "wrote", "drove"};
  return past.count(w) == 0;
}

inline std::string capitalize(std::string s) {
  if (!s.empty()) s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
  return s;
}

inline std::string swap_person(const std::vector<std::string>& words, std::size_t from) {
  static const std::map<std::string, std::string> swaps{
      {"my", "your"}, {"me", "you"},   {"i", "you"},   {"mine", "yours"},
      {"myself", "yourself"}, {"i'm", "you're"}, {"i've", "you've"}, {"i'll", "you'll"}};
  std::vector<std::string> out;
  for (std::size_t i = from; i < words.size(); ++i) {
    std::string w = words[i];
    std::string core = w, punct;
    while (!core.empty() && std::ispunct(static_cast<unsigned char>(core.back())) &&
           core.back() != '\'') {
      punct.insert(punct.begin(), core.back());
      core.pop_back();
    }
    if (auto it = swaps.find(to_lower(core)); it != swaps.end()) w = it->second + punct;
    out.push_back(w);
  }
  return join(out);
}

}  // namespace detail

// Rule-based English transformer for first-person persona sentences.
class RuleTransformer final : public SentenceTransformer {
 public:
  std::string negate(std::string_view text) const override {
    using namespace detail;
    auto c = split_clause(text);
    auto& w = c.words;
    auto fail = [&]() -> std::string {
      throw NegationUnsupported("no negation rule for '" + std::string(text) + "'");
    };
    if (w.size() < 2) return fail();
    const std::string first = w[0], second = to_lower(w[1]);
    if (first == "I") {
      if (second == "am" || second == "was") return finish(w, 2, {w[1], "not"}, c.tail);
      if (second == "have" || second == "had") {
        if (w.size() > 2 && is_participle(w[2]))
          return finish(w, 2, {second == "have" ? "have" : "had", "not"}, c.tail);
        return finish(w, 2, {second == "have" ? "don't" : "didn't", "have"}, c.tail);
      }
      if (is_modal(second)) return finish(w, 2, {second == "can" ? "cannot" : second + " not"}, c.tail);
      if (second == "do") return finish(w, 2, {"don't", "do"}, c.tail);
      if (plain_verb(second)) return finish(w, 1, {"don't"}, c.tail);
      return fail();
    }
    if (first == "I'm") return finish(w, 1, {"not"}, c.tail);
    if (first == "I've") return finish(w, 1, {"haven't"}, c.tail, "I've", "I");
    if (first == "My") {
      for (std::size_t i = 2; i < w.size(); ++i)
        if (w[i] == "is" || w[i] == "are" || w[i] == "was" || w[i] == "were") {
          if (i + 1 < w.size() && w[i + 1] == "not") return fail();
          std::vector<std::string> out(w.begin(), w.begin() + static_cast<long>(i) + 1);
          out.push_back("not");
          out.insert(out.end(), w.begin() + static_cast<long>(i) + 1, w.end());
          return join(out) + c.tail;
        }
    }
    return fail();
  }

  std::string affirm(std::string_view text) const override {
    using namespace detail;
    auto c = split_clause(text);
    std::vector<std::string> w = c.words;
    auto drop = [&](std::size_t i) { w.erase(w.begin() + static_cast<long>(i)); };
    for (std::size_t i = 0; i < w.size(); ++i) {
      const std::string lw = to_lower(w[i]);
      if (lw == "not" && i > 0) {
        drop(i);
        return join(w) + c.tail;
      }
      if (lw == "don't") {
        drop(i);
        return join(w) + c.tail;
      }
      if (lw == "didn't" && i + 1 < w.size() && w[i + 1] == "have") {
        w[i + 1] = "had";
        drop(i);
        return join(w) + c.tail;
      }
      if (lw == "cannot" || lw == "can't") {
        w[i] = "can";
        return join(w) + c.tail;
      }
      if (lw == "haven't" && i == 1 && w[0] == "I") {
        w[0] = "I've";
        drop(i);
        return join(w) + c.tail;
      }
    }
    throw ConversionUnsupported("cannot recover the affirmative form of '" + std::string(text) + "'");
  }

  std::string to_question(std::string_view text) const override {
    using namespace detail;
    auto c = split_clause(text);
    const auto& w = c.words;
    auto fail = [&]() -> std::string {
      throw ConversionUnsupported("no question rule for '" + std::string(text) + "'");
    };
    if (w.size() < 2) return fail();
    auto q = [&](std::string lead, std::size_t from) {
      std::string rest = swap_person(w, from);
      return capitalize(lead) + (rest.empty() ? "" : " " + rest) + "?";
    };
    const std::string first = w[0], second = to_lower(w[1]);
    if (first == "I") {
      if (second == "am") return q("are you", 2);
      if (second == "was") return q("were you", 2);
      if (is_modal(second)) return q(second + " you", 2);
      if (second == "have" || second == "had") {
        if (w.size() > 2 && is_participle(w[2])) return q(second + " you", 2);
        return q(second == "have" ? "do you have" : "did you have", 2);
      }
      if (second == "do") return q("do you do", 2);
      if (plain_verb(second)) return q("do you", 1);
      return fail();
    }
    if (first == "I'm") return q("are you", 1);
    if (first == "I've") return q("have you", 1);
    if (first == "My") {
      for (std::size_t i = 2; i < w.size(); ++i)
        if (w[i] == "is" || w[i] == "are" || w[i] == "was" || w[i] == "were") {
          std::vector<std::string> subject(w.begin() + 1, w.begin() + static_cast<long>(i));
          std::string lead = w[i] + " your " + swap_person(subject, 0);
          std::string rest = swap_person(w, i + 1);
          return capitalize(lead) + (rest.empty() ? "" : " " + rest) + "?";
        }
    }
    return fail();
  }

 private:
  // Rebuilds "<subject> <inserted...> <words from `from`>".
  static std::string finish(const std::vector<std::string>& w, std::size_t from,
                            std::vector<std::string> inserted, const std::string& tail,
                            std::string_view subject_from = "", std::string_view subject_to = "") {
    std::vector<std::string> out;
    std::string subject = w[0];
    if (!subject_from.empty() && subject == subject_from) subject = std::string(subject_to);
    out.push_back(subject);
    for (auto& s : inserted) out.push_back(std::move(s));
    out.insert(out.end(), w.begin() + static_cast<long>(from), w.end());
    return detail::join(out) + tail;
  }
};

inline const SentenceTransformer& default_transformer() {
  static const RuleTransformer rules;
  return rules;
}

inline PersonaSentence negate_sentence(const PersonaSentence& s,
                                       const SentenceTransformer& tx = default_transformer()) {
  if (s.polarity != Polarity::Affirmative)
    throw PreconditionError("only affirmative sentences can be negated");
  return PersonaSentence{tx.negate(s.text), Polarity::Negated, SentenceOrigin::AutoNegated};
}

// Second-person yes-no question built from the sentence's affirmative base,
// so a sentence and its negation map to the same question.
inline std::string to_yes_no_question(const PersonaSentence& s,
                                      const SentenceTransformer& tx = default_transformer()) {
  const std::string base = s.polarity == Polarity::Affirmative ? s.text : tx.affirm(s.text);
  return tx.to_question(base);
}

// ---------------------------------------------------------------------------
// Persona sets and task setups

inline std::vector<std::string> read_lines_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);)
    if (auto t = trim(line); !t.empty() && t.front() != '#') out.push_back(t);
  return out;
}

inline PersonaSet build_persona_set(const std::vector<std::string>& pool, std::size_t n,
                                    std::uint64_t seed,
                                    const SentenceTransformer& tx = default_transformer()) {
  if (n < 2) throw PreconditionError("persona sets need at least 2 sentences");
  if (pool.size() < n)
    throw InsufficientPool("pool holds " + std::to_string(pool.size()) + " sentences, need " +
                           std::to_string(n));
  Rng rng(seed);
  const std::size_t k = n % 2 == 0 ? n / 2 : n / 2 + rng.index(2);
  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order);

  PersonaSet out;
  std::size_t neg_left = k, aff_left = n - k;
  for (std::size_t idx : order) {
    if (neg_left + aff_left == 0) break;
    const PersonaSentence given{pool[idx], Polarity::Affirmative, SentenceOrigin::Given};
    const bool want_negated = aff_left == 0 || (neg_left > 0 && rng.chance(neg_left, neg_left + aff_left));
    if (want_negated) {
      try {
        out.sentences.push_back(negate_sentence(given, tx));
        --neg_left;
        continue;
      } catch (const NegationUnsupported&) {
        if (aff_left == 0) continue;
      }
    }
    out.sentences.push_back(given);
    --aff_left;
  }
  if (neg_left + aff_left > 0)
    throw InsufficientPool("only " + std::to_string(n - neg_left - aff_left) +
                           " usable sentences for a persona set of " + std::to_string(n) +
                           " with " + std::to_string(k) + " negated");
  return out;
}

inline TaskSetup make_task_setup(std::string id, Topic topic, PersonaSet persona,
                                 std::uint64_t seed,
                                 const SentenceTransformer& tx = default_transformer()) {
  if (persona.sentences.empty()) throw PreconditionError("persona set is empty");
  std::vector<std::size_t> order(persona.sentences.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(order);
  for (std::size_t idx : order) {
    try {
      Question q{to_yes_no_question(persona.sentences[idx], tx), idx, Answer::Yes};
      q.gold_answer = gold_answer(persona, q);
      return TaskSetup{std::move(id), std::move(topic), std::move(persona), {q}};
    } catch (const ConversionUnsupported&) {
    }
  }
  throw AllConversionsFailed("no persona sentence converts to a yes-no question");
}

// ---------------------------------------------------------------------------
// Pool generation

inline std::vector<std::string> parse_list_reply(std::string_view raw) {
  std::vector<std::string> out;
  for (const auto& line : split_lines(raw)) {
    std::string t = trim(line);
    if (!t.empty() && (t.front() == '-' || t.front() == '*' || t.front() == '+'))
      t = trim(t.substr(1));
    std::size_t digits = 0;
    while (digits < t.size() && std::isdigit(static_cast<unsigned char>(t[digits]))) ++digits;
    if (digits > 0 && digits < t.size() && (t[digits] == '.' || t[digits] == ')'))
      t = trim(t.substr(digits + 1));
    if (!t.empty()) out.push_back(t);
  }
  return out;
}

inline std::string format_list(const std::vector<std::string>& items) {
  std::string out;
  for (const auto& i : items) {
    if (!out.empty()) out += '\n';
    out += "- " + i;
  }
  return out;
}

enum class PoolKind { Topics, Personas };

// Augments a seed list, then removes near-duplicates.
inline std::vector<std::string> generate_pool(const ModelContext& ctx, const std::string& generator,
                                              PoolKind kind, const std::vector<std::string>& seeds) {
  if (seeds.empty()) throw PreconditionError("pool generation needs a seed list");
  const bool topics = kind == PoolKind::Topics;
  const auto gen = ctx.gw().generate(
      generator, ctx.reg().render(topics ? PromptId::GenTopic : PromptId::GenPersona,
                                  {{"LIST", format_list(seeds)}}),
      ctx.calls(), ctx.options);
  auto merged = seeds;
  for (auto& item : parse_list_reply(gen.text)) merged.push_back(std::move(item));
  const auto dedup = ctx.gw().generate(
      generator, ctx.reg().render(topics ? PromptId::RmTopic : PromptId::RmPersona,
                                  {{"LIST", format_list(merged)}}),
      ctx.calls(), ctx.options);
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (auto& item : parse_list_reply(dedup.text))
    if (seen.insert(to_lower(item)).second) out.push_back(std::move(item));
  return out;
}

// ---------------------------------------------------------------------------
// Statistics

struct SystemStats {
  std::size_t chats = 0;
  std::size_t successes = 0;
  std::size_t user_utterances = 0;
  std::size_t system_utterances = 0;

  bool operator==(const SystemStats&) const = default;
};

struct CorpusStats {
  std::size_t chats = 0;
  std::size_t failed = 0;
  std::size_t successes = 0;
  std::size_t user_utterances = 0;
  std::size_t system_utterances = 0;  // excludes the fixed opener
  std::map<std::string, SystemStats> per_system;

  bool operator==(const CorpusStats&) const = default;
};

inline CorpusStats compute_stats(const std::vector<ChatRecord>& records) {
  CorpusStats s;
  for (const auto& r : records) {
    if (r.failed()) {
      ++s.failed;
      continue;
    }
    auto& sys = s.per_system[r.system];
    const auto users = static_cast<std::size_t>(r.transcript.user_turns());
    const auto systems = static_cast<std::size_t>(r.transcript.system_turns());
    const bool success = [&] {
      const auto f = record_flags(r);
      return f && f->success;
    }();
    ++s.chats, ++sys.chats;
    s.successes += success, sys.successes += success;
    s.user_utterances += users, sys.user_utterances += users;
    s.system_utterances += systems, sys.system_utterances += systems;
  }
  return s;
}

inline void to_json(json& j, const SystemStats& s) {
  j = json{{"chats", s.chats},
           {"successes", s.successes},
           {"user_utterances", s.user_utterances},
           {"system_utterances", s.system_utterances}};
}
inline void to_json(json& j, const CorpusStats& s) {
  j = json{{"chats", s.chats},
           {"failed", s.failed},
           {"successes", s.successes},
           {"user_utterances", s.user_utterances},
           {"system_utterances", s.system_utterances},
           {"per_system", s.per_system}};
}

// ---------------------------------------------------------------------------
// Fine-tune export

enum class FinetuneTarget { AbruptJudge, PrototypeJudge };
enum class Split { Train, Eval };

inline std::string_view to_string(FinetuneTarget t) {
  return t == FinetuneTarget::AbruptJudge ? "abrupt" : "prototype";
}
inline FinetuneTarget parse_finetune_target(std::string_view s) {
  return detail::parse_enum(s, std::array{FinetuneTarget::AbruptJudge, FinetuneTarget::PrototypeJudge},
                            "fine-tune target");
}
inline std::string_view to_string(Split s) { return s == Split::Train ? "train" : "eval"; }
inline Split parse_split(std::string_view s) {
  return detail::parse_enum(s, std::array{Split::Train, Split::Eval}, "split");
}

struct FinetuneExample {
  std::string input;
  std::string output;
  std::string record_id;
  int line = 0;
  Split split = Split::Train;

  bool operator==(const FinetuneExample&) const = default;
};

struct FinetuneExport {
  std::vector<FinetuneExample> examples;
  std::size_t skipped = 0;  // records without usable annotations
  std::size_t train_chats = 0;
  std::size_t eval_chats = 0;

  std::size_t count(Split s) const {
    return static_cast<std::size_t>(std::count_if(examples.begin(), examples.end(),
                                                  [&](const auto& e) { return e.split == s; }));
  }
};

using SplitAssignment = std::map<std::string, Split>;  // record id -> split

// Majority rating among evaluators; a three-way disagreement takes the median.
inline int majority_label(std::span<const int> ratings) {
  if (ratings.empty()) throw ArityError("no ratings");
  std::map<int, int> votes;
  for (int r : ratings) ++votes[r];
  int best = 0, best_votes = 0;
  for (const auto& [r, v] : votes)
    if (v > best_votes) best = r, best_votes = v;
  if (best_votes * 2 > static_cast<int>(ratings.size()) || ratings.size() == 1) return best;
  std::vector<int> sorted(ratings.begin(), ratings.end());
  std::sort(sorted.begin(), sorted.end());
  return sorted[sorted.size() / 2];
}

inline std::vector<int> line_ratings(const AnnotationBundle& b, int line) {
  std::vector<int> out;
  for (const auto& a : b.abruptness) {
    auto it = a.scores.find(line);
    if (it == a.scores.end())
      throw IncompleteAnnotation("no score for line " + std::to_string(line));
    out.push_back(it->second);
  }
  return out;
}

// Throws SplitConstraintViolation when a topic or question lands in both splits.
inline void check_split(const std::vector<ChatRecord>& records, const SplitAssignment& assignment) {
  std::map<std::string, Split> topics, questions;
  for (const auto& r : records) {
    auto it = assignment.find(r.id);
    if (it == assignment.end()) continue;
    const auto check = [&](std::map<std::string, Split>& seen, const std::string& key,
                           std::string_view what) {
      auto [pos, fresh] = seen.emplace(key, it->second);
      if (!fresh && pos->second != it->second)
        throw SplitConstraintViolation(std::string(what) + " '" + key +
                                       "' appears in both train and eval");
    };
    check(topics, r.setup().topic.text(), "topic");
    for (const auto& q : r.setup().questions) check(questions, q.text, "question");
  }
}

// Groups records sharing a topic or question and assigns whole groups to the
// evaluation split until it holds roughly `eval_fraction` of the chats.
inline SplitAssignment auto_split(const std::vector<ChatRecord>& records, double eval_fraction,
                                  std::uint64_t seed) {
  if (!(eval_fraction >= 0.0 && eval_fraction <= 1.0))
    throw InvalidValue("eval fraction outside [0,1]");
  std::vector<std::size_t> parent(records.size());
  std::iota(parent.begin(), parent.end(), std::size_t{0});
  std::function<std::size_t(std::size_t)> find = [&](std::size_t x) {
    return parent[x] == x ? x : parent[x] = find(parent[x]);
  };
  std::map<std::string, std::size_t> owner;
  for (std::size_t i = 0; i < records.size(); ++i) {
    std::vector<std::string> keys{"t:" + records[i].setup().topic.text()};
    for (const auto& q : records[i].setup().questions) keys.push_back("q:" + q.text);
    for (const auto& k : keys) {
      auto [it, fresh] = owner.emplace(k, i);
      if (!fresh) parent[find(i)] = find(it->second);
    }
  }
  std::map<std::size_t, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < records.size(); ++i) groups[find(i)].push_back(i);
  std::vector<std::vector<std::size_t>> ordered;
  for (auto& [root, members] : groups) ordered.push_back(std::move(members));
  Rng rng(seed);
  rng.shuffle(ordered);
  const auto target = static_cast<std::size_t>(
      std::llround(eval_fraction * static_cast<double>(records.size())));
  SplitAssignment out;
  std::size_t in_eval = 0;
  for (const auto& g : ordered) {
    const bool to_eval = in_eval + g.size() <= target;
    if (to_eval) in_eval += g.size();
    for (auto i : g) out[records[i].id] = to_eval ? Split::Eval : Split::Train;
  }
  return out;
}

inline FinetuneExport export_finetune(const std::vector<ChatRecord>& records, FinetuneTarget target,
                                      const PromptRegistry& prompts,
                                      const SplitAssignment& assignment) {
  check_split(records, assignment);
  FinetuneExport out;
  for (const auto& r : records) {
    const auto it = assignment.find(r.id);
    const Split split = it == assignment.end() ? Split::Train : it->second;
    if (r.failed() || !r.annotations || !r.annotations->abruptness_complete()) {
      ++out.skipped;
      continue;
    }
    const auto& b = *r.annotations;
    const std::size_t before = out.examples.size();
    if (target == FinetuneTarget::AbruptJudge) {
      for (int line : non_init_system_lines(r.transcript)) {
        const auto chat = r.transcript.prefix(line).utterances;
        const int label = majority_label(line_ratings(b, line));
        out.examples.push_back(
            {prompts.render(PromptId::AbruptEval,
                            {{"TOPIC", r.setup().topic.text()},
                             {"CHAT", chat_binding(PromptId::AbruptEval, chat)}}),
             std::to_string(line) + " CHATBOT: " + std::to_string(label), r.id, line, split});
      }
    } else {
      std::optional<int> first;
      if (b.predictability_complete()) {
        const auto acq = acquisition_outcome(b);
        if (acq.acquired) first = first_acquisition_line(b.predictability);
      }
      const int key = first ? *first - 1 : 0;
      const Utterance* u = nullptr;
      for (const auto& x : r.transcript.utterances)
        if (x.line == key && x.role == Role::System && !x.is_init) u = &x;
      if (!u) {
        ++out.skipped;
        continue;
      }
      out.examples.push_back({prompts.render(PromptId::EvalKey, {{"TOPIC", r.setup().topic.text()},
                                                                 {"UTTERANCE", u->text}}),
                              std::to_string(majority_label(line_ratings(b, key))), r.id, key,
                              split});
    }
    if (out.examples.size() > before) ++(split == Split::Train ? out.train_chats : out.eval_chats);
  }
  return out;
}

inline void to_json(json& j, const FinetuneExample& e) {
  j = json{{"input", e.input},
           {"output", e.output},
           {"record_id", e.record_id},
           {"line", e.line},
           {"split", to_string(e.split)}};
}

}  // namespace pivot
