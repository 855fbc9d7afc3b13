#pragma once

// Prompt templates are UTF-8 files in a directory (one per prompt id) with a
// sha256sum-style manifest `golden.sha256`. Placeholders are bracketed names,
// e.g. `[TOPIC]`; substitution is literal and single-pass.

#include <array>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <openssl/evp.h>

#include "pivot/core.hpp"

#ifndef PIVOT_DEFAULT_PROMPT_DIR
#define PIVOT_DEFAULT_PROMPT_DIR "prompts"
#endif

namespace pivot {

enum class PromptId {
  Vanilla = 1,
  AbruptEval = 2,
  Predict = 3,
  Rewrite = 4,
  Safe = 5,
  SafeRewrite = 6,
  GenTopic = 7,
  RmTopic = 8,
  GenPersona = 9,
  RmPersona = 10,
  EvalReason = 11,
  AddReason = 12,
  PrepareKey = 13,
  RewriteKey = 14,
  GenCushion = 15,
  EvalKey = 16,
  Insight = 17,
};

struct PromptInfo {
  PromptId id;
  std::string_view file;
  // Indentation of numbered chat lines bound to [CHAT]; -1 when unused.
  int chat_indent;
};

inline constexpr std::array<PromptInfo, 17> kPromptCatalog{{
    {PromptId::Vanilla, "01_vanilla.txt", 0},
    {PromptId::AbruptEval, "02_abrupt_eval.txt", 2},
    {PromptId::Predict, "03_predict.txt", 2},
    {PromptId::Rewrite, "04_rewrite.txt", 0},
    {PromptId::Safe, "05_safe.txt", 0},
    {PromptId::SafeRewrite, "06_safe_rewrite.txt", 0},
    {PromptId::GenTopic, "07_gen_topic.txt", -1},
    {PromptId::RmTopic, "08_rm_topic.txt", -1},
    {PromptId::GenPersona, "09_gen_persona.txt", -1},
    {PromptId::RmPersona, "10_rm_persona.txt", -1},
    {PromptId::EvalReason, "11_eval_reason.txt", 2},
    {PromptId::AddReason, "12_add_reason.txt", 2},
    {PromptId::PrepareKey, "13_prepare_key.txt", -1},
    {PromptId::RewriteKey, "14_rewrite_key.txt", 2},
    {PromptId::GenCushion, "15_gen_cushion.txt", 2},
    {PromptId::EvalKey, "16_eval_key.txt", -1},
    {PromptId::Insight, "17_insight.txt", 0},
}};

inline const PromptInfo& prompt_info(PromptId id) {
  const int n = static_cast<int>(id);
  if (n < 1 || n > static_cast<int>(kPromptCatalog.size()))
    throw UnknownTemplate("unknown prompt id " + std::to_string(n));
  return kPromptCatalog[static_cast<std::size_t>(n - 1)];
}

inline PromptId prompt_id_from_int(int n) { return prompt_info(static_cast<PromptId>(n)).id; }

inline constexpr std::array<std::string_view, 9> kPlaceholderNames{
    "TOPIC", "QUESTION", "CHAT", "PLANNED_UTTERANCE", "RELATIONSHIP_TYPE",
    "LIST",  "UTTERANCE", "i",   "t"};

inline bool is_placeholder_name(std::string_view name) {
  for (auto n : kPlaceholderNames)
    if (n == name) return true;
  return false;
}

using Bindings = std::map<std::string, std::string, std::less<>>;

inline std::string sha256_hex(std::string_view data) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1)
    throw Error("DigestError", "EVP_Digest failed");
  std::ostringstream os;
  os << std::hex << std::setfill('0');
  for (unsigned int i = 0; i < len; ++i) os << std::setw(2) << static_cast<int>(digest[i]);
  return os.str();
}

class PromptTemplate {
 public:
  PromptTemplate(PromptId id, std::string body) : id_(id), body_(std::move(body)) {
    parse();
  }

  PromptId id() const noexcept { return id_; }
  const std::string& body() const noexcept { return body_; }
  const std::set<std::string, std::less<>>& placeholders() const noexcept { return names_; }
  std::string digest() const { return sha256_hex(body_); }

  // True when `text` could be a rendering of this template: every literal
  // segment appears in order, the first one at the start.
  bool matches(std::string_view text) const {
    std::size_t pos = 0, at = 0;
    for (const auto& slot : slots_) {
      const std::string_view lit(body_.data() + pos, slot.offset - pos);
      const auto found = text.find(lit, at);
      if (found == std::string_view::npos || (pos == 0 && found != 0)) return false;
      at = found + lit.size();
      pos = slot.offset + slot.name.size() + 2;
    }
    const std::string_view last(body_.data() + pos, body_.size() - pos);
    if (slots_.empty()) return text == last;
    return text.size() >= at + last.size() && text.substr(text.size() - last.size()) == last;
  }

  std::size_t literal_size() const {
    std::size_t n = body_.size();
    for (const auto& slot : slots_) n -= slot.name.size() + 2;
    return n;
  }

  std::string render(const Bindings& bindings) const {
    for (const auto& name : names_)
      if (bindings.find(name) == bindings.end())
        throw MissingPlaceholder("prompt " + std::to_string(static_cast<int>(id_)) +
                                 " needs binding for [" + name + "]");
    std::string out;
    out.reserve(body_.size() + 256);
    std::size_t pos = 0;
    for (const auto& slot : slots_) {
      out.append(body_, pos, slot.offset - pos);
      out += bindings.find(slot.name)->second;
      pos = slot.offset + slot.name.size() + 2;
    }
    out.append(body_, pos, std::string::npos);
    return out;
  }

 private:
  struct Slot {
    std::size_t offset;
    std::string name;
  };

  void parse() {
    std::size_t pos = 0;
    while ((pos = body_.find('[', pos)) != std::string::npos) {
      const auto close = body_.find(']', pos + 1);
      if (close == std::string::npos) break;
      std::string_view name(body_.data() + pos + 1, close - pos - 1);
      if (is_placeholder_name(name)) {
        slots_.push_back({pos, std::string(name)});
        names_.emplace(name);
        pos = close + 1;
      } else {
        ++pos;
      }
    }
  }

  PromptId id_;
  std::string body_;
  std::vector<Slot> slots_;
  std::set<std::string, std::less<>> names_;
};

// True when `text` still contains a registry placeholder token.
inline bool has_unresolved_placeholder(std::string_view text) {
  for (auto n : kPlaceholderNames) {
    std::string token = "[" + std::string(n) + "]";
    if (text.find(token) != std::string_view::npos) return true;
  }
  return false;
}

class PromptRegistry {
 public:
  // Loads every catalog template from `dir`. When the directory carries a
  // golden manifest, every body is checked against it.
  static PromptRegistry load(const std::filesystem::path& dir) {
    PromptRegistry reg;
    reg.dir_ = dir;
    for (const auto& info : kPromptCatalog) {
      const auto path = dir / std::string(info.file);
      std::ifstream in(path, std::ios::binary);
      if (!in) throw ConfigError("cannot read prompt template " + path.string());
      std::ostringstream ss;
      ss << in.rdbuf();
      reg.templates_.emplace(info.id, PromptTemplate(info.id, ss.str()));
    }
    const auto manifest = dir / "golden.sha256";
    if (std::filesystem::exists(manifest)) {
      reg.golden_ = read_manifest(manifest);
      if (auto bad = reg.golden_mismatches(); !bad.empty())
        throw GoldenMismatch("prompt template(s) differ from golden digest: " + bad.front());
    }
    return reg;
  }

  static PromptRegistry load_default() { return load(PIVOT_DEFAULT_PROMPT_DIR); }

  const PromptTemplate& get(PromptId id) const {
    auto it = templates_.find(id);
    if (it == templates_.end())
      throw UnknownTemplate("unknown prompt id " + std::to_string(static_cast<int>(id)));
    return it->second;
  }

  std::string render(PromptId id, const Bindings& bindings) const {
    return get(id).render(bindings);
  }

  // Template that rendered `text`; among several matches the one with the
  // most literal text wins, a tie yields none.
  std::optional<PromptId> identify(std::string_view text) const {
    std::optional<PromptId> hit;
    std::size_t best = 0;
    bool tie = false;
    for (const auto& [id, t] : templates_) {
      if (!t.matches(text)) continue;
      const std::size_t n = t.literal_size();
      if (!hit || n > best) {
        hit = id, best = n, tie = false;
      } else if (n == best) {
        tie = true;
      }
    }
    return tie ? std::nullopt : hit;
  }

  // Files whose digest differs from the manifest (or are missing from it).
  std::vector<std::string> golden_mismatches() const {
    std::vector<std::string> bad;
    for (const auto& info : kPromptCatalog) {
      auto it = golden_.find(std::string(info.file));
      if (it == golden_.end() || it->second != get(info.id).digest())
        bad.emplace_back(info.file);
    }
    return bad;
  }

  const std::map<std::string, std::string>& golden() const noexcept { return golden_; }
  const std::filesystem::path& directory() const noexcept { return dir_; }

  static std::map<std::string, std::string> read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read manifest " + path.string());
    std::map<std::string, std::string> out;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::istringstream ls(line);
      std::string digest, file;
      ls >> digest >> file;
      if (file.empty()) throw ParseError("malformed manifest line: " + line);
      out[file] = digest;
    }
    return out;
  }

 private:
  std::filesystem::path dir_;
  std::map<PromptId, PromptTemplate> templates_;
  std::map<std::string, std::string> golden_;
};

// ---------------------------------------------------------------------------
// Chat line formatting

struct ChatFormat {
  int indent = 0;
  // Line rendered as "*N CHATBOT: ..." without indentation.
  std::optional<int> marked_line;
};

inline std::string_view speaker_label(Role r) { return r == Role::System ? "CHATBOT" : "USER"; }

inline std::string format_line(int line, Role role, std::string_view text, int indent = 0) {
  std::string out(static_cast<std::size_t>(std::max(indent, 0)), ' ');
  out += std::to_string(line);
  out += ' ';
  out += speaker_label(role);
  out += ": ";
  out += text;
  return out;
}

inline std::string format_chat_lines(const std::vector<Utterance>& utterances,
                                     const ChatFormat& fmt = {}) {
  std::string out;
  for (const auto& u : utterances) {
    if (!out.empty()) out += '\n';
    if (fmt.marked_line && *fmt.marked_line == u.line) {
      out += '*';
      out += format_line(u.line, u.role, u.text, 0);
    } else {
      out += format_line(u.line, u.role, u.text, fmt.indent);
    }
  }
  return out;
}

inline std::string format_chat_lines(const Transcript& t, const ChatFormat& fmt = {}) {
  return format_chat_lines(t.utterances, fmt);
}

// CHAT binding in the indentation the given template expects.
inline std::string chat_binding(PromptId id, const std::vector<Utterance>& utterances,
                                std::optional<int> marked_line = std::nullopt) {
  const int indent = prompt_info(id).chat_indent;
  return format_chat_lines(utterances, ChatFormat{indent < 0 ? 0 : indent, marked_line});
}

}  // namespace pivot
