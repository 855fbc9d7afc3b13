#pragma once

// Chat records and the line-delimited corpus file format. Each line is one
// JSON object; fields this version does not know are carried through
// unchanged on load/save.

#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "pivot/core.hpp"
#include "pivot/evaluation.hpp"

namespace pivot {

inline constexpr int kSchemaVersion = 1;

enum class RecordStatus { Complete, Failed };

inline std::string_view to_string(RecordStatus s) {
  return s == RecordStatus::Complete ? "complete" : "failed";
}
inline RecordStatus parse_record_status(std::string_view s) {
  return detail::parse_enum(s, std::array{RecordStatus::Complete, RecordStatus::Failed},
                            "record status");
}

struct ChatRecord {
  std::string id;
  std::string system;  // policy / backend label
  Transcript transcript;
  RecordStatus status = RecordStatus::Complete;
  std::string error;  // failed records only
  std::optional<AnnotationBundle> annotations;
  std::optional<json> trace;
  std::optional<int> relationship_annotation;  // 1..9
  json extra = json::object();                // unknown fields

  const TaskSetup& setup() const { return transcript.setup; }
  Answer gold() const { return setup().question().gold_answer; }
  bool failed() const { return status == RecordStatus::Failed; }

  bool operator==(const ChatRecord&) const = default;
};

// Structural checks: complete records need a valid transcript, annotations
// must reference existing lines of the right role.
inline std::vector<Violation> validate_record(const ChatRecord& r) {
  std::vector<Violation> out;
  if (r.id.empty()) out.push_back({0, "id", "record id is empty"});
  if (r.status == RecordStatus::Complete)
    for (auto& v : validate_transcript(r.transcript)) out.push_back(std::move(v));
  if (r.annotations) {
    try {
      validate(*r.annotations, r.transcript);
    } catch (const Error& e) {
      out.push_back({0, "annotations", e.what()});
    }
  }
  if (r.relationship_annotation &&
      (*r.relationship_annotation < 1 ||
       *r.relationship_annotation > static_cast<int>(kRelationshipTypes.size())))
    out.push_back({0, "relationship_annotation", "relationship type outside 1..9"});
  try {
    const auto& q = r.setup().question();
    if (q.source_index < r.setup().persona.sentences.size() &&
        gold_answer(r.setup().persona, q) != q.gold_answer)
      out.push_back({0, "gold_answer", "gold answer disagrees with persona polarity"});
  } catch (const Error& e) {
    out.push_back({0, "setup", e.what()});
  }
  return out;
}

// Chat-level flags when the record is complete and fully annotated.
inline std::optional<ChatFlags> record_flags(const ChatRecord& r) {
  if (r.failed() || !r.annotations || !r.annotations->complete()) return std::nullopt;
  return evaluate_chat(*r.annotations, r.transcript);
}

inline MetricsReport compute_metrics(const std::vector<ChatRecord>& records) {
  std::vector<LabeledOutcome> outcomes;
  std::vector<std::string> order;
  std::map<std::string, std::size_t> skipped;
  for (const auto& r : records) {
    if (std::find(order.begin(), order.end(), r.system) == order.end()) order.push_back(r.system);
    if (auto f = record_flags(r))
      outcomes.push_back({r.system, f->acquired, f->non_abrupt});
    else
      ++skipped[r.system];
  }
  auto report = compute_metrics(outcomes);
  for (const auto& system : order) {
    const auto n = skipped[system];
    if (!report.find(system))
      report.notes.push_back("system '" + system + "' omitted: no evaluable chats (" +
                             std::to_string(n) + " failed or unannotated)");
    else if (n)
      report.notes.push_back("system '" + system + "': " + std::to_string(n) +
                             " failed or unannotated chat(s) excluded");
  }
  return report;
}

// ---------------------------------------------------------------------------
// JSON

inline const std::set<std::string>& record_known_keys() {
  static const std::set<std::string> keys{"schema_version", "id",          "system",
                                          "status",         "error",       "setup",
                                          "transcript",     "gold_answer", "annotations",
                                          "trace",          "relationship_annotation"};
  return keys;
}

inline void to_json(json& j, const ChatRecord& r) {
  j = r.extra.is_object() ? r.extra : json::object();
  j["schema_version"] = kSchemaVersion;
  j["id"] = r.id;
  j["system"] = r.system;
  j["status"] = to_string(r.status);
  if (!r.error.empty()) j["error"] = r.error;
  j["setup"] = r.transcript.setup;
  j["transcript"] = r.transcript.utterances;
  if (r.transcript.setup.questions.size() == 1) j["gold_answer"] = to_string(r.gold());
  if (r.annotations) j["annotations"] = *r.annotations;
  if (r.trace) j["trace"] = *r.trace;
  if (r.relationship_annotation) j["relationship_annotation"] = *r.relationship_annotation;
}

inline void from_json(const json& j, ChatRecord& r) {
  if (!j.is_object()) throw SchemaViolation("record must be an object");
  const int version = j.value("schema_version", kSchemaVersion);
  if (version > kSchemaVersion)
    throw SchemaViolation("unsupported schema_version " + std::to_string(version));
  r.id = j.at("id").get<std::string>();
  r.system = j.value("system", "");
  r.status = parse_record_status(j.value("status", "complete"));
  r.error = j.value("error", "");
  r.transcript.setup = j.at("setup").get<TaskSetup>();
  r.transcript.utterances = j.at("transcript").get<std::vector<Utterance>>();
  r.annotations.reset();
  if (j.contains("annotations") && !j.at("annotations").is_null())
    r.annotations = j.at("annotations").get<AnnotationBundle>();
  r.trace.reset();
  if (j.contains("trace") && !j.at("trace").is_null()) r.trace = j.at("trace");
  r.relationship_annotation.reset();
  if (j.contains("relationship_annotation") && !j.at("relationship_annotation").is_null())
    r.relationship_annotation = j.at("relationship_annotation").get<int>();
  r.extra = json::object();
  for (const auto& [k, v] : j.items())
    if (!record_known_keys().count(k)) r.extra[k] = v;
}

inline std::string encode_record(const ChatRecord& r) { return json(r).dump(); }

inline ChatRecord decode_record(std::string_view line, std::size_t line_no = 0) {
  try {
    return json::parse(line).get<ChatRecord>();
  } catch (const json::exception& e) {
    throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
  } catch (const Error& e) {
    throw ParseError("line " + std::to_string(line_no) + ": " + e.kind() + ": " + e.what());
  }
}

inline std::vector<ChatRecord> read_corpus(std::istream& in) {
  std::vector<ChatRecord> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (trim(line).empty()) continue;
    out.push_back(decode_record(line, n));
  }
  return out;
}

inline std::vector<ChatRecord> load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open corpus " + path.string());
  return read_corpus(in);
}

inline void write_corpus(std::ostream& out, const std::vector<ChatRecord>& records) {
  for (const auto& r : records) out << encode_record(r) << '\n';
}

// Writes to a sibling temporary and renames, so readers never see a torn file.
inline void save_corpus(const std::filesystem::path& path, const std::vector<ChatRecord>& records) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write corpus " + tmp.string());
    write_corpus(out, records);
    if (!out.flush()) throw ConfigError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline void append_record(const std::filesystem::path& path, const ChatRecord& r) {
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw ConfigError("cannot append to corpus " + path.string());
  out << encode_record(r) << '\n';
}

}  // namespace pivot
