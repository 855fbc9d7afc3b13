#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>

#include <CLI11.hpp>

#include "pivot/pivot.hpp"

namespace {

using namespace pivot;

struct Runtime {
  Config config;
  PromptRegistry prompts;
  std::unique_ptr<Gateway> gateway;
  std::unique_ptr<Engine> engine;
};

Runtime load_runtime(const std::string& config_path) {
  Runtime rt{load_config(config_path), {}, {}, {}};
  rt.prompts = PromptRegistry::load(rt.config.prompts_dir);
  rt.gateway = build_gateway(rt.config);
  rt.engine = std::make_unique<Engine>(*rt.gateway, rt.prompts, rt.config.engine);
  return rt;
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
}

std::filesystem::path parent_of(const std::string& path) {
  auto p = std::filesystem::path(path).parent_path();
  return p.empty() ? "." : p;
}

int cmd_chat(const std::string& config_path, const std::string& policy_name,
             const std::string& setup_path, std::uint64_t seed, bool show_trace,
             const std::string& out) {
  auto rt = load_runtime(config_path);
  const auto setup = read_json_file(setup_path).get<TaskSetup>();
  Session s = rt.engine->open_session(setup, find_policy(rt.config, policy_name), seed, "chat");
  std::cout << "TOPIC: " << setup.topic.text() << "\nPERSONA:\n";
  for (const auto& p : setup.persona.sentences) std::cout << "  - " << p.text << '\n';
  std::cout << '\n' << format_line(1, Role::System, s.transcript.utterances[0].text) << '\n';
  std::string line;
  while (!s.finished()) {
    std::cout << s.transcript.next_line() << " USER: " << std::flush;
    if (!std::getline(std::cin, line)) break;
    if (trim(line).empty()) continue;
    if (!s.system_budget_left()) {
      rt.engine->append_user(s, line);
      break;
    }
    const auto trace = rt.engine->system_turn(s, line);
    std::cout << format_line(trace.line, Role::System, trace.chosen().text) << '\n';
    if (show_trace) std::cerr << json(trace).dump(2) << '\n';
  }
  if (s.finished()) {
    std::cout << "\nchat complete; belief: " << json(s.belief).dump() << '\n';
    if (!out.empty()) append_record(out, make_record(s));
  }
  return 0;
}

int cmd_simulate(const std::string& config_path, const std::string& plan_path,
                 std::optional<std::uint64_t> seed, std::string out) {
  auto rt = load_runtime(config_path);
  auto plan = parse_plan(read_json_file(plan_path), rt.config.policies, parent_of(plan_path));
  if (seed) plan.seed = *seed;
  if (!out.empty()) plan.out = out;
  if (plan.out.empty()) throw ConfigError("no output corpus given (--out or plan \"out\")");
  if (plan.workers <= 1) plan.workers = rt.config.workers;
  const auto records = run_experiment(plan, *rt.engine);
  save_corpus(plan.out, records);
  std::size_t failed = 0;
  for (const auto& r : records) {
    failed += r.failed();
    if (r.failed()) std::cerr << "failed: " << r.id << ": " << r.error << '\n';
  }
  std::cout << records.size() << " chats written to " << plan.out << " (" << failed
            << " failed)\n";
  return 0;
}

// Judges every system line and stores the verdicts on the record; reduced-mode
// annotations take them as the model side of the conservative merge.
int cmd_eval(const std::string& config_path, const std::string& corpus, const std::string& scorer,
             std::string out) {
  auto rt = load_runtime(config_path);
  auto records = load_corpus(corpus);
  CallCounter calls;
  ModelContext ctx{rt.gateway.get(), &rt.prompts, &calls, {}, rt.config.engine.threshold};
  std::size_t judged = 0;
  for (auto& r : records) {
    if (r.failed()) continue;
    json lines = json::object();
    for (int line : non_init_system_lines(r.transcript)) {
      const auto history = r.transcript.prefix(line - 1).utterances;
      const auto& text = r.transcript.utterances.at(static_cast<std::size_t>(line - 1)).text;
      const auto v = judge_utterance(ctx, scorer, r.setup().topic, history, text);
      lines[std::to_string(line)] = v;
      if (r.annotations && r.annotations->mode == AnnotationMode::Reduced)
        r.annotations->model_non_abrupt[line] = v.non_abrupt;
      ++judged;
    }
    r.extra["judge"] = json{{"scorer", scorer}, {"lines", lines}};
  }
  if (out.empty()) out = corpus;
  save_corpus(out, records);
  std::cout << judged << " utterances judged; corpus written to " << out << '\n';
  return 0;
}

int cmd_metrics(const std::string& corpus, bool as_json) {
  const auto records = load_corpus(corpus);
  const auto report = compute_metrics(records);
  const auto stats = compute_stats(records);
  if (as_json) {
    std::cout << json{{"metrics", report}, {"stats", stats}}.dump(2) << '\n';
    return 0;
  }
  std::cout << format_metrics_table(report) << '\n';
  std::cout << "chats " << stats.chats << " (failed " << stats.failed << "), successes "
            << stats.successes << ", user utterances " << stats.user_utterances
            << ", system utterances " << stats.system_utterances << '\n';
  return 0;
}

// Accepts either a JSON rating matrix ({"ratings": [[...], ...]} or a bare
// array) or a corpus, whose abruptness scores form one item per system line.
std::vector<std::vector<int>> load_ratings(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    const auto j = json::parse(text);
    if (j.is_array()) return j.get<std::vector<std::vector<int>>>();
    if (j.is_object() && j.contains("ratings")) return j.at("ratings").get<std::vector<std::vector<int>>>();
  } catch (const json::exception&) {
  }
  std::istringstream is(text);
  std::vector<std::vector<int>> items;
  for (const auto& r : read_corpus(is)) {
    if (!r.annotations || !r.annotations->abruptness_complete() ||
        r.annotations->mode != AnnotationMode::Full)
      continue;
    for (int line : non_init_system_lines(r.transcript)) items.push_back(line_ratings(*r.annotations, line));
  }
  return items;
}

int cmd_kappa(const std::string& path) {
  const auto k = fleiss_kappa(load_ratings(path));
  std::cout << std::fixed << std::setprecision(3) << "kappa " << k.value << " (observed "
            << k.observed << ", expected " << k.expected << ")"
            << (k.degenerate ? " [degenerate: single category]" : "") << '\n';
  return 0;
}

int cmd_export(const std::string& corpus, const std::string& target, const std::string& split_path,
               double eval_fraction, std::uint64_t seed, const std::string& prompts_dir,
               const std::string& out) {
  const auto records = load_corpus(corpus);
  const auto prompts = PromptRegistry::load(prompts_dir.empty() ? PIVOT_DEFAULT_PROMPT_DIR : prompts_dir);
  SplitAssignment split;
  if (!split_path.empty()) {
    const json assignment = read_json_file(split_path);
    for (const auto& [id, s] : assignment.items()) split[id] = parse_split(s.get<std::string>());
  } else {
    split = auto_split(records, eval_fraction, seed);
  }
  const auto result = export_finetune(records, parse_finetune_target(target), prompts, split);
  std::ofstream os(out, std::ios::binary | std::ios::trunc);
  if (!os) throw ConfigError("cannot write " + out);
  for (const auto& e : result.examples) os << json(e).dump() << '\n';
  std::cout << result.count(Split::Train) << " train / " << result.count(Split::Eval)
            << " eval examples from " << result.train_chats << " / " << result.eval_chats
            << " chats; " << result.skipped << " record(s) skipped\n";
  return 0;
}

httplib::Server* g_server = nullptr;

int cmd_serve(const std::string& config_path, const std::string& addr, const std::string& state,
              std::uint64_t seed) {
  auto rt = load_runtime(config_path);
  const auto colon = addr.rfind(':');
  if (colon == std::string::npos) throw ConfigError("--addr must be HOST:PORT");
  const std::string host = addr.substr(0, colon);
  const int port = std::stoi(addr.substr(colon + 1));
  ServiceOptions opts;
  opts.state_dir = state;
  opts.policies = rt.config.policies;
  opts.seed = seed;
  if (const char* tok = std::getenv(rt.config.evaluator_token_env.c_str())) opts.evaluator_token = tok;
  SessionService svc(*rt.engine, opts);
  httplib::Server server;
  mount_routes(server, svc);
  g_server = &server;
  std::signal(SIGINT, [](int) {
    if (g_server) g_server->stop();
  });
  std::signal(SIGTERM, [](int) {
    if (g_server) g_server->stop();
  });
  std::cout << "listening on " << host << ':' << port << std::endl;
  if (!server.listen(host, port)) throw ConfigError("cannot listen on " + addr);
  svc.shutdown();
  return 0;
}

int cmd_validate(const std::string& corpus) {
  const auto records = load_corpus(corpus);
  std::size_t bad = 0;
  for (const auto& r : records) {
    const auto violations = validate_record(r);
    bad += !violations.empty();
    for (const auto& v : violations)
      std::cout << r.id << ": line " << v.line << ": " << v.rule << ": " << v.detail << '\n';
  }
  std::cout << records.size() << " record(s), " << bad << " with violations\n";
  return bad == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PIVOT dialogue orchestration, evaluation and service toolkit"};
  app.require_subcommand(1);
  std::string config = "pivot.json";

  auto* chat = app.add_subcommand("chat", "Interactive terminal chat against a policy");
  std::string policy, setup, chat_out;
  std::uint64_t chat_seed = 0;
  bool trace = false;
  chat->add_option("--config", config, "Config file")->capture_default_str();
  chat->add_option("--policy", policy, "Policy name from the config")->required();
  chat->add_option("--setup", setup, "Task setup JSON file")->required()->check(CLI::ExistingFile);
  chat->add_option("--seed", chat_seed, "Session seed");
  chat->add_flag("--trace", trace, "Print turn traces to stderr");
  chat->add_option("--out", chat_out, "Append the finished record to this corpus");

  auto* sim = app.add_subcommand("simulate", "Run an experiment plan with machine users");
  std::string plan, sim_out;
  std::optional<std::uint64_t> sim_seed;
  sim->add_option("--config", config, "Config file")->capture_default_str();
  sim->add_option("--plan", plan, "Experiment plan JSON")->required()->check(CLI::ExistingFile);
  sim->add_option("--seed", sim_seed, "Override the plan seed");
  sim->add_option("--out", sim_out, "Output corpus (JSONL)");

  auto* ev = app.add_subcommand("eval", "Add judge verdicts to a corpus");
  std::string corpus, scorer, eval_out;
  ev->add_option("--config", config, "Config file")->capture_default_str();
  ev->add_option("--corpus", corpus, "Corpus (JSONL)")->required()->check(CLI::ExistingFile);
  ev->add_option("--scorer", scorer, "Scorer backend profile")->required();
  ev->add_option("--out", eval_out, "Output corpus (defaults to in place)");

  auto* met = app.add_subcommand("metrics", "ACQ / N-ABR / SUC and corpus statistics");
  bool as_json = false;
  met->add_option("--corpus", corpus, "Corpus (JSONL)")->required()->check(CLI::ExistingFile);
  met->add_flag("--json", as_json, "Machine-readable output");

  auto* kap = app.add_subcommand("kappa", "Fleiss' kappa of abruptness annotations");
  std::string annotations;
  kap->add_option("--annotations", annotations, "Corpus or rating matrix JSON")
      ->required()
      ->check(CLI::ExistingFile);

  auto* exp = app.add_subcommand("export-finetune", "Export judge training data");
  std::string target = "abrupt", split, prompts_dir, exp_out = "finetune.jsonl";
  double eval_fraction = 0.45;
  std::uint64_t exp_seed = 0;
  exp->add_option("--corpus", corpus, "Corpus (JSONL)")->required()->check(CLI::ExistingFile);
  exp->add_option("--target", target, "abrupt | prototype")
      ->check(CLI::IsMember({"abrupt", "prototype"}))
      ->capture_default_str();
  exp->add_option("--split", split, "JSON object mapping record id to train|eval");
  exp->add_option("--eval-fraction", eval_fraction, "Eval share for the automatic split")
      ->capture_default_str();
  exp->add_option("--seed", exp_seed, "Seed for the automatic split");
  exp->add_option("--prompts", prompts_dir, "Prompt template directory");
  exp->add_option("--out", exp_out, "Output JSONL")->capture_default_str();

  auto* srv = app.add_subcommand("serve", "HTTP service for live sessions and annotation");
  std::string addr = "127.0.0.1:8080", state = "pivot-state";
  std::uint64_t srv_seed = 0;
  srv->add_option("--config", config, "Config file")->capture_default_str();
  srv->add_option("--addr", addr, "HOST:PORT")->capture_default_str();
  srv->add_option("--state", state, "State directory (event log and corpus)")->capture_default_str();
  srv->add_option("--seed", srv_seed, "Base seed for sessions");

  auto* val = app.add_subcommand("validate", "Check corpus records against the schema");
  val->add_option("--corpus", corpus, "Corpus (JSONL)")->required()->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);
  try {
    if (*chat) return cmd_chat(config, policy, setup, chat_seed, trace, chat_out);
    if (*sim) return cmd_simulate(config, plan, sim_seed, sim_out);
    if (*ev) return cmd_eval(config, corpus, scorer, eval_out);
    if (*met) return cmd_metrics(corpus, as_json);
    if (*kap) return cmd_kappa(annotations);
    if (*exp) return cmd_export(corpus, target, split, eval_fraction, exp_seed, prompts_dir, exp_out);
    if (*srv) return cmd_serve(config, addr, state, srv_seed);
    if (*val) return cmd_validate(corpus);
  } catch (const pivot::Error& e) {
    std::cerr << "error: " << e.kind() << ": " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
