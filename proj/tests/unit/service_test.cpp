#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <thread>

#include "support.hpp"

using namespace pivot;
using namespace pivot::testing;

namespace {

class ServiceTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = std::filesystem::temp_directory_path() /
           ("pivot-service-" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    std::filesystem::remove_all(dir_);
    gw_ = synthetic_gateway();
    gw_->add(profile("flaky"), std::make_shared<FunctionBackend>(
                                   [](std::string_view p) -> std::string {
                                     if (p.find("BOOM") != std::string_view::npos) throw TransportError("down");
                                     return synthetic_generate(p);
                                   },
                                   nullptr));
    engine_ = std::make_unique<Engine>(*gw_, registry());
    svc_ = make_service();
  }

  void TearDown() override {
    svc_.reset();
    std::filesystem::remove_all(dir_);
  }

  std::unique_ptr<SessionService> make_service() {
    auto flaky = policy(PolicyKind::Standard, "flaky");
    flaky.generator = "flaky";
    return std::make_unique<SessionService>(
        *engine_, ServiceOptions{dir_, "tok",
                                 {{"ours", policy(PolicyKind::Strategy, "ours")},
                                  {"plain", policy(PolicyKind::Standard, "plain")},
                                  {"flaky", flaky}},
                                 7});
  }

  std::string create(const std::string& p = "ours") {
    return svc_->create_session(json{{"setup", fishing_setup()}, {"policy", p}}).at("id");
  }

  // Plays the remaining user turns; returns the last reply.
  json finish(const std::string& id) {
    json last;
    for (int i = 0; i < 9; ++i) {
      last = svc_->post_message(id, json{{"text", "message " + std::to_string(i)}});
      if (last.at("closed").get<bool>()) break;
    }
    return last;
  }

  static void annotate_fully(SessionService& svc, const std::string& record_id, bool acquired) {
    const auto t = svc.record(record_id).transcript;
    const auto b = uniform_bundle(t, 3, acquired);
    for (const auto& a : b.abruptness)
      svc.submit_annotation(record_id, json{{"perspective", "abruptness"}, {"annotation", a}});
    for (const auto& p : b.predictability)
      svc.submit_annotation(record_id, json{{"perspective", "predictability"}, {"annotation", p}});
  }

  std::filesystem::path dir_;
  std::unique_ptr<Gateway> gw_;
  std::unique_ptr<Engine> engine_;
  std::unique_ptr<SessionService> svc_;
};

const std::string kQuestion = "Are you particular about audio equipment?";

}  // namespace

TEST_F(ServiceTest, UserFacingPayloadsNeverCarryTheQuestion) {
  const auto created = svc_->create_session(json{{"setup", fishing_setup()}, {"policy", "ours"}});
  EXPECT_EQ(created.at("opener"), "Hi! Let's talk about Fishing!");
  const std::string id = created.at("id");
  std::vector<json> payloads{created};
  for (int i = 0; i < 3; ++i) payloads.push_back(svc_->post_message(id, json{{"text", "hi " + std::to_string(i)}}));
  payloads.push_back(svc_->get_session(id, View::User));
  for (const auto& p : payloads) {
    const auto dump = p.dump();
    EXPECT_EQ(dump.find(kQuestion), std::string::npos);
    EXPECT_EQ(dump.find("gold"), std::string::npos);
    EXPECT_EQ(dump.find("belief"), std::string::npos);
    EXPECT_FALSE(p.contains("trace"));
  }
  const auto observer = svc_->get_session(id, View::Observer);
  EXPECT_EQ(observer.at("question"), kQuestion);
  EXPECT_FALSE(observer.contains("persona"));
  EXPECT_THROW(svc_->get_session(id, View::Evaluator), Unauthorized);
  EXPECT_TRUE(svc_->get_session(id, View::Evaluator, "tok").contains("belief"));
}

TEST_F(ServiceTest, TraceRequiresEvaluatorToken) {
  const auto id = create();
  EXPECT_THROW(svc_->post_message(id, json{{"text", "hi"}}, true, "wrong"), Unauthorized);
  const auto r = svc_->post_message(id, json{{"text", "hi"}}, true, "tok");
  EXPECT_EQ(r.at("trace").at("candidates").size(), 10u);
}

TEST_F(ServiceTest, TurnOrderAndValidation) {
  const auto id = create("plain");
  EXPECT_THROW(svc_->post_message(id, json{{"text", "hi"}, {"expected_line", 4}}), TurnOrderError);
  EXPECT_THROW(svc_->post_message(id, json{{"text", "   "}}), SchemaViolation);
  EXPECT_THROW(svc_->post_message(id, json{{"nope", 1}}), SchemaViolation);
  const auto r = svc_->post_message(id, json{{"text", "hi"}, {"expected_line", 2}});
  EXPECT_EQ(r.at("reply").at("line"), 3);
  EXPECT_EQ(r.at("next_line"), 4);
  EXPECT_THROW(svc_->post_message("s999", json{{"text", "hi"}}), NotFound);
  EXPECT_THROW(svc_->create_session(json{{"setup", fishing_setup()}, {"policy", "ghost"}}), ConfigError);
  EXPECT_THROW(svc_->create_session(json{{"policy", "plain"}}), SchemaViolation);
}

TEST_F(ServiceTest, FailedTurnLeavesSessionUntouched) {
  const auto id = create("flaky");
  EXPECT_THROW(svc_->post_message(id, json{{"text", "BOOM"}}), TurnFailed);
  const auto view = svc_->get_session(id, View::User);
  EXPECT_EQ(view.at("transcript").size(), 1u);
  EXPECT_EQ(view.at("next_line"), 2);
  EXPECT_NO_THROW(svc_->post_message(id, json{{"text", "fine"}}));
}

TEST_F(ServiceTest, SessionClosesAfterEighteenLines) {
  const auto id = create();
  const auto last = finish(id);
  EXPECT_TRUE(last.at("closed").get<bool>());
  EXPECT_TRUE(last.at("reply").is_null());
  EXPECT_EQ(last.at("line"), 18);
  EXPECT_THROW(svc_->post_message(id, json{{"text", "again"}}), SessionClosed);
  const auto r = svc_->record(last.at("record_id"));
  EXPECT_EQ(r.system, "ours");
  EXPECT_TRUE(validate_transcript(r.transcript).empty());
  EXPECT_EQ(load_corpus(dir_ / "corpus.jsonl").size(), 1u);
}

TEST_F(ServiceTest, EventsStreamUtterancesThenClose) {
  const auto id = create("plain");
  bool done = false;
  auto ev = svc_->events_since(id, 0, std::chrono::milliseconds(0), done);
  ASSERT_EQ(ev.size(), 1u);
  EXPECT_FALSE(done);
  EXPECT_EQ(ev[0].at("seq"), 0);

  std::thread poster([&] { svc_->post_message(id, json{{"text", "hi"}}); });
  ev = svc_->events_since(id, 1, std::chrono::seconds(5), done);
  poster.join();
  ASSERT_FALSE(ev.empty());
  EXPECT_EQ(ev[0].at("line"), 2);

  finish(id);
  ev = svc_->events_since(id, 1, std::chrono::milliseconds(0), done);
  EXPECT_TRUE(done);
  EXPECT_EQ(ev.size(), 18u);
  EXPECT_EQ(ev.back().at("type"), "closed");
}

TEST_F(ServiceTest, AnnotationIntake) {
  const auto rid = finish(create()).at("record_id").get<std::string>();
  const auto t = svc_->record(rid).transcript;
  const auto b = uniform_bundle(t, 3, true);

  auto state = svc_->submit_annotation(rid, json{{"perspective", "abruptness"}, {"annotation", b.abruptness[0]}});
  EXPECT_EQ(state.at("abruptness"), 1);
  EXPECT_THROW(svc_->submit_annotation(rid, json{{"perspective", "abruptness"}, {"annotation", b.abruptness[0]}}),
               DuplicateAnnotation);
  EXPECT_THROW(svc_->submit_annotation(
                   rid, json{{"perspective", "predictability"},
                             {"annotation", {{"evaluator", "x"}, {"score", 1}, {"inferred", "Yes"}, {"lines", json::array()}}}}),
               SchemaViolation);
  EXPECT_THROW(svc_->submit_annotation(rid, json{{"perspective", "mood"}}), SchemaViolation);
  EXPECT_THROW(svc_->submit_annotation("missing", json{{"perspective", "abruptness"}}), NotFound);

  for (int i = 1; i < 3; ++i)
    svc_->submit_annotation(rid, json{{"perspective", "abruptness"}, {"annotation", b.abruptness[i]}});
  for (const auto& p : b.predictability)
    state = svc_->submit_annotation(rid, json{{"perspective", "predictability"}, {"annotation", p}});
  EXPECT_TRUE(state.at("flags").at("success").get<bool>());
  EXPECT_EQ(state.at("answer"), "Yes");
  const auto m = svc_->metrics();
  EXPECT_EQ(m.at("metrics").at("systems")[0].at("SUC"), 100.0);
  EXPECT_EQ(m.at("stats").at("chats"), 1);
}

TEST_F(ServiceTest, RecoversFromEventLog) {
  const auto open_id = create();
  svc_->post_message(open_id, json{{"text", "hi"}});
  const auto rid = finish(create("plain")).at("record_id").get<std::string>();
  annotate_fully(*svc_, rid, false);
  svc_.reset();

  // A crash mid-write leaves a torn last line; it is ignored.
  std::ofstream(dir_ / "events.jsonl", std::ios::app) << "{\"type\":\"sess";
  svc_ = make_service();
  EXPECT_EQ(svc_->session_count(), 2u);
  EXPECT_EQ(svc_->get_session(open_id, View::User).at("next_line"), 4);
  EXPECT_NO_THROW(svc_->post_message(open_id, json{{"text", "back again"}}));
  EXPECT_EQ(svc_->record(rid).annotations->abruptness.size(), 3u);
  EXPECT_NE(create(), open_id);
}

TEST_F(ServiceTest, MalformedInteriorLogLineIsAnError) {
  create();
  svc_.reset();
  const auto path = dir_ / "events.jsonl";
  std::ifstream in(path);
  std::string body((std::istreambuf_iterator<char>(in)), {});
  std::ofstream(path) << "not json\n" << body;
  EXPECT_THROW(make_service(), ParseError);
}

TEST(HttpStatus, MapsErrorKinds) {
  EXPECT_EQ(http_status(NotFound("x")), 404);
  EXPECT_EQ(http_status(TurnOrderError("x")), 409);
  EXPECT_EQ(http_status(SessionClosed("x")), 409);
  EXPECT_EQ(http_status(Unauthorized("x")), 401);
  EXPECT_EQ(http_status(SchemaViolation("x")), 400);
  EXPECT_EQ(http_status(TurnFailed("x")), 502);
  EXPECT_EQ(http_status(ScriptError("x")), 500);
}

// ---------------------------------------------------------------------------
// HTTP routes

namespace {

class HttpTest : public ::testing::Test {
 protected:
  void SetUp() override {
    gw_ = synthetic_gateway();
    engine_ = std::make_unique<Engine>(*gw_, registry());
    svc_ = std::make_unique<SessionService>(
        *engine_, ServiceOptions{{}, "tok", {{"plain", policy(PolicyKind::Standard, "plain")}}, 1});
    mount_routes(server_, *svc_);
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    client_ = std::make_unique<httplib::Client>("127.0.0.1", port_);
  }

  void TearDown() override {
    svc_->shutdown();
    server_.stop();
    thread_.join();
  }

  httplib::Result post(const std::string& path, const json& body, httplib::Headers h = {}) {
    return client_->Post(path, h, body.dump(), "application/json");
  }

  std::unique_ptr<Gateway> gw_;
  std::unique_ptr<Engine> engine_;
  std::unique_ptr<SessionService> svc_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
  std::unique_ptr<httplib::Client> client_;
};

}  // namespace

TEST_F(HttpTest, SessionLifecycleOverHttp) {
  auto res = post("/api/sessions", json{{"setup", fishing_setup()}, {"policy", "plain"}});
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 201);
  const std::string id = json::parse(res->body).at("id");
  EXPECT_EQ(res->body.find(kQuestion), std::string::npos);

  res = post("/api/sessions/" + id + "/messages", json{{"text", "hi"}, {"expected_line", 5}});
  EXPECT_EQ(res->status, 409);
  EXPECT_EQ(json::parse(res->body).at("error"), "TurnOrderError");

  std::string record_id;
  for (int i = 0; i < 9; ++i) {
    res = post("/api/sessions/" + id + "/messages", json{{"text", "line " + std::to_string(i)}});
    ASSERT_EQ(res->status, 200) << res->body;
    const auto j = json::parse(res->body);
    if (j.contains("record_id")) record_id = j.at("record_id");
  }
  EXPECT_FALSE(record_id.empty());
  res = post("/api/sessions/" + id + "/messages", json{{"text", "more"}});
  EXPECT_EQ(res->status, 409);
  EXPECT_EQ(json::parse(res->body).at("error"), "SessionClosed");

  res = client_->Get("/api/sessions/" + id + "/events?since=16");
  ASSERT_TRUE(res);
  EXPECT_NE(res->body.find("id: 17\nevent: utterance"), std::string::npos);
  EXPECT_NE(res->body.find("event: closed"), std::string::npos);

  EXPECT_EQ(client_->Get("/api/records/" + record_id)->status, 401);
  EXPECT_EQ(client_->Get("/api/records/" + record_id, {{"X-Evaluator-Token", "tok"}})->status, 200);
  EXPECT_EQ(client_->Get("/api/corpus")->status, 401);
  EXPECT_EQ(post("/api/records/" + record_id + "/annotations", json::object())->status, 401);

  const auto a = uniform_bundle(svc_->record(record_id).transcript, 3, true).abruptness[0];
  res = post("/api/records/" + record_id + "/annotations", json{{"perspective", "abruptness"}, {"annotation", a}},
             {{"X-Evaluator-Token", "tok"}});
  EXPECT_EQ(res->status, 200);
  res = post("/api/records/" + record_id + "/annotations", json{{"perspective", "abruptness"}, {"annotation", a}},
             {{"X-Evaluator-Token", "tok"}});
  EXPECT_EQ(res->status, 409);

  EXPECT_EQ(client_->Get("/api/records")->status, 200);
  EXPECT_EQ(client_->Get("/api/metrics")->status, 200);
}

TEST_F(HttpTest, ErrorsAreJson) {
  auto res = client_->Get("/api/sessions/nope");
  EXPECT_EQ(res->status, 404);
  EXPECT_EQ(json::parse(res->body).at("error"), "NotFound");
  res = client_->Post("/api/sessions", "{not json", "application/json");
  EXPECT_EQ(res->status, 400);
  res = client_->Get("/api/sessions/nope?view=admin");
  EXPECT_EQ(res->status, 400);
}
