#include <gtest/gtest.h>

#include <mutex>

#include "support.hpp"

using namespace pivot;
using namespace pivot::testing;

namespace {

// Last system line of an abruptness prompt: the utterance being judged.
std::string judged_line(std::string_view prompt) {
  const auto at = prompt.rfind("CHATBOT: ");
  if (at == std::string_view::npos) return std::string(prompt);
  const auto end = prompt.find('\n', at);
  return std::string(prompt.substr(at + 9, end == std::string_view::npos ? end : end - at - 9));
}

// Gateway whose replies are programmable per test and whose calls are logged
// with the prompt id and seed they carried.
struct Rig {
  struct Call {
    std::optional<PromptId> prompt;
    std::uint64_t seed;
  };

  std::function<std::string(std::string_view)> gen = synthetic_generate;
  std::function<ScoreDistribution(std::string_view)> score = synthetic_score;
  std::function<std::string(std::string_view)> predict = synthetic_generate;
  std::vector<Call> log;
  std::mutex mu;
  Gateway gw{4};

  class Tap final : public Backend {
   public:
    Tap(Rig* rig, int role) : rig_(rig), role_(role) {}
    bool can_generate() const override { return role_ != 1; }
    bool can_score() const override { return role_ == 1; }
    std::string generate(std::string_view p, const CallOptions& o) override {
      record(p, o);
      return role_ == 0 ? rig_->gen(p) : rig_->predict(p);
    }
    ScoreDistribution score(std::string_view p, const CallOptions& o) override {
      record(p, o);
      return rig_->score(p);
    }

   private:
    void record(std::string_view p, const CallOptions& o) {
      std::lock_guard lock(rig_->mu);
      rig_->log.push_back({registry().identify(p), o.seed});
    }
    Rig* rig_;
    int role_;
  };

  Rig() {
    gw.add(profile("gen"), std::make_shared<Tap>(this, 0));
    gw.add(profile("judge", BackendKind::ScriptedScorer), std::make_shared<Tap>(this, 1));
    gw.add(profile("pred"), std::make_shared<Tap>(this, 2));
  }

  std::size_t count(PromptId id) {
    return static_cast<std::size_t>(
        std::count_if(log.begin(), log.end(), [&](const Call& c) { return c.prompt == id; }));
  }
};

ScoreDistribution p3_of(double p3) { return ScoreDistribution::make(0.0, 1.0 - p3, p3); }

Candidate judged(CandidateCategory cat, double p3, std::optional<int> type = std::nullopt) {
  return Candidate{cat, "t", type, flag_utterance(p3_of(p3)), true, {}};
}

using C = CandidateCategory;

}  // namespace

TEST(SelectResponse, EarlierCategoryWinsOverHigherScore) {
  const std::vector<Candidate> c{judged(C::Cushion, 0.95, 1), judged(C::Key, 0.6, 2),
                                 judged(C::Vanilla, 0.99), judged(C::Safe, 0.99)};
  const auto s = select_response(c);
  EXPECT_EQ(s.index, 1u);
  EXPECT_FALSE(s.needs_rewrite);
}

TEST(SelectResponse, HighestScoreThenLowerTypeInsideCategory) {
  std::vector<Candidate> c{judged(C::Key, 0.7, 5), judged(C::Key, 0.8, 6), judged(C::Key, 0.8, 3)};
  EXPECT_EQ(select_response(c).index, 2u);
  c[2].verdict = flag_utterance(p3_of(0.3));
  EXPECT_EQ(select_response(c).index, 1u);
}

TEST(SelectResponse, FallsThroughToSafeFlaggedForRewrite) {
  const std::vector<Candidate> c{judged(C::Key, 0.2, 1), judged(C::Vanilla, 0.4), judged(C::Safe, 0.1)};
  const auto s = select_response(c);
  EXPECT_EQ(s.index, 2u);
  EXPECT_TRUE(s.needs_rewrite);
}

TEST(SelectResponse, NonAbruptSafeIsSelectedWithoutRewrite) {
  const std::vector<Candidate> c{judged(C::Key, 0.2, 1), judged(C::Safe, 0.51)};
  const auto s = select_response(c);
  EXPECT_EQ(s.index, 1u);
  EXPECT_FALSE(s.needs_rewrite);
}

TEST(SelectResponse, SkipsUnavailableAndUnjudgedCandidates) {
  std::vector<Candidate> c{judged(C::Key, 0.9, 1), judged(C::Cushion, 0.9, 1), judged(C::Vanilla, 0.6)};
  c[0].available = false;
  c[1].verdict.reset();
  EXPECT_EQ(select_response(c).index, 2u);
}

TEST(SelectResponse, WithoutSafePicksLeastAbruptCandidate) {
  std::vector<Candidate> c{judged(C::Vanilla, 0.3), judged(C::Cushion, 0.3, 4), judged(C::Key, 0.1, 1),
                           judged(C::Safe, 0.2)};
  c[3].available = false;
  const auto s = select_response(c);
  EXPECT_EQ(s.index, 1u);
  EXPECT_TRUE(s.needs_rewrite);
}

TEST(SelectResponse, EmptyOrAllUnavailableThrows) {
  EXPECT_THROW(select_response({}), NoCandidates);
  auto c = judged(C::Safe, 0.9);
  c.available = false;
  EXPECT_THROW(select_response({c}), NoCandidates);
}

TEST(ParsePrototypeOutput, ExtractsUtteranceField) {
  EXPECT_EQ(parse_prototype_output("TOPIC: a\nQUESTION: b\nUTTERANCE: Do you like boats?", 1),
            "Do you like boats?");
  EXPECT_EQ(parse_prototype_output("- UTTERANCE: {\"Any sonar gear?\"}", 1), "Any sonar gear?");
  EXPECT_EQ(parse_prototype_output("UTTERANCE:\n\n  On the next line.", 1), "On the next line.");
}

TEST(ParsePrototypeOutput, MissingFieldNamesTheType) {
  try {
    parse_prototype_output("TOPIC: a\nQUESTION: b", 3);
    FAIL();
  } catch (const UnparsableProtoOutput& e) {
    EXPECT_NE(std::string(e.what()).find("type 3"), std::string::npos);
  }
  EXPECT_THROW(parse_prototype_output("UTTERANCE:", 2), UnparsableProtoOutput);
}

TEST(Policy, ValidationNamesMissingProfiles) {
  Rig rig;
  auto p = policy(PolicyKind::Framework);
  p.scorer.clear();
  EXPECT_THROW(p.validate(rig.gw), ConfigError);
  p = policy(PolicyKind::Standard);
  p.generator = "ghost";
  EXPECT_THROW(p.validate(rig.gw), ConfigError);
  EXPECT_EQ(policy(PolicyKind::PromptBased).system_label(), "prompt_based");
  EXPECT_EQ(policy(PolicyKind::Strategy, "ours").system_label(), "ours");
}

TEST(OpenSession, StrategyPreparesAndRanksSevenPrototypes) {
  Rig rig;
  Engine engine(rig.gw, registry());
  const auto s = engine.open_session(fishing_setup(), policy(PolicyKind::Strategy), 7);
  ASSERT_EQ(s.prototypes.size(), 7u);
  for (int id = 1; id <= 7; ++id) {
    EXPECT_EQ(s.prototypes[id - 1].type_id, id);
    EXPECT_EQ(s.prototypes[id - 1].text.rfind("Prototype " + std::to_string(id), 0), 0u);
  }
  ASSERT_TRUE(s.ranking);
  EXPECT_EQ(s.ranking->selected.size(), 4u);
  EXPECT_EQ(s.selected_prototypes().size(), 4u);
  EXPECT_EQ(rig.count(PromptId::PrepareKey), 7u);
  EXPECT_EQ(rig.count(PromptId::EvalKey), 7u);
  EXPECT_EQ(s.transcript.utterances.size(), 1u);
}

TEST(OpenSession, BaselinesMakeNoCalls) {
  Rig rig;
  Engine engine(rig.gw, registry());
  for (auto kind : {PolicyKind::Standard, PolicyKind::PromptBased, PolicyKind::Framework}) {
    const auto s = engine.open_session(fishing_setup(), policy(kind), 1);
    EXPECT_TRUE(s.prototypes.empty());
    EXPECT_FALSE(s.ranking);
  }
  EXPECT_TRUE(rig.log.empty());
}

TEST(OpenSession, UnparsablePrototypeFailsTheSession) {
  Rig rig;
  rig.gen = [](std::string_view) { return std::string("no field here"); };
  Engine engine(rig.gw, registry());
  EXPECT_THROW(engine.open_session(fishing_setup(), policy(PolicyKind::Strategy), 1), UnparsableProtoOutput);
}

TEST(Turn, BaselinesUseOneGenerationWithTheirPrompt) {
  Rig rig;
  Engine engine(rig.gw, registry());
  auto standard = engine.open_session(fishing_setup(), policy(PolicyKind::Standard), 1);
  auto t = engine.system_turn(standard, "I like lakes.");
  EXPECT_EQ(t.candidates.size(), 1u);
  EXPECT_EQ(t.chosen().text.rfind("Vanilla line", 0), 0u);
  EXPECT_EQ(rig.count(PromptId::Vanilla), 1u);

  auto prompt_based = engine.open_session(fishing_setup(), policy(PolicyKind::PromptBased), 1);
  t = engine.system_turn(prompt_based, "I like lakes.");
  EXPECT_EQ(t.chosen().text.rfind("Insight line", 0), 0u);
  EXPECT_EQ(rig.count(PromptId::Insight), 1u);
  EXPECT_EQ(rig.count(PromptId::Predict), 0u);
  EXPECT_EQ(prompt_based.transcript.utterances.size(), 3u);
}

TEST(Turn, FrameworkKeepsNonAbruptLine) {
  Rig rig;
  rig.score = [](std::string_view) { return p3_of(0.8); };
  Engine engine(rig.gw, registry());
  auto s = engine.open_session(fishing_setup(), policy(PolicyKind::Framework), 1);
  const auto t = engine.system_turn(s, "Hello.");
  ASSERT_EQ(t.candidates.size(), 1u);
  EXPECT_TRUE(t.chosen().verdict->non_abrupt);
  EXPECT_EQ(rig.count(PromptId::Rewrite), 0u);
}

TEST(Turn, FrameworkRewritesAbruptLineOnce) {
  Rig rig;
  rig.score = [](std::string_view) { return p3_of(0.1); };
  Engine engine(rig.gw, registry());
  auto s = engine.open_session(fishing_setup(), policy(PolicyKind::Framework), 1);
  const auto t = engine.system_turn(s, "Hello.");
  ASSERT_EQ(t.candidates.size(), 2u);
  EXPECT_EQ(t.selected, 1u);
  EXPECT_EQ(t.chosen().category, C::VanillaRewritten);
  EXPECT_FALSE(t.chosen().verdict);
  EXPECT_EQ(rig.count(PromptId::Rewrite), 1u);
  EXPECT_EQ(s.transcript.utterances.back().text, t.chosen().text);
}

TEST(Turn, JudgeFailureEmitsUnjudgedWithWarning) {
  Rig rig;
  rig.score = [](std::string_view) -> ScoreDistribution { throw TransportError("scorer down"); };
  Engine engine(rig.gw, registry());
  auto s = engine.open_session(fishing_setup(), policy(PolicyKind::Framework), 1);
  const auto t = engine.system_turn(s, "Hello.");
  EXPECT_EQ(t.candidates.size(), 1u);
  ASSERT_EQ(t.warnings.size(), 1u);
  EXPECT_NE(t.warnings[0].find("emitted unjudged"), std::string::npos);
}

TEST(Turn, StrategyBuildsTenCandidatesAndPrefersKeys) {
  Rig rig;
  rig.score = [](std::string_view p) {
    const auto line = judged_line(p);
    return p3_of(line.rfind("Key line", 0) == 0 ? 0.7 : line.rfind("Prototype", 0) == 0 ? 0.5 : 0.9);
  };
  Engine engine(rig.gw, registry());
  auto s = engine.open_session(fishing_setup(), policy(PolicyKind::Strategy), 3);
  const auto t = engine.system_turn(s, "I fish on weekends.");
  ASSERT_EQ(t.candidates.size(), 10u);
  std::map<C, int> per;
  for (const auto& c : t.candidates) ++per[c.category];
  EXPECT_EQ(per[C::Key], 4);
  EXPECT_EQ(per[C::Cushion], 4);
  EXPECT_EQ(per[C::Vanilla], 1);
  EXPECT_EQ(per[C::Safe], 1);
  EXPECT_EQ(t.chosen().category, C::Key);
  // All prototypes tie, so the four lowest type ids are selected and the
  // lowest wins the key tie.
  EXPECT_EQ(s.ranking->selected, (std::vector<int>{1, 2, 3, 4}));
  EXPECT_EQ(t.chosen().relationship_type, 1);
  EXPECT_EQ(rig.count(PromptId::Predict), 1u);
}

TEST(Turn, StrategyRewritesSafeWhenEverythingIsAbrupt) {
  Rig rig;
  rig.score = [](std::string_view) { return p3_of(0.2); };
  Engine engine(rig.gw, registry());
  auto s = engine.open_session(fishing_setup(), policy(PolicyKind::Strategy), 3);
  const auto t = engine.system_turn(s, "I fish on weekends.");
  ASSERT_EQ(t.candidates.size(), 11u);
  EXPECT_EQ(t.chosen().category, C::SafeRewritten);
  EXPECT_EQ(rig.count(PromptId::SafeRewrite), 1u);
}

TEST(Turn, CandidateFailuresAreIsolated) {
  Rig rig;
  rig.gen = [](std::string_view p) {
    if (registry().identify(p) == PromptId::GenCushion) throw TransportError("cushion outage");
    return synthetic_generate(p);
  };
  Engine engine(rig.gw, registry());
  auto s = engine.open_session(fishing_setup(), policy(PolicyKind::Strategy), 3);
  const auto t = engine.system_turn(s, "Hi.");
  int unavailable = 0;
  for (const auto& c : t.candidates)
    if (!c.available) {
      ++unavailable;
      EXPECT_EQ(c.category, C::Cushion);
      EXPECT_NE(c.error.find("cushion outage"), std::string::npos);
    }
  EXPECT_EQ(unavailable, 4);
  EXPECT_NE(t.chosen().category, C::Cushion);
}

TEST(Turn, AllCandidatesFailingFailsTheTurn) {
  Rig rig;
  Engine engine(rig.gw, registry());
  auto s = engine.open_session(fishing_setup(), policy(PolicyKind::Strategy), 3);
  rig.gen = [](std::string_view) -> std::string { throw TransportError("down"); };
  EXPECT_THROW(engine.system_turn(s, "Hi."), TurnFailed);
  EXPECT_EQ(s.transcript.utterances.size(), 2u);
  EXPECT_TRUE(s.traces.empty());
}

TEST(Turn, GeneratorFailureNamesTheLine) {
  Rig rig;
  rig.gen = [](std::string_view) -> std::string { throw TransportError("down"); };
  Engine engine(rig.gw, registry());
  auto s = engine.open_session(fishing_setup(), policy(PolicyKind::Standard), 3);
  try {
    engine.system_turn(s, "Hi.");
    FAIL();
  } catch (const TurnFailed& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("TransportError"), std::string::npos);
  }
}

TEST(Belief, AcquisitionSwitchesToTopicOnlyTurns) {
  Rig rig;
  rig.predict = [](std::string_view p) {
    return std::string(p.find("USER: I love my headphones.") != std::string_view::npos ? "Q1: 3/Yes"
                                                                                       : "Q1: 1/CannotGuess");
  };
  rig.score = [](std::string_view) { return p3_of(0.9); };
  Engine engine(rig.gw, registry());
  auto s = engine.open_session(fishing_setup(), policy(PolicyKind::Strategy), 5);
  engine.system_turn(s, "Hello.");
  EXPECT_EQ(s.belief.state, BeliefState::Acquiring);

  auto t = engine.system_turn(s, "I love my headphones.");
  EXPECT_EQ(s.belief, AcquisitionBelief::acquired(Answer::Yes, 4));
  EXPECT_EQ(t.belief_before.state, BeliefState::Acquiring);
  EXPECT_EQ(t.belief_after.state, BeliefState::Acquired);
  ASSERT_EQ(t.candidates.size(), 1u);
  EXPECT_EQ(t.chosen().category, C::Safe);

  rig.log.clear();
  rig.score = [](std::string_view) { return p3_of(0.1); };
  t = engine.system_turn(s, "Anyway.");
  EXPECT_EQ(t.chosen().category, C::SafeRewritten);
  EXPECT_EQ(rig.log.size(), 3u);
  EXPECT_EQ(rig.count(PromptId::Predict), 0u);
  EXPECT_EQ(rig.count(PromptId::RewriteKey), 0u);
  EXPECT_EQ(s.belief_timeline.size(), 3u);
  EXPECT_FALSE(s.belief_timeline.back().prediction);
}

TEST(Belief, UnparsablePredictionIsIgnoredWithWarning) {
  Rig rig;
  rig.predict = [](std::string_view) { return std::string("I think so"); };
  Engine engine(rig.gw, registry());
  auto s = engine.open_session(fishing_setup(), policy(PolicyKind::Framework), 5);
  engine.system_turn(s, "Hello.");
  EXPECT_EQ(s.belief.state, BeliefState::Acquiring);
  ASSERT_EQ(s.warnings.size(), 1u);
  EXPECT_EQ(s.warnings[0].rfind("line 2: prediction ignored", 0), 0u);
  EXPECT_FALSE(s.belief_timeline[0].warning.empty());
}

TEST(Belief, CannotGuessKeepsAcquiring) {
  Rig rig;
  Engine engine(rig.gw, registry());
  auto s = engine.open_session(fishing_setup(), policy(PolicyKind::Framework), 5);
  engine.system_turn(s, "Hello.");
  EXPECT_EQ(s.belief_timeline[0].prediction, Prediction::CannotGuess);
  EXPECT_EQ(s.belief.state, BeliefState::Acquiring);
}

TEST(Protocol, TurnOrderAndLineBudget) {
  Rig rig;
  Engine engine(rig.gw, registry());
  auto s = engine.open_session(fishing_setup(), policy(PolicyKind::Standard), 5);
  EXPECT_THROW(engine.respond(s), ProtocolError);
  for (int i = 0; i < kMaxSystemTurns; ++i) engine.system_turn(s, "user " + std::to_string(i));
  EXPECT_EQ(s.transcript.utterances.size(), 17u);
  EXPECT_THROW(engine.system_turn(s, "more"), LineBudgetExhausted);
  engine.append_user(s, "bye");
  EXPECT_TRUE(s.finished());
  EXPECT_THROW(engine.append_user(s, "again"), ProtocolError);
  EXPECT_TRUE(validate_transcript(s.transcript).empty());
}

TEST(Determinism, CallSeedsDeriveFromSessionSeedAndLine) {
  Rig rig;
  Engine engine(rig.gw, registry());
  auto s = engine.open_session(fishing_setup(), policy(PolicyKind::Strategy), 11);
  for (const auto& c : rig.log) EXPECT_EQ(c.seed, 11u * 1000003u);
  rig.log.clear();
  engine.system_turn(s, "Hi.");
  for (const auto& c : rig.log) {
    if (c.prompt == PromptId::Predict)
      EXPECT_EQ(c.seed, 11u * 1000003u + 2u);
    else
      EXPECT_EQ(c.seed, 11u * 1000003u + 3u);
  }
}

TEST(Determinism, ParallelCandidatesMatchSequentialRun) {
  auto run = [](std::size_t width) {
    auto gw = synthetic_gateway();
    EngineOptions opt;
    opt.parallelism = width;
    Engine engine(*gw, registry(), opt);
    auto s = engine.open_session(fishing_setup(), policy(PolicyKind::Strategy), 9);
    for (int i = 0; i < 4; ++i) engine.system_turn(s, "user " + std::to_string(i));
    return json(s);
  };
  EXPECT_EQ(run(1), run(4));
}

TEST(SessionJson, RoundTrips) {
  auto gw = synthetic_gateway();
  Engine engine(*gw, registry());
  auto s = engine.open_session(fishing_setup(), policy(PolicyKind::Strategy), 9, "chat-1");
  engine.system_turn(s, "Hello.");
  const json j = s;
  EXPECT_EQ(j.get<Session>(), s);
  EXPECT_EQ(j.at("id"), "chat-1");
  EXPECT_EQ(j.at("turns").size(), 1u);
  auto bad = j;
  bad["turns"][0]["selected"] = 99;
  EXPECT_THROW(bad.get<Session>(), InvalidValue);
}
