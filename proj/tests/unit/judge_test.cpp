#include <gtest/gtest.h>

#include "support.hpp"

using namespace pivot;
using namespace pivot::testing;

namespace {

// Gateway whose backends record the last prompt they saw.
struct Recorder {
  std::string prompt;
  std::string reply = "Yes";
  double p3 = 0.7;
  Gateway gw;
  CallCounter calls;

  Recorder() {
    gw.add(profile("gen"), std::make_shared<FunctionBackend>(
                               [this](std::string_view p) {
                                 prompt = p;
                                 return reply;
                               },
                               nullptr));
    gw.add(profile("judge", BackendKind::ScriptedScorer),
           std::make_shared<FunctionBackend>(nullptr, [this](std::string_view p) {
             prompt = p;
             return ScoreDistribution::make(0.0, 1.0 - p3, p3);
           }));
  }

  ModelContext ctx() { return ModelContext{&gw, &registry(), &calls, {}, kDefaultThreshold}; }
};

}  // namespace

TEST(FlagUtterance, StrictlyAboveThreshold) {
  EXPECT_FALSE(flag_utterance(ScoreDistribution::make(0.0, 0.5, 0.5)).non_abrupt);
  EXPECT_TRUE(flag_utterance(ScoreDistribution::make(0.0, 0.49, 0.51)).non_abrupt);
  EXPECT_TRUE(flag_utterance(ScoreDistribution::make(0.0, 0.0, 1.0), 0.99).non_abrupt);
  EXPECT_FALSE(flag_utterance(ScoreDistribution::make(0.0, 0.0, 1.0), 1.0).non_abrupt);
  EXPECT_THROW(flag_utterance(ScoreDistribution{}, 1.5), InvalidThreshold);
  EXPECT_THROW(flag_utterance(ScoreDistribution{}, -0.1), InvalidThreshold);
}

TEST(CleanReply, StripsChatbotFraming) {
  EXPECT_EQ(clean_reply("5 CHATBOT: Do you fish at night?"), "Do you fish at night?");
  EXPECT_EQ(clean_reply("Sure!\n{7} CHATBOT: \"Nice catch.\""), "Nice catch.");
  EXPECT_EQ(clean_reply("\"Plain reply\""), "Plain reply");
  EXPECT_EQ(clean_reply("two\nlines"), "two lines");
  EXPECT_THROW(clean_reply("  \n "), EmptyGeneration);
}

TEST(ParseYesNo, FirstWordDecides) {
  EXPECT_TRUE(parse_yes_no("Yes."));
  EXPECT_FALSE(parse_yes_no(" no, because"));
  EXPECT_THROW(parse_yes_no("Perhaps"), UnparsableVerdict);
}

TEST(JudgeUtterance, AppendsTargetAsNextSystemLine) {
  Recorder r;
  const auto history = full_transcript().prefix(4).utterances;
  const auto v = judge_utterance(r.ctx(), "judge", Topic("Fishing"), history, "Target line?");
  EXPECT_TRUE(v.non_abrupt);
  EXPECT_NE(r.prompt.find("  5 CHATBOT: Target line?"), std::string::npos);
  EXPECT_NE(r.prompt.find("  - Fishing"), std::string::npos);
  EXPECT_EQ(registry().identify(r.prompt), PromptId::AbruptEval);
  EXPECT_EQ(r.calls.of("judge").score, 1u);
}

TEST(PredictAnswer, NeedsUserUtteranceAndParsesVerdict) {
  Recorder r;
  r.reply = "Q1: 3/No";
  EXPECT_THROW(predict_answer(r.ctx(), "gen", open_transcript(fishing_setup()), "Q?"), PreconditionError);
  const auto t = full_transcript().prefix(2);
  EXPECT_EQ(predict_answer(r.ctx(), "gen", t, "Do you fish?"), Prediction::No);
  EXPECT_NE(r.prompt.find("  Q1: Do you fish?"), std::string::npos);
  r.reply = "garbled";
  EXPECT_THROW(predict_answer(r.ctx(), "gen", t, "Do you fish?"), UnparsableVerdict);
}

TEST(JudgePrototype, SeesTopicAndUtteranceOnly) {
  Recorder r;
  r.p3 = 0.2;
  const auto v = judge_prototype(r.ctx(), "judge", Topic("Fishing"), "Do you use sonar gear?");
  EXPECT_FALSE(v.non_abrupt);
  EXPECT_EQ(registry().identify(r.prompt), PromptId::EvalKey);
  EXPECT_EQ(r.prompt.find("CHATBOT: Hi!"), std::string::npos);
  EXPECT_THROW(judge_prototype(r.ctx(), "judge", Topic("Fishing"), "  "), PreconditionError);
}

TEST(RankPrototypes, OrdersByP3ThenTypeId) {
  std::vector<PrototypeScore> s;
  const double p3[] = {0.2, 0.9, 0.5, 0.9, 0.1, 0.7, 0.5};
  for (int id = 1; id <= 7; ++id) s.push_back({id, ScoreDistribution::make(0, 1 - p3[id - 1], p3[id - 1])});
  const auto r = rank_prototypes(s);
  EXPECT_EQ(r.selected, (std::vector<int>{2, 4, 6, 3}));
  EXPECT_EQ(r.entries.back().type_id, 5);
  EXPECT_EQ(rank_prototypes(s, 2).selected, (std::vector<int>{2, 4}));
}

TEST(RankPrototypes, RejectsWrongArityDuplicatesAndAnalysisTypes) {
  std::vector<PrototypeScore> s;
  for (int id = 1; id <= 6; ++id) s.push_back({id, {}});
  EXPECT_THROW(rank_prototypes(s), ArityError);
  s.push_back({6, {}});
  EXPECT_THROW(rank_prototypes(s), DuplicateType);
  s.back().type_id = 8;
  EXPECT_THROW(rank_prototypes(s), InvalidValue);
}

TEST(Explanation, MarksKeyLineAndParsesReplies) {
  Recorder r;
  const auto t = full_transcript();
  EXPECT_TRUE(detect_explanation(r.ctx(), "gen", Topic("Fishing"), "Q?", t, 5));
  EXPECT_NE(r.prompt.find("*5 CHATBOT: system line 5"), std::string::npos);
  EXPECT_EQ(r.prompt.find("6 USER"), std::string::npos);
  EXPECT_EQ(registry().identify(r.prompt), PromptId::EvalReason);

  r.reply = "5 CHATBOT: Because gear matters, do you care about audio?";
  EXPECT_EQ(add_explanation(r.ctx(), "gen", Topic("Fishing"), "Q?", t, 5),
            "Because gear matters, do you care about audio?");
  EXPECT_THROW(detect_explanation(r.ctx(), "gen", Topic("Fishing"), "Q?", t, 4), PreconditionError);
  EXPECT_THROW(detect_explanation(r.ctx(), "gen", Topic("Fishing"), "Q?", t, 40), IndexError);
}
