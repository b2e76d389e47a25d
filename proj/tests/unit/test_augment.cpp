#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "sentimtl/augment.hpp"
#include "sentimtl/error.hpp"
#include "testing.hpp"

using namespace sentimtl;
using sentimtl::testing::fixture;
using sentimtl::testing::read_file;
using sentimtl::testing::TempDir;

namespace {

Instance make(std::string id, Polarity p) {
  Instance i;
  i.id = std::move(id);
  i.sentence = "The waiter ignored us for an hour.";
  i.target = "waiter";
  i.polarity = p;
  i.implicit = true;
  return i;
}

/// Elements with reported confidences; polarity answers supplied per case.
constexpr const char* kElements = R"({"id":"*","template":"aspect","text":"waiter\nConfidence: 0.9"}
{"id":"*","template":"opinion","text":"ignored us\nConfidence: 0.3"}
{"id":"*","template":"feedback","text":"Reconsider: being ignored is not pleasant."}
)";

MockBackend script(const std::string& polarity_lines) {
  return MockBackend::from_jsonl(std::string(kElements) + polarity_lines);
}

RefineState state_for(const Instance& i) {
  RefineState s;
  s.instance = i;
  s.max_epochs = 3;
  return s;
}

}  // namespace

TEST(Prompt, AspectFirstEpochHasNoFeedback) {
  const Instance i = make("r", Polarity::negative);
  const std::string p = render_prompt(PromptKind::aspect, state_for(i));
  EXPECT_NE(p.find(i.sentence), std::string::npos);
  EXPECT_NE(p.find("waiter"), std::string::npos);
  EXPECT_EQ(p.find("Feedback:"), std::string::npos);
}

TEST(Prompt, FeedbackTemplateCarriesElementsAndWrongPrediction) {
  RefineState s = state_for(make("r", Polarity::negative));
  s.current_aspect = ScoredText{"the waiter", 0.9};
  s.current_opinion = ScoredText{"ignored us", 0.6};
  s.predicted_polarity = Polarity::positive;
  const std::string p = render_prompt(PromptKind::feedback, s);
  EXPECT_NE(p.find("the waiter"), std::string::npos);
  EXPECT_NE(p.find("ignored us"), std::string::npos);
  EXPECT_NE(p.find("positive"), std::string::npos);
  EXPECT_EQ(p.find("negative"), std::string::npos);
  EXPECT_EQ(render_prompt(PromptKind::feedback, s), p);
}

TEST(Prompt, LaterEpochsCarryFeedback) {
  RefineState s = state_for(make("r", Polarity::negative));
  s.epoch = 1;
  s.feedback = "Look again at the waiter.";
  const std::string p = render_prompt(PromptKind::aspect, s);
  EXPECT_NE(p.find("Feedback: Look again at the waiter."), std::string::npos);
}

TEST(Prompt, MissingFieldIsNamed) {
  const RefineState s = state_for(make("r", Polarity::negative));
  try {
    render_prompt(PromptKind::opinion, s);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("current_aspect"), std::string::npos);
  }
  EXPECT_THROW(render_prompt(PromptKind::verify_opinion, s), DataError);
}

TEST(Prompt, VerifyTemplateAsksBinaryQuestion) {
  RefineState s = state_for(make("r", Polarity::negative));
  s.current_aspect = ScoredText{"the waiter", 0.9};
  const std::string p = render_prompt(PromptKind::verify_aspect, s);
  EXPECT_NE(p.find("(A) reasonable (B) unreasonable"), std::string::npos);
}

TEST(PolarityAnswer, FirstLabelWord) {
  EXPECT_EQ(parse_polarity_answer("Positive."), Polarity::positive);
  EXPECT_EQ(parse_polarity_answer("I think: NEGATIVE, not neutral"), Polarity::negative);
  EXPECT_FALSE(parse_polarity_answer("I cannot tell"));
  EXPECT_FALSE(parse_polarity_answer("positively"));
}

TEST(Confidence, MarkovExamples) {
  BackendResponse r;
  r.token_logprobs = std::vector<TokenLogprob>{{"a", std::log(0.8)}, {"b", std::log(0.9)}};
  EXPECT_NEAR(estimate_confidence(r, ConfidenceMethod::markov_chain), std::sqrt(0.8 * 0.9), 1e-15);
  EXPECT_NEAR(estimate_confidence(r, ConfidenceMethod::markov_chain), 0.8485, 1e-4);
  r.token_logprobs = std::vector<TokenLogprob>{{"a", 0.0}, {"b", 0.0}, {"c", 0.0}};
  EXPECT_EQ(estimate_confidence(r, ConfidenceMethod::markov_chain), 1.0);
}

TEST(Confidence, MarkovInvariantUnderDuplication) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.05, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    BackendResponse r;
    r.token_logprobs.emplace();
    for (int k = 0; k < 1 + trial % 7; ++k) r.token_logprobs->push_back({"t", std::log(u(rng))});
    BackendResponse twice = r;
    for (const auto& t : *r.token_logprobs) twice.token_logprobs->push_back(t);
    EXPECT_NEAR(estimate_confidence(r, ConfidenceMethod::markov_chain),
                estimate_confidence(twice, ConfidenceMethod::markov_chain), 1e-14);
  }
}

TEST(Confidence, PromptPassThroughAndErrors) {
  BackendResponse r;
  r.reported_confidence = 0.92;
  EXPECT_EQ(estimate_confidence(r, ConfidenceMethod::prompt), 0.92);
  r.reported_confidence = 1.4;
  EXPECT_THROW(estimate_confidence(r, ConfidenceMethod::prompt), RangeError);
  r.reported_confidence.reset();
  try {
    estimate_confidence(r, ConfidenceMethod::prompt);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("prompt"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("reported_confidence"), std::string::npos);
  }
  try {
    estimate_confidence(r, ConfidenceMethod::markov_chain);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("token_logprobs"), std::string::npos);
  }
  EXPECT_THROW(estimate_confidence(r, ConfidenceMethod::choice_token), DataError);
}

TEST(Confidence, ChoiceTokenIsSelectedLetterProbability) {
  const BackendResponse first{"the waiter", std::nullopt, std::nullopt};
  const auto ask = [] {
    return BackendResponse{"(A) reasonable", std::vector<TokenLogprob>{{"(", -0.01}, {"A", std::log(0.7)}, {")", -0.2}},
                           std::nullopt};
  };
  EXPECT_NEAR(estimate_confidence(first, ConfidenceMethod::choice_token, ask), 0.7, 1e-15);
  const auto no_letter = [] { return BackendResponse{"yes", std::vector<TokenLogprob>{{"yes", -0.1}}, std::nullopt}; };
  EXPECT_THROW(estimate_confidence(first, ConfidenceMethod::choice_token, no_letter), DataError);
}

TEST(Confidence, Clip) {
  EXPECT_EQ(clip_confidence(0.3), 0.5);
  EXPECT_EQ(clip_confidence(0.85), 0.85);
  EXPECT_EQ(clip_confidence(0.5), 0.5);
  EXPECT_EQ(clip_confidence(0.0), 0.5);
  EXPECT_EQ(clip_confidence(1.0), 1.0);
  EXPECT_THROW(clip_confidence(-0.01), RangeError);
  EXPECT_THROW(clip_confidence(1.01), RangeError);
  EXPECT_THROW(clip_confidence(NAN), RangeError);
}

TEST(ConfidenceLine, SplitsLastMatch) {
  const auto [text, c] = split_confidence_line("waiter\nconfidence: 0.4\nCONFIDENCE : .75 ");
  EXPECT_EQ(text, "waiter");
  EXPECT_EQ(c, 0.75);
  const auto [plain, none] = split_confidence_line("just text");
  EXPECT_EQ(plain, "just text");
  EXPECT_FALSE(none);
}

TEST(RefineLoop, ImmediateConsensus) {
  MockBackend mock = script(R"({"id":"*","template":"polarity","text":"negative"})");
  const Instance out = run_refine_loop(make("r", Polarity::negative), mock, ConfidenceMethod::prompt, 3);
  ASSERT_TRUE(out.aux);
  EXPECT_EQ(out.aux->refine_epochs_used, 1);
  EXPECT_TRUE(out.aux->consensus_reached);
  EXPECT_EQ(mock.calls(PromptKind::feedback), 0u);
  EXPECT_EQ(out.aux->aspect, "waiter");
  EXPECT_EQ(out.aux->aspect_confidence, 0.9);
  EXPECT_EQ(out.aux->opinion_confidence, 0.5);
}

TEST(RefineLoop, NeverConsensus) {
  MockBackend mock = script(R"({"id":"*","template":"polarity","text":"positive"})");
  const Instance out = run_refine_loop(make("r", Polarity::negative), mock, ConfidenceMethod::prompt, 3);
  EXPECT_EQ(out.aux->refine_epochs_used, 3);
  EXPECT_FALSE(out.aux->consensus_reached);
  EXPECT_EQ(mock.calls(PromptKind::feedback), 3u);
  EXPECT_EQ(mock.calls(PromptKind::polarity), 3u);
  EXPECT_EQ(mock.total_calls(), 3u * 3 + 3);
}

TEST(RefineLoop, ConsensusAtSecondEpoch) {
  MockBackend mock = script(R"({"id":"*","template":"polarity","epoch":0,"text":"positive"}
{"id":"*","template":"polarity","epoch":1,"text":"negative"})");
  const Instance out = run_refine_loop(make("r", Polarity::negative), mock, ConfidenceMethod::prompt, 3);
  EXPECT_EQ(out.aux->refine_epochs_used, 2);
  EXPECT_TRUE(out.aux->consensus_reached);
  EXPECT_EQ(mock.calls(PromptKind::feedback), 1u);
}

TEST(RefineLoop, KeepsLastEpochElements) {
  MockBackend mock = MockBackend::from_jsonl(R"({"id":"*","template":"aspect","epoch":0,"text":"hour\nConfidence: 0.6"}
{"id":"*","template":"aspect","text":"waiter\nConfidence: 0.95"}
{"id":"*","template":"opinion","text":"ignored us\nConfidence: 0.8"}
{"id":"*","template":"feedback","text":"no"}
{"id":"*","template":"polarity","text":"neutral"})");
  const Instance out = run_refine_loop(make("r", Polarity::negative), mock, ConfidenceMethod::prompt, 2);
  EXPECT_EQ(out.aux->aspect, "waiter");
  EXPECT_EQ(out.aux->aspect_confidence, 0.95);
}

TEST(RefineLoop, UnparsableAnswerCountsAsMismatch) {
  MockBackend mock = script(R"({"id":"*","template":"polarity","epoch":0,"text":"hard to say"}
{"id":"*","template":"polarity","epoch":1,"text":"negative"})");
  const Instance out = run_refine_loop(make("r", Polarity::negative), mock, ConfidenceMethod::prompt, 3);
  EXPECT_EQ(out.aux->refine_epochs_used, 2);
  EXPECT_EQ(mock.calls(PromptKind::feedback), 1u);
}

TEST(RefineLoop, QueryCountProperty) {
  std::mt19937_64 rng(17);
  const std::vector<std::string> answers = {"positive", "negative", "neutral", "unsure"};
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t E = 1 + rng() % 5;
    std::string lines;
    std::vector<std::string> per_epoch;
    for (std::size_t e = 0; e < E; ++e) {
      per_epoch.push_back(answers[rng() % answers.size()]);
      lines += R"({"id":"*","template":"polarity","epoch":)" + std::to_string(e) + R"(,"text":")" + per_epoch.back() +
               "\"}\n";
    }
    std::size_t used = E;
    bool consensus = false;
    for (std::size_t e = 0; e < E; ++e) {
      if (per_epoch[e] == "negative") {
        used = e + 1;
        consensus = true;
        break;
      }
    }
    const std::size_t feedback = consensus ? used - 1 : used;
    MockBackend mock = script(lines);
    const Instance out = run_refine_loop(make("r", Polarity::negative), mock, ConfidenceMethod::prompt, E);
    EXPECT_EQ(out.aux->refine_epochs_used, static_cast<int>(used));
    EXPECT_EQ(out.aux->consensus_reached, consensus);
    EXPECT_LE(static_cast<std::size_t>(out.aux->refine_epochs_used), E);
    EXPECT_EQ(mock.calls(PromptKind::feedback), feedback);
    EXPECT_EQ(mock.total_calls(), 3 * used + feedback);
  }
}

TEST(RefineLoop, AllMethodsFromFixtureScript) {
  const Dataset raw = load_jsonl(fixture("mini_raw.jsonl"));
  for (auto method : {ConfidenceMethod::prompt, ConfidenceMethod::markov_chain, ConfidenceMethod::choice_token}) {
    MockBackend mock = MockBackend::from_file(fixture("mock_consensus.jsonl"));
    const Instance out = run_refine_loop(raw[1], mock, method, 3);
    EXPECT_TRUE(out.aux->consensus_reached);
    double a = 0, o = 0;
    switch (method) {
      case ConfidenceMethod::prompt:
        a = 0.9, o = 0.5;
        break;
      case ConfidenceMethod::markov_chain:
        a = std::exp(-0.125), o = std::exp(-0.25);
        break;
      case ConfidenceMethod::choice_token:
        a = std::exp(-0.1054), o = 0.5;
        EXPECT_EQ(mock.calls(PromptKind::verify_aspect), 1u);
        break;
    }
    EXPECT_NEAR(out.aux->aspect_confidence, a, 1e-12) << to_string(method);
    EXPECT_NEAR(out.aux->opinion_confidence, o, 1e-12) << to_string(method);
  }
}

TEST(Augment, AlwaysCorrectMock) {
  const Dataset raw = load_jsonl(fixture("mini_raw.jsonl"));
  MockBackend mock = MockBackend::from_file(fixture("mock_consensus.jsonl"));
  const AugmentOutcome out = augment_dataset(raw, mock, ConfidenceMethod::prompt, 3);
  ASSERT_EQ(out.dataset.size(), 3u);
  EXPECT_TRUE(out.failures.empty());
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(out.dataset[i].id, raw[i].id);
    EXPECT_TRUE(out.dataset[i].aux->consensus_reached);
    EXPECT_GE(out.dataset[i].aux->aspect_confidence, 0.5);
    EXPECT_LE(out.dataset[i].aux->aspect_confidence, 1.0);
  }
}

TEST(Augment, ParallelismDoesNotChangeOutput) {
  std::vector<Instance> v;
  std::string lines = kElements;
  for (int i = 0; i < 40; ++i) {
    const Polarity p = kPolarities[i % 3];
    v.push_back(make("i" + std::to_string(i), p));
    const Polarity answer = i % 4 == 0 ? kPolarities[(i + 1) % 3] : p;
    lines += R"({"id":"i)" + std::to_string(i) + R"(","template":"polarity","text":")" + std::string(to_string(answer)) +
             "\"}\n";
  }
  const Dataset d("d", v);
  MockBackend m1 = MockBackend::from_jsonl(lines);
  MockBackend m4 = MockBackend::from_jsonl(lines);
  const auto serial = augment_dataset(d, m1, ConfidenceMethod::prompt, 2, 1);
  const auto parallel = augment_dataset(d, m4, ConfidenceMethod::prompt, 2, 4);
  EXPECT_EQ(serial.dataset, parallel.dataset);
  EXPECT_EQ(m1.total_calls(), m4.total_calls());
}

TEST(Augment, TimeoutGivesZeroAugmentedAndOneError) {
  MockBackend mock = MockBackend::from_jsonl(R"({"id":"*","template":"aspect","error":"timeout"})");
  const Dataset d("d", {make("t1", Polarity::negative)});
  try {
    augment_dataset(d, mock, ConfidenceMethod::prompt, 3);
    FAIL();
  } catch (const AugmentAbort& e) {
    EXPECT_EQ(e.outcome().dataset.size(), 0u);
    ASSERT_EQ(e.outcome().failures.size(), 1u);
    EXPECT_EQ(e.outcome().failures[0].id, "t1");
  }
}

TEST(Augment, FailureThreshold) {
  auto run = [](int failing) {
    std::vector<Instance> v;
    std::string lines = std::string(kElements) + R"({"id":"*","template":"polarity","text":"negative"})" + "\n";
    for (int i = 0; i < 20; ++i) {
      v.push_back(make("i" + std::to_string(i), Polarity::negative));
      if (i < failing) lines += R"({"id":"i)" + std::to_string(i) + R"(","template":"opinion","error":"timeout"})" + "\n";
    }
    MockBackend mock = MockBackend::from_jsonl(lines);
    return augment_dataset(Dataset("d", v), mock, ConfidenceMethod::prompt, 1, 3);
  };
  const auto one = run(1);
  EXPECT_EQ(one.dataset.size(), 19u);
  ASSERT_EQ(one.failures.size(), 1u);
  EXPECT_EQ(one.failures[0].id, "i0");
  EXPECT_EQ(run(2).failures.size(), 2u);
  EXPECT_THROW(run(3), AugmentAbort);
}

TEST(Augment, FailureReportIsJsonl) {
  TempDir dir;
  write_failure_report({{4, "x", "boom"}, {7, "y", "bang"}}, dir / "err.jsonl");
  EXPECT_EQ(read_file(dir / "err.jsonl"),
            "{\"index\":4,\"id\":\"x\",\"error\":\"boom\"}\n{\"index\":7,\"id\":\"y\",\"error\":\"bang\"}\n");
}

TEST(Augment, RejectsBadArguments) {
  MockBackend mock;
  EXPECT_THROW(augment_dataset(Dataset(), mock, ConfidenceMethod::prompt, 3), DataError);
  EXPECT_THROW(run_refine_loop(make("r", Polarity::negative), mock, ConfidenceMethod::prompt, 0), RangeError);
}
