#include <gtest/gtest.h>

#include <algorithm>

#include "decc/core_model.hpp"
#include "decc/error.hpp"
#include "support.hpp"

using namespace decc;
using testing_support::Gen;

namespace {

Sample mc_sample() {
  Sample s;
  s.id = "q1";
  s.dataset_id = "aokvqa";
  s.question = "What bird is shown?";
  s.image_ref = "img/1.jpg";
  s.choices = {{"A", "ducks"}, {"B", "geese"}, {"C", "swans"}};
  s.gold_answer = "B";
  return s;
}

bool has_issue(const std::vector<std::string>& issues, const std::string& needle) {
  return std::any_of(issues.begin(), issues.end(),
                     [&](const std::string& i) { return i.find(needle) != std::string::npos; });
}

template <typename T>
T round_trip(const T& v) {
  const json j = v;
  return json::parse(j.dump()).get<T>();
}

// Random values for round-trip properties. Strings include quotes, unicode
// and control bytes that must survive escaping.
std::string rand_text(Gen& g) {
  static const std::vector<std::string> bits = {"a", "B", " ", "\"", "\\", "\n", "\xc3\xa9", "0", "?", "{x}"};
  std::string s;
  const int n = g.int_in(1, 12);
  for (int i = 0; i < n; ++i) s += g.pick(bits);
  return s;
}

Sample rand_sample(Gen& g) {
  Sample s;
  s.id = "id" + std::to_string(g.int_in(0, 1'000'000));
  s.dataset_id = rand_text(g);
  s.question = rand_text(g);
  if (g.bit()) s.image_ref = rand_text(g);
  if (g.bit()) s.context = rand_text(g);
  const int k = g.int_in(0, 5);
  for (int i = 0; i < k; ++i) s.choices.push_back({synthetic_label(static_cast<std::size_t>(i)), rand_text(g) + std::to_string(i)});
  s.gold_answer = k > 0 ? s.choices[g.index(s.choices.size())].label : rand_text(g);
  return s;
}

std::optional<bool> rand_flag(Gen& g) {
  if (g.bit()) return std::nullopt;
  return g.bit();
}

ReliabilityRecord rand_record(Gen& g) {
  ReliabilityRecord r;
  r.sample_id = rand_text(g);
  r.dataset_id = rand_text(g);
  r.method = kAllMethods[g.index(std::size(kAllMethods))];
  r.verdict = g.bit();
  r.correct = g.bit();
  if (g.bit()) {
    ConsistencyTrace t;
    t.cons_v1 = rand_flag(g);
    t.cons_l1 = rand_flag(g);
    t.cons_v2 = rand_flag(g);
    t.cons_l2 = rand_flag(g);
    t.scenario = static_cast<Scenario>(g.int_in(0, 4));
    t.verdict = g.bit();
    r.trace = t;
  }
  if (g.bit()) {
    std::map<std::string, double> m;
    for (int i = 0; i < g.int_in(0, 4); ++i) m[std::string(to_string(kAllStages[g.index(std::size(kAllStages))]))] = g.real_in(0, 100);
    r.timings = m;
  }
  if (g.bit()) r.score = g.real_in(-1e6, 1e6);
  if (g.bit()) r.error = StageError{kAllStages[g.index(std::size(kAllStages))], rand_text(g)};
  for (int i = 0; i < g.int_in(0, 3); ++i) r.notes.push_back(rand_text(g));
  return r;
}

}  // namespace

TEST(Sample, WellFormedMultipleChoiceIsValid) {
  EXPECT_TRUE(validate_sample(mc_sample()).empty());
}

TEST(Sample, GoldOutsideChoicesRejected) {
  auto s = mc_sample();
  s.gold_answer = "E";
  EXPECT_TRUE(has_issue(validate_sample(s), "gold not in choices"));
}

TEST(Sample, GoldMayNameTheChoiceText) {
  auto s = mc_sample();
  s.gold_answer = "Geese";
  EXPECT_TRUE(validate_sample(s).empty());
  EXPECT_EQ(resolve_gold_label(s), "B");
}

TEST(Sample, GoldMatchingTwoChoicesRejected) {
  auto s = mc_sample();
  s.choices = {{"A", "B"}, {"B", "geese"}};
  s.gold_answer = "B";
  EXPECT_TRUE(has_issue(validate_sample(s), "more than one"));
  EXPECT_FALSE(resolve_gold_label(s).has_value());
}

TEST(Sample, ShortAnswerWithoutChoicesIsValid) {
  Sample s;
  s.id = "m1";
  s.dataset_id = "mathvista";
  s.question = "How many bars exceed 10?";
  s.gold_answer = "12";
  EXPECT_TRUE(validate_sample(s).empty());
  EXPECT_FALSE(s.is_multiple_choice());
}

TEST(Sample, DuplicateChoicesAndEmptyFieldsRejected) {
  auto s = mc_sample();
  s.choices.push_back({"b", "other"});
  s.choices.push_back({"D", "GEESE"});
  s.question = "  ";
  const auto issues = validate_sample(s);
  EXPECT_TRUE(has_issue(issues, "duplicate choice label"));
  EXPECT_TRUE(has_issue(issues, "duplicate choice text"));
  EXPECT_TRUE(has_issue(issues, "question is empty"));
}

TEST(Sample, SyntheticLabels) {
  EXPECT_EQ(synthetic_label(0), "A");
  EXPECT_EQ(synthetic_label(3), "D");
  EXPECT_EQ(synthetic_label(25), "Z");
  EXPECT_EQ(synthetic_label(26), "AA");
  EXPECT_EQ(synthetic_label(27), "AB");
  EXPECT_EQ(synthetic_label(52), "BA");
}

TEST(Sample, PlainStringChoicesGetSyntheticLabels) {
  const auto j = json::parse(R"({"id":"w1","dataset_id":"winoground","question":"Which caption fits?",
    "choices":["a dog bites a man","a man bites a dog"],"gold_answer":"A"})");
  const auto s = j.get<Sample>();
  ASSERT_EQ(s.choices.size(), 2u);
  EXPECT_EQ(s.choices[0], (Choice{"A", "a dog bites a man"}));
  EXPECT_EQ(s.choices[1], (Choice{"B", "a man bites a dog"}));
  EXPECT_TRUE(validate_sample(s).empty());
}

TEST(Sample, RoundTripProperty) {
  Gen g(0x5a3b1e);
  for (int i = 0; i < 500; ++i) {
    const auto s = rand_sample(g);
    EXPECT_EQ(round_trip(s), s);
  }
}

TEST(GenerationParams, GreedyIgnoresSamplingKnobs) {
  GenerationParams a;
  a.temperature = 0.2;
  a.nucleus_p = 0.5;
  GenerationParams b;
  b.temperature = 1.7;
  EXPECT_EQ(a, b);
  EXPECT_EQ(json(a).dump(), json(b).dump());
  EXPECT_FALSE(json(a).contains("temperature"));
}

TEST(GenerationParams, SamplingKeepsKnobs) {
  GenerationParams a;
  a.mode = DecodingMode::sampling;
  a.temperature = 0.7;
  auto b = a;
  b.temperature = 0.8;
  EXPECT_FALSE(a == b);
  EXPECT_EQ(round_trip(a), a);
  EXPECT_EQ(json(a).at("temperature").get<double>(), 0.7);
}

TEST(GenerationParams, NormalizationIsIdempotentAndStable) {
  Gen g(42);
  for (int i = 0; i < 500; ++i) {
    GenerationParams p;
    p.mode = g.bit() ? DecodingMode::greedy : DecodingMode::sampling;
    p.temperature = g.real_in(0.01, 2.0);
    p.nucleus_p = g.real_in(0.01, 1.0);
    p.max_tokens = g.int_in(1, 4096);
    if (g.bit()) p.seed = g.int_in(0, 1 << 30);
    const auto n = p.normalized();
    EXPECT_EQ(json(n.normalized()).dump(), json(n).dump());
    EXPECT_EQ(json(p).dump(), json(n).dump());
    EXPECT_EQ(round_trip(p), p);
  }
}

TEST(GenerationParams, Validation) {
  GenerationParams p;
  p.max_tokens = 0;
  EXPECT_EQ(validate_params(p).size(), 1u);
  p.max_tokens = 16;
  p.mode = DecodingMode::sampling;
  p.temperature = 0.0;
  p.nucleus_p = 1.5;
  EXPECT_EQ(validate_params(p).size(), 2u);
}

TEST(AgentAnswer, Validation) {
  AgentAnswer a;
  a.iteration = 1;
  EXPECT_FALSE(validate_answer(a).empty());
  a.iteration = 0;
  EXPECT_TRUE(validate_answer(a).empty());
  AgentAnswer r{AnswerRole::llm_reasoned, 3, "A", "A", std::nullopt, std::nullopt};
  EXPECT_FALSE(validate_answer(r).empty());
  r.iteration = 2;
  EXPECT_TRUE(validate_answer(r).empty());
  a.stated_confidence = 120;
  EXPECT_FALSE(validate_answer(a).empty());
}

TEST(AgentAnswer, RoundTrip) {
  AgentAnswer a{AnswerRole::vlm_reasoned, 2, "B. geese", "B", std::vector<double>{-0.5, -0.01}, 87.5};
  EXPECT_EQ(round_trip(a), a);
  SubQA q{3, 2, "Is the bird white?", "yes"};
  EXPECT_EQ(round_trip(q), q);
}

TEST(Records, RoundTripProperty) {
  Gen g(0xfeed);
  for (int i = 0; i < 500; ++i) {
    const auto r = rand_record(g);
    EXPECT_EQ(round_trip(r), r);
  }
}

TEST(Records, FlagsSerializeAsBits) {
  ReliabilityRecord r;
  r.sample_id = "s";
  r.dataset_id = "d";
  r.verdict = true;
  const json j = r;
  EXPECT_EQ(j.at("verdict"), 1);
  EXPECT_EQ(j.at("correct"), 0);
  auto bad = j;
  bad["verdict"] = 2;
  EXPECT_THROW(bad.get<ReliabilityRecord>(), Error);
}

TEST(StageCost, PerSampleAndRoundTrip) {
  StageCost c{Stage::subanswer_2, 4, 3.0};
  EXPECT_DOUBLE_EQ(c.per_sample_seconds(), 0.75);
  EXPECT_EQ(round_trip(c), c);
  EXPECT_EQ((StageCost{Stage::baseline, 0, 0.0}).per_sample_seconds(), 0.0);
  auto j = json(c);
  j["wall_seconds_total"] = -1.0;
  EXPECT_THROW(j.get<StageCost>(), Error);
}

TEST(Enums, NamesRoundTrip) {
  for (auto m : kAllMethods) EXPECT_EQ(parse_method(to_string(m)), m);
  for (auto s : kAllStages) EXPECT_EQ(parse_stage(to_string(s)), s);
  for (int i = 0; i <= 4; ++i) EXPECT_EQ(parse_scenario(to_string(static_cast<Scenario>(i))), static_cast<Scenario>(i));
  for (int i = 0; i <= 3; ++i) EXPECT_EQ(parse_answer_role(to_string(static_cast<AnswerRole>(i))), static_cast<AnswerRole>(i));
  EXPECT_THROW(parse_method("multi-agent"), Error);
  EXPECT_THROW(parse_stage(""), Error);
}

TEST(Methods, Classification) {
  EXPECT_TRUE(is_decc_method(Method::multi_agent));
  EXPECT_FALSE(is_decc_method(Method::paraphrase));
  EXPECT_TRUE(needs_vlm_reasoner(Method::multi_agent));
  EXPECT_TRUE(needs_llm_reasoner(Method::multi_agent));
  EXPECT_FALSE(needs_llm_reasoner(Method::vlm_agent_2iter));
  EXPECT_TRUE(always_second_iteration(Method::llm_agent_2iter));
  EXPECT_FALSE(always_second_iteration(Method::multi_agent));
  int first = 0, second = 0;
  for (auto s : kAllStages) {
    first += is_first_iteration_stage(s);
    second += is_second_iteration_stage(s);
    EXPECT_FALSE(is_first_iteration_stage(s) && is_second_iteration_stage(s));
  }
  EXPECT_EQ(first, 4);
  EXPECT_EQ(second, 4);
}
