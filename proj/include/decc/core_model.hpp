#pragma once

// Domain values shared by every stage of the reliability pipeline. Everything
// here is plain data: no I/O, no backend access. JSON (de)serialization lives
// next to each type so dataset, cache and report files share one schema.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace decc {

using json = nlohmann::json;

struct Choice {
  std::string label;
  std::string text;

  bool operator==(const Choice&) const = default;
};

struct Sample {
  std::string id;
  std::string dataset_id;
  std::string question;
  std::optional<std::string> image_ref;
  std::vector<Choice> choices;  // empty for short-answer tasks
  std::string gold_answer;
  std::optional<std::string> context;

  bool is_multiple_choice() const { return !choices.empty(); }
  bool operator==(const Sample&) const = default;
};

/// Synthetic option labels A, B, C, ... for datasets that only ship texts.
std::string synthetic_label(std::size_t index);

/// Returns every invariant violation; an empty list means the sample is valid.
std::vector<std::string> validate_sample(const Sample& s);

/// Label of the choice the gold answer refers to, if it resolves uniquely.
std::optional<std::string> resolve_gold_label(const Sample& s);

enum class DecodingMode { greedy, sampling };

struct GenerationParams {
  DecodingMode mode = DecodingMode::greedy;
  double temperature = 1.0;  // sampling only
  double nucleus_p = 1.0;    // sampling only
  int max_tokens = 256;
  std::optional<std::int64_t> seed;

  /// Greedy decoding discards temperature and nucleus_p.
  GenerationParams normalized() const;

  /// Equality after normalization.
  bool operator==(const GenerationParams& other) const;
};

std::vector<std::string> validate_params(const GenerationParams& p);

enum class AnswerRole { direct, vlm_reasoned, llm_reasoned, paraphrase_answer };

struct AgentAnswer {
  AnswerRole role = AnswerRole::direct;
  int iteration = 0;
  std::string raw_text;
  std::string normalized;
  std::optional<std::vector<double>> token_logprobs;
  std::optional<double> stated_confidence;

  bool operator==(const AgentAnswer&) const = default;
};

std::vector<std::string> validate_answer(const AgentAnswer& a);

struct SubQA {
  int index = 1;  // 1-based within its iteration
  int iteration = 1;
  std::string sub_question;
  std::string sub_answer;

  bool operator==(const SubQA&) const = default;
};

enum class Scenario {
  first_iter_agree,
  second_iter_agree,
  both_unchanged_trust_llm,
  both_changed_trust_vlm,
  single_agent,
};

struct ConsistencyTrace {
  std::optional<bool> cons_v1;
  std::optional<bool> cons_l1;
  std::optional<bool> cons_v2;
  std::optional<bool> cons_l2;
  Scenario scenario = Scenario::single_agent;
  bool verdict = false;

  bool operator==(const ConsistencyTrace&) const = default;
};

enum class Method {
  vlm_agent,
  vlm_agent_2iter,
  llm_agent,
  llm_agent_2iter,
  multi_agent,
  perplexity,
  numeric_conf,
  linguistic_conf,
  paraphrase,
};

inline constexpr Method kAllMethods[] = {
    Method::vlm_agent,   Method::vlm_agent_2iter, Method::llm_agent,
    Method::llm_agent_2iter, Method::multi_agent, Method::perplexity,
    Method::numeric_conf, Method::linguistic_conf, Method::paraphrase,
};

bool is_decc_method(Method m);
bool needs_vlm_reasoner(Method m);
bool needs_llm_reasoner(Method m);
bool always_second_iteration(Method m);

enum class Stage {
  decompose_1,
  subanswer_1,
  vlm_reason_1,
  llm_reason_1,
  decompose_2,
  subanswer_2,
  vlm_reason_2,
  llm_reason_2,
  direct_answer,
  paraphrase,
  baseline,
};

inline constexpr Stage kAllStages[] = {
    Stage::decompose_1,  Stage::subanswer_1, Stage::vlm_reason_1,
    Stage::llm_reason_1, Stage::decompose_2, Stage::subanswer_2,
    Stage::vlm_reason_2, Stage::llm_reason_2, Stage::direct_answer,
    Stage::paraphrase,   Stage::baseline,
};

bool is_first_iteration_stage(Stage s);
bool is_second_iteration_stage(Stage s);

struct StageError {
  Stage stage = Stage::direct_answer;
  std::string message;

  bool operator==(const StageError&) const = default;
};

struct ReliabilityRecord {
  std::string sample_id;
  std::string dataset_id;
  Method method = Method::multi_agent;
  bool verdict = false;
  bool correct = false;
  std::optional<ConsistencyTrace> trace;
  std::optional<std::map<std::string, double>> timings;
  // Scalar the verdict was thresholded from (perplexity, stated confidence,
  // inconsistent-paraphrase count). Used by threshold sweeps.
  std::optional<double> score;
  std::optional<StageError> error;
  std::vector<std::string> notes;

  bool errored() const { return error.has_value(); }
  bool operator==(const ReliabilityRecord&) const = default;
};

struct StageCost {
  Stage stage = Stage::decompose_1;
  std::uint64_t samples_touched = 0;
  double wall_seconds_total = 0.0;

  double per_sample_seconds() const {
    return samples_touched == 0 ? 0.0
                                : wall_seconds_total / static_cast<double>(samples_touched);
  }
  bool operator==(const StageCost&) const = default;
};

std::string_view to_string(DecodingMode m);
std::string_view to_string(AnswerRole r);
std::string_view to_string(Scenario s);
std::string_view to_string(Method m);
std::string_view to_string(Stage s);

DecodingMode parse_decoding_mode(std::string_view s);
AnswerRole parse_answer_role(std::string_view s);
Scenario parse_scenario(std::string_view s);
Method parse_method(std::string_view s);
Stage parse_stage(std::string_view s);

void to_json(json& j, const Choice& c);
void from_json(const json& j, Choice& c);
void to_json(json& j, const Sample& s);
void from_json(const json& j, Sample& s);
void to_json(json& j, const GenerationParams& p);
void from_json(const json& j, GenerationParams& p);
void to_json(json& j, const AgentAnswer& a);
void from_json(const json& j, AgentAnswer& a);
void to_json(json& j, const SubQA& q);
void from_json(const json& j, SubQA& q);
void to_json(json& j, const ConsistencyTrace& t);
void from_json(const json& j, ConsistencyTrace& t);
void to_json(json& j, const StageError& e);
void from_json(const json& j, StageError& e);
void to_json(json& j, const ReliabilityRecord& r);
void from_json(const json& j, ReliabilityRecord& r);
void to_json(json& j, const StageCost& c);
void from_json(const json& j, StageCost& c);

}  // namespace decc
