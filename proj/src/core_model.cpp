#include "decc/core_model.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <set>
#include <utility>

#include "decc/error.hpp"
#include "text_util.hpp"

namespace decc {
namespace {

template <typename E, std::size_t N>
using NameTable = std::array<std::pair<E, std::string_view>, N>;

constexpr NameTable<DecodingMode, 2> kModeNames{{
    {DecodingMode::greedy, "greedy"},
    {DecodingMode::sampling, "sampling"},
}};

constexpr NameTable<AnswerRole, 4> kRoleNames{{
    {AnswerRole::direct, "direct"},
    {AnswerRole::vlm_reasoned, "vlm_reasoned"},
    {AnswerRole::llm_reasoned, "llm_reasoned"},
    {AnswerRole::paraphrase_answer, "paraphrase_answer"},
}};

constexpr NameTable<Scenario, 5> kScenarioNames{{
    {Scenario::first_iter_agree, "first_iter_agree"},
    {Scenario::second_iter_agree, "second_iter_agree"},
    {Scenario::both_unchanged_trust_llm, "both_unchanged_trust_llm"},
    {Scenario::both_changed_trust_vlm, "both_changed_trust_vlm"},
    {Scenario::single_agent, "single_agent"},
}};

constexpr NameTable<Method, 9> kMethodNames{{
    {Method::vlm_agent, "vlm_agent"},
    {Method::vlm_agent_2iter, "vlm_agent_2iter"},
    {Method::llm_agent, "llm_agent"},
    {Method::llm_agent_2iter, "llm_agent_2iter"},
    {Method::multi_agent, "multi_agent"},
    {Method::perplexity, "perplexity"},
    {Method::numeric_conf, "numeric_conf"},
    {Method::linguistic_conf, "linguistic_conf"},
    {Method::paraphrase, "paraphrase"},
}};

constexpr NameTable<Stage, 11> kStageNames{{
    {Stage::decompose_1, "decompose_1"},
    {Stage::subanswer_1, "subanswer_1"},
    {Stage::vlm_reason_1, "vlm_reason_1"},
    {Stage::llm_reason_1, "llm_reason_1"},
    {Stage::decompose_2, "decompose_2"},
    {Stage::subanswer_2, "subanswer_2"},
    {Stage::vlm_reason_2, "vlm_reason_2"},
    {Stage::llm_reason_2, "llm_reason_2"},
    {Stage::direct_answer, "direct_answer"},
    {Stage::paraphrase, "paraphrase"},
    {Stage::baseline, "baseline"},
}};

template <typename E, std::size_t N>
std::string_view name_of(const NameTable<E, N>& table, E value) {
  for (const auto& [e, name] : table) {
    if (e == value) return name;
  }
  return "unknown";
}

template <typename E, std::size_t N>
E parse_name(const NameTable<E, N>& table, std::string_view s, std::string_view what) {
  for (const auto& [e, name] : table) {
    if (name == s) return e;
  }
  throw Error(ErrorCode::validation,
              "unknown " + std::string(what) + " '" + std::string(s) + "'");
}

std::string fold(std::string_view s) { return text::to_lower(text::trim(s)); }

json flag(bool b) { return b ? 1 : 0; }

bool read_flag(const json& j) {
  if (j.is_boolean()) return j.get<bool>();
  if (j.is_number_integer()) {
    auto v = j.get<std::int64_t>();
    if (v == 0 || v == 1) return v == 1;
  }
  throw Error(ErrorCode::validation, "expected binary flag (0/1), got " + j.dump());
}

std::optional<bool> read_optional_flag(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return read_flag(j.at(key));
}

template <typename T>
std::optional<T> read_optional(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<T>();
}

}  // namespace

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::validation: return "ValidationError";
    case ErrorCode::config: return "ConfigError";
    case ErrorCode::io: return "IoError";
    case ErrorCode::transport_transient: return "TransientTransportError";
    case ErrorCode::transport: return "TransportError";
    case ErrorCode::protocol: return "ProtocolError";
    case ErrorCode::capability: return "CapabilityError";
    case ErrorCode::empty_input: return "EmptyInput";
    case ErrorCode::bad_counts: return "BadCounts";
    case ErrorCode::empty_logprobs: return "EmptyLogprobs";
    case ErrorCode::positive_logprob: return "PositiveLogprob";
    case ErrorCode::role_mismatch: return "RoleMismatch";
    case ErrorCode::missing_second_iteration: return "MissingSecondIteration";
    case ErrorCode::inconsistent_input: return "InconsistentInput";
    case ErrorCode::wrong_paraphrase_count: return "WrongParaphraseCount";
    case ErrorCode::unbound_placeholder: return "UnboundPlaceholder";
    case ErrorCode::missing_scores: return "MissingScores";
    case ErrorCode::usage: return "UsageError";
  }
  return "Error";
}

std::string_view to_string(DecodingMode m) { return name_of(kModeNames, m); }
std::string_view to_string(AnswerRole r) { return name_of(kRoleNames, r); }
std::string_view to_string(Scenario s) { return name_of(kScenarioNames, s); }
std::string_view to_string(Method m) { return name_of(kMethodNames, m); }
std::string_view to_string(Stage s) { return name_of(kStageNames, s); }

DecodingMode parse_decoding_mode(std::string_view s) { return parse_name(kModeNames, s, "decoding mode"); }
AnswerRole parse_answer_role(std::string_view s) { return parse_name(kRoleNames, s, "answer role"); }
Scenario parse_scenario(std::string_view s) { return parse_name(kScenarioNames, s, "scenario"); }
Method parse_method(std::string_view s) { return parse_name(kMethodNames, s, "method"); }
Stage parse_stage(std::string_view s) { return parse_name(kStageNames, s, "stage"); }

std::string synthetic_label(std::size_t index) {
  // A..Z, then AA, AB, ... for very long option lists.
  std::string label;
  std::size_t n = index + 1;
  while (n > 0) {
    --n;
    label.insert(label.begin(), static_cast<char>('A' + n % 26));
    n /= 26;
  }
  return label;
}

std::vector<std::string> validate_sample(const Sample& s) {
  std::vector<std::string> issues;
  if (text::trim(s.id).empty()) issues.emplace_back("id is empty");
  if (text::trim(s.dataset_id).empty()) issues.emplace_back("dataset_id is empty");
  if (text::trim(s.question).empty()) issues.emplace_back("question is empty");
  if (text::trim(s.gold_answer).empty()) issues.emplace_back("gold_answer is empty");
  if (s.choices.empty()) return issues;

  std::set<std::string> labels;
  std::set<std::string> texts;
  for (const auto& c : s.choices) {
    if (text::trim(c.label).empty()) issues.emplace_back("choice with empty label");
    if (text::trim(c.text).empty()) issues.emplace_back("choice '" + c.label + "' has empty text");
    if (!labels.insert(fold(c.label)).second) issues.emplace_back("duplicate choice label '" + c.label + "'");
    if (!texts.insert(fold(c.text)).second) issues.emplace_back("duplicate choice text '" + c.text + "'");
  }
  if (!text::trim(s.gold_answer).empty()) {
    std::size_t hits = 0;
    for (const auto& c : s.choices) {
      if (fold(c.label) == fold(s.gold_answer) || fold(c.text) == fold(s.gold_answer)) ++hits;
    }
    if (hits == 0) issues.emplace_back("gold not in choices");
    if (hits > 1) issues.emplace_back("gold matches more than one choice");
  }
  return issues;
}

std::optional<std::string> resolve_gold_label(const Sample& s) {
  std::optional<std::string> found;
  for (const auto& c : s.choices) {
    if (fold(c.label) == fold(s.gold_answer) || fold(c.text) == fold(s.gold_answer)) {
      if (found) return std::nullopt;
      found = c.label;
    }
  }
  return found;
}

GenerationParams GenerationParams::normalized() const {
  GenerationParams p = *this;
  if (p.mode == DecodingMode::greedy) {
    p.temperature = 1.0;
    p.nucleus_p = 1.0;
  }
  return p;
}

bool GenerationParams::operator==(const GenerationParams& other) const {
  const auto a = normalized();
  const auto b = other.normalized();
  return a.mode == b.mode && a.temperature == b.temperature && a.nucleus_p == b.nucleus_p &&
         a.max_tokens == b.max_tokens && a.seed == b.seed;
}

std::vector<std::string> validate_params(const GenerationParams& p) {
  std::vector<std::string> issues;
  if (p.max_tokens <= 0) issues.emplace_back("max_tokens must be positive");
  if (p.mode == DecodingMode::sampling) {
    if (!(p.temperature > 0.0)) issues.emplace_back("temperature must be > 0");
    if (!(p.nucleus_p > 0.0 && p.nucleus_p <= 1.0)) issues.emplace_back("nucleus_p must lie in (0, 1]");
  }
  return issues;
}

std::vector<std::string> validate_answer(const AgentAnswer& a) {
  std::vector<std::string> issues;
  const bool reasoned = a.role == AnswerRole::vlm_reasoned || a.role == AnswerRole::llm_reasoned;
  if (a.role == AnswerRole::direct && a.iteration != 0) issues.emplace_back("direct answer must have iteration 0");
  if (reasoned && a.iteration != 1 && a.iteration != 2) issues.emplace_back("reasoned answer must have iteration 1 or 2");
  if (a.stated_confidence && !(*a.stated_confidence >= 0.0 && *a.stated_confidence <= 100.0)) {
    issues.emplace_back("stated_confidence outside [0, 100]");
  }
  return issues;
}

bool is_decc_method(Method m) {
  switch (m) {
    case Method::vlm_agent:
    case Method::vlm_agent_2iter:
    case Method::llm_agent:
    case Method::llm_agent_2iter:
    case Method::multi_agent:
      return true;
    default:
      return false;
  }
}

bool needs_vlm_reasoner(Method m) {
  return m == Method::vlm_agent || m == Method::vlm_agent_2iter || m == Method::multi_agent;
}

bool needs_llm_reasoner(Method m) {
  return m == Method::llm_agent || m == Method::llm_agent_2iter || m == Method::multi_agent;
}

bool always_second_iteration(Method m) {
  return m == Method::vlm_agent_2iter || m == Method::llm_agent_2iter;
}

bool is_first_iteration_stage(Stage s) {
  return s == Stage::decompose_1 || s == Stage::subanswer_1 || s == Stage::vlm_reason_1 ||
         s == Stage::llm_reason_1;
}

bool is_second_iteration_stage(Stage s) {
  return s == Stage::decompose_2 || s == Stage::subanswer_2 || s == Stage::vlm_reason_2 ||
         s == Stage::llm_reason_2;
}

// ---- JSON ------------------------------------------------------------------

void to_json(json& j, const Choice& c) { j = json{{"label", c.label}, {"text", c.text}}; }

void from_json(const json& j, Choice& c) {
  j.at("label").get_to(c.label);
  j.at("text").get_to(c.text);
}

void to_json(json& j, const Sample& s) {
  j = json{{"id", s.id},
           {"dataset_id", s.dataset_id},
           {"question", s.question},
           {"gold_answer", s.gold_answer}};
  if (s.image_ref) j["image_ref"] = *s.image_ref;
  if (s.context) j["context"] = *s.context;
  if (!s.choices.empty()) j["choices"] = s.choices;
}

void from_json(const json& j, Sample& s) {
  s = Sample{};
  j.at("id").get_to(s.id);
  j.at("dataset_id").get_to(s.dataset_id);
  j.at("question").get_to(s.question);
  j.at("gold_answer").get_to(s.gold_answer);
  s.image_ref = read_optional<std::string>(j, "image_ref");
  s.context = read_optional<std::string>(j, "context");
  if (j.contains("choices") && !j.at("choices").is_null()) {
    const auto& arr = j.at("choices");
    if (!arr.is_array()) throw Error(ErrorCode::validation, "choices must be an array");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      if (arr[i].is_string()) {
        s.choices.push_back(Choice{synthetic_label(i), arr[i].get<std::string>()});
      } else {
        s.choices.push_back(arr[i].get<Choice>());
      }
    }
  }
}

void to_json(json& j, const GenerationParams& p) {
  const auto n = p.normalized();
  j = json{{"mode", to_string(n.mode)}, {"max_tokens", n.max_tokens}};
  if (n.mode == DecodingMode::sampling) {
    j["temperature"] = n.temperature;
    j["nucleus_p"] = n.nucleus_p;
  }
  if (n.seed) j["seed"] = *n.seed;
}

void from_json(const json& j, GenerationParams& p) {
  p = GenerationParams{};
  if (j.contains("mode")) p.mode = parse_decoding_mode(j.at("mode").get<std::string>());
  if (j.contains("max_tokens")) j.at("max_tokens").get_to(p.max_tokens);
  if (p.mode == DecodingMode::sampling) {
    if (j.contains("temperature")) j.at("temperature").get_to(p.temperature);
    if (j.contains("nucleus_p")) j.at("nucleus_p").get_to(p.nucleus_p);
  }
  p.seed = read_optional<std::int64_t>(j, "seed");
}

void to_json(json& j, const AgentAnswer& a) {
  j = json{{"role", to_string(a.role)},
           {"iteration", a.iteration},
           {"raw_text", a.raw_text},
           {"normalized", a.normalized}};
  if (a.token_logprobs) j["token_logprobs"] = *a.token_logprobs;
  if (a.stated_confidence) j["stated_confidence"] = *a.stated_confidence;
}

void from_json(const json& j, AgentAnswer& a) {
  a = AgentAnswer{};
  a.role = parse_answer_role(j.at("role").get<std::string>());
  j.at("iteration").get_to(a.iteration);
  j.at("raw_text").get_to(a.raw_text);
  if (j.contains("normalized")) j.at("normalized").get_to(a.normalized);
  a.token_logprobs = read_optional<std::vector<double>>(j, "token_logprobs");
  a.stated_confidence = read_optional<double>(j, "stated_confidence");
}

void to_json(json& j, const SubQA& q) {
  j = json{{"index", q.index},
           {"iteration", q.iteration},
           {"sub_question", q.sub_question},
           {"sub_answer", q.sub_answer}};
}

void from_json(const json& j, SubQA& q) {
  j.at("index").get_to(q.index);
  j.at("iteration").get_to(q.iteration);
  j.at("sub_question").get_to(q.sub_question);
  q.sub_answer = j.value("sub_answer", std::string{});
}

void to_json(json& j, const ConsistencyTrace& t) {
  j = json::object();
  if (t.cons_v1) j["cons_v1"] = flag(*t.cons_v1);
  if (t.cons_l1) j["cons_l1"] = flag(*t.cons_l1);
  if (t.cons_v2) j["cons_v2"] = flag(*t.cons_v2);
  if (t.cons_l2) j["cons_l2"] = flag(*t.cons_l2);
  j["scenario"] = to_string(t.scenario);
  j["verdict"] = flag(t.verdict);
}

void from_json(const json& j, ConsistencyTrace& t) {
  t = ConsistencyTrace{};
  t.cons_v1 = read_optional_flag(j, "cons_v1");
  t.cons_l1 = read_optional_flag(j, "cons_l1");
  t.cons_v2 = read_optional_flag(j, "cons_v2");
  t.cons_l2 = read_optional_flag(j, "cons_l2");
  t.scenario = parse_scenario(j.at("scenario").get<std::string>());
  t.verdict = read_flag(j.at("verdict"));
}

void to_json(json& j, const StageError& e) {
  j = json{{"stage", to_string(e.stage)}, {"message", e.message}};
}

void from_json(const json& j, StageError& e) {
  e.stage = parse_stage(j.at("stage").get<std::string>());
  j.at("message").get_to(e.message);
}

void to_json(json& j, const ReliabilityRecord& r) {
  j = json{{"sample_id", r.sample_id},
           {"dataset_id", r.dataset_id},
           {"method", to_string(r.method)},
           {"verdict", flag(r.verdict)},
           {"correct", flag(r.correct)}};
  if (r.trace) j["trace"] = *r.trace;
  if (r.timings) j["timings"] = *r.timings;
  if (r.score) j["score"] = *r.score;
  if (r.error) j["error"] = *r.error;
  if (!r.notes.empty()) j["notes"] = r.notes;
}

void from_json(const json& j, ReliabilityRecord& r) {
  r = ReliabilityRecord{};
  j.at("sample_id").get_to(r.sample_id);
  r.dataset_id = j.value("dataset_id", std::string{});
  r.method = parse_method(j.at("method").get<std::string>());
  r.verdict = read_flag(j.at("verdict"));
  r.correct = read_flag(j.at("correct"));
  r.trace = read_optional<ConsistencyTrace>(j, "trace");
  r.timings = read_optional<std::map<std::string, double>>(j, "timings");
  r.score = read_optional<double>(j, "score");
  r.error = read_optional<StageError>(j, "error");
  if (j.contains("notes")) j.at("notes").get_to(r.notes);
}

void to_json(json& j, const StageCost& c) {
  j = json{{"stage", to_string(c.stage)},
           {"samples_touched", c.samples_touched},
           {"wall_seconds_total", c.wall_seconds_total}};
}

void from_json(const json& j, StageCost& c) {
  c.stage = parse_stage(j.at("stage").get<std::string>());
  j.at("samples_touched").get_to(c.samples_touched);
  j.at("wall_seconds_total").get_to(c.wall_seconds_total);
  if (c.wall_seconds_total < 0.0) throw Error(ErrorCode::validation, "wall_seconds_total must be >= 0");
}

}  // namespace decc
