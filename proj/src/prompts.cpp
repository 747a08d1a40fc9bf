#include "decc/prompts.hpp"

#include <algorithm>
#include <array>

#include "decc/hash.hpp"
#include "text_util.hpp"

namespace decc {
namespace {

// ---- verbatim few-shot assets ----------------------------------------------

constexpr std::string_view kDecomposeIter1 =
    R"(Given an image and an associated main question, design pre-questions that focus on important contextual information in the image useful for answering the main question. Pre-questions should provide clues to answer the main question. Each pre-question should be short and easy to understand. Pre-questions should focus on context visual clues of the image. Pre-questions should provide clues to answer the main question.

Example scenario to illustrate the expected interaction pattern:
Main Question: Is this statement entailment, neutral or contradiction based on the image? Statement: 'A professor is late to class' Options: A: entailment, B: neutral, C: contradiction.
Pre-question 1: Is there a person in the image wearing clothing typically associated with a professor?
Pre-question 2: Is the person in the image displaying any behavior that could be interpreted as being late to class, such as being out of breath or looking at a clock?
Pre-question 3: Is there a classroom setting in the image, such as desks or a blackboard?

Example scenario to illustrate the expected interaction pattern:
Context: Below is a food web from a tundra ecosystem in Nunavut, a territory in Northern Canada. A food web models how the matter eaten by organisms moves through an ecosystem. The arrows in a food web represent how matter moves between organisms in an ecosystem. Main Question: Based on the arrows, which of the following organisms is a decomposer? Choices: A: mushroom, B: lichen
Pre-question 1: Does the mushroom eat any other organisms in the food web?
Pre-question 2: Does the lichen eat any other organisms in the food web?
Pre-question 3: Does the lichen produce any material that other organisms can use?
Pre-question 4: Does the mushroom produce any material that other organisms can use?
Pre-question 5: Does a decomposer produce any material that other organisms can use?

Example scenario to illustrate the expected interaction pattern:
Main Question: Is this statement entailment, neutral or contradiction based on the image? Statement: 'Two children play in the park.' Options: A: entailment, B: neutral, C: contradiction.
Pre-question 1: Are there any children in the image?
Pre-question 2: Are the two children playing in the park?

Example scenario to illustrate the expected interaction pattern:
User: Context: Use the graph to answer the question below. Main Question: Which month has the highest average precipitation in Santiago? Choices: A: March, B: October, C: June
Pre-question 1: What kind of graph is shown?
Pre-question 2: Does the graph show the average precipitation for each month in Santiago?
Pre-question 3: For which month is the bar highest in the graph?

{context}Main Question: {question}{choices})";

constexpr std::string_view kDecomposeIter2 =
    R"(You will be given an image and an associated main question, and some sub-question-answer pairs. However, these sub-questions might not be sufficient to answer the main question due to lack of detail or conflicting answers. You need to design additional sub-questions that focus on important contextual information in the image useful for answering the main question. Each pre-question should be short, easy to understand, and provide clues to answer the main question.

Example scenario to illustrate the expected interaction pattern:
Main Question: Is this statement entailment, neutral, or contradiction based on the image? Statement: 'A professor is late to class' Options: A: entailment, B: neutral, C: contradiction.
Sub-questions and answers:
Sub-question 1: Is there a person in the image wearing clothing typically associated with a professor?
Sub-answer 1: Yes.
Sub-question 2: Is the person in the image displaying any behavior that could be interpreted as being late to class, such as being out of breath or looking at a clock?
Sub-answer 2: No.
Sub-question 3: Is there a classroom setting in the image, such as desks or a blackboard?
Sub-answer 3: Yes.
Your return:
Additional Sub-question 1: What is the person's age in the image?
Additional Sub-question 2: Is the person more likely to be a student or a professor?
Additional Sub-question 3: Is the person holding any books or papers?

Example scenario to illustrate the expected interaction pattern:
Context: Below is a food web from a tundra ecosystem in Nunavut, a territory in Northern Canada. A food web models how the matter eaten by organisms moves through an ecosystem. The arrows in a food web represent how matter moves between organisms in an ecosystem. Main Question: Based on the arrows, which of the following organisms is a decomposer? Choices: A: mushroom, B: lichen.
Sub-questions and answers:
Sub-question 1: Does the mushroom eat any other organisms in the food web?
Sub-answer 1: Yes.
Sub-question 2: Does the lichen eat any other organisms in the food web?
Sub-answer 2: No.
Sub-question 3: Does the lichen produce any material that other organisms can use?
Sub-answer 3: Yes.
Sub-question 4: Does the mushroom produce any material that other organisms can use?
Sub-answer 4: No.
Sub-question 5: Does a decomposer produce any material that other organisms can use?
Sub-answer 5: Yes.
Your return:
Additional Sub-question 1: Is there any arrow pointing towards the mushroom?
Additional Sub-question 2: Is there any arrow pointing towards the lichen?
Additional Sub-question 3: What is the mushroom's role in the food web?
Additional Sub-question 4: What is the lichen's role in the food web?

{context}Main Question: {question}{choices}
Sub-questions and answers:
{prior_subqa_block}
Your return:)";

constexpr std::string_view kParaphrase =
    R"(Your goal is to paraphrase the given question into 4 questions. Each question should only change the wording of the original question slightly or just replace a few words. The questions should be easy to understand and should not change the meaning of the original question. If the questions come with some choices, you should not change these choices.

Example scenario to illustrate the expected interaction pattern:
Main Question: Is this statement entailment, neutral, or contradiction based on the image? Statement: 'A professor is late to class' Options: A: entailment, B: neutral, C: contradiction.
Paraphrased question 1: Is this statement entailment, neutral, or contradiction based on the image? Statement: 'A teacher is late to class' Options: A: entailment, B: neutral, C: contradiction.
Paraphrased question 2: Is this statement entailment, neutral, or contradiction based on the image? Statement: 'A professor is tardy to class' Options: A: entailment, B: neutral, C: contradiction.
Paraphrased question 3: Is this statement entailment, neutral, or contradiction based on the image? Statement: 'A professor is not on time for class' Options: A: entailment, B: neutral, C: contradiction.
Paraphrased question 4: Is this statement entailment, neutral, or contradiction based on the image? Statement: 'A teacher is not punctual for class' Options: A: entailment, B: neutral, C: contradiction.

Example scenario to illustrate the expected interaction pattern:
Context: Below is a food web from a tundra ecosystem in Nunavut, a territory in Northern Canada. A food web models how the matter eaten by organisms moves through an ecosystem. The arrows in a food web represent how matter moves between organisms in an ecosystem. Main Question: Based on the arrows, which of the following organisms is a decomposer? Choices: A: mushroom, B: lichen
Paraphrased question 1: Based on the arrows, which of these choices is a decomposer? Choices: A: mushroom, B: lichen
Paraphrased question 2: Based on the arrows, which of the following is a decomposer? Choices: A: mushroom, B: lichen
Paraphrased question 3: Which of the following is a decomposer based on the arrows? Choices: A: mushroom, B: lichen
Paraphrased question 4: Which is a decomposer based on the figure? Choices: A: mushroom, B: lichen

Example scenario to illustrate the expected interaction pattern:
Main Question: Is this statement entailment, neutral, or contradiction based on the image? Statement: 'Two children play in the park.' Options: A: entailment, B: neutral, C: contradiction.
Paraphrased question 1: Is this statement entailment, neutral, or contradiction based on the image? Statement: 'Two kids play in the park.' Options: A: entailment, B: neutral, C: contradiction.
Paraphrased question 2: Is this statement entailment, neutral, or contradiction based on the image? Statement: 'Two children are playing in the park.' Options: A: entailment, B: neutral, C: contradiction.
Paraphrased question 3: Is this statement entailment, neutral, or contradiction based on the image? Statement: 'Two kids are playing in the park.' Options: A: entailment, B: neutral, C: contradiction.
Paraphrased question 4: Is this statement entailment, neutral, or contradiction based on the image? Statement: 'There are two children playing in the park.' Options: A: entailment, B: neutral, C: contradiction.

Example scenario to illustrate the expected interaction pattern:
User: Context: Use the graph to answer the question below. Main Question: Which month has the highest average precipitation in Santiago? Choices: A: March, B: October, C: June
Paraphrased question 1: Which month has the highest average rainfall in Santiago? Choices: A: March, B: October, C: June
Paraphrased question 2: Which month's precipitation is the highest in Santiago? Choices: A: March, B: October, C: June
Paraphrased question 3: Which month has the most precipitation in Santiago? Choices: A: March, B: October, C: June
Paraphrased question 4: Which month has the most rainfall in Santiago? Choices: A: March, B: October, C: June

Note: Return the paraphrased questions. For each paraphrased question, you should return the entire set of choices as well.

{context}Main Question: {question}{choices})";

// ---- reconstructed zero-shot assets ----------------------------------------

constexpr std::string_view kSubqAnswer =
    R"({prior_subqa_block}Answer the following question about the image with a short phrase.
Question: {question}
Answer:)";

constexpr std::string_view kReasonOverSubqa =
    R"({context}Main Question: {question}{choices}
Sub-questions and answers:
{subqa_block}
Using the sub-questions and answers above, answer the main question. If choices are given, reply with the letter of the correct option; otherwise reply with a single word or phrase.
Answer:)";

constexpr std::string_view kDirectAnswer =
    R"({context}Main Question: {question}{choices}
If choices are given, reply with the letter of the correct option; otherwise reply with a single word or phrase.
Answer:)";

constexpr std::string_view kDirectNumericConf =
    R"({context}Main Question: {question}{choices}
Answer the question and state how confident you are that your answer is correct, formatted as 'Answer: X. Confidence: X%'.)";

constexpr std::string_view kDirectLinguisticConf =
    R"({context}Main Question: {question}{choices}
Answer the question, then state either 'I am confident in this answer.' or 'I am not confident in this answer.')";

const std::array<PromptTemplate, 8> kTemplates{{
    {TemplateName::decompose_iter1, kDecomposeIter1, true},
    {TemplateName::decompose_iter2, kDecomposeIter2, true},
    {TemplateName::paraphrase, kParaphrase, true},
    {TemplateName::subq_answer, kSubqAnswer, false},
    {TemplateName::reason_over_subqa, kReasonOverSubqa, false},
    {TemplateName::direct_answer, kDirectAnswer, false},
    {TemplateName::direct_with_numeric_conf, kDirectNumericConf, false},
    {TemplateName::direct_with_linguistic_conf, kDirectLinguisticConf, false},
}};

bool is_ident_char(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_';
}

// Length of a `{ident}` placeholder starting at body[i], or 0.
std::size_t placeholder_len(std::string_view body, std::size_t i) {
  if (body[i] != '{') return 0;
  std::size_t j = i + 1;
  while (j < body.size() && is_ident_char(body[j])) ++j;
  if (j == i + 1 || j >= body.size() || body[j] != '}') return 0;
  return j - i + 1;
}

// Matches `word` case-insensitively at s[pos], tolerating "sub-question",
// "sub question" and "subquestion" style joins where `word` has a '-'.
bool match_words(std::string_view s, std::size_t& pos, std::string_view word) {
  std::size_t i = pos;
  for (char w : word) {
    if (w == '-') {
      if (i < s.size() && (s[i] == '-' || s[i] == ' ')) ++i;
      continue;
    }
    if (w == ' ') {
      if (i >= s.size() || !text::is_space(s[i])) return false;
      while (i < s.size() && text::is_space(s[i])) ++i;
      continue;
    }
    if (i >= s.size() || text::lower(s[i]) != w) return false;
    ++i;
  }
  pos = i;
  return true;
}

// "<prefix> N: text" -> (N, text). Leading whitespace allowed.
std::optional<std::pair<long, std::string>> numbered_line(std::string_view line, std::string_view prefix) {
  std::size_t i = 0;
  while (i < line.size() && text::is_space(line[i])) ++i;
  if (!match_words(line, i, prefix)) return std::nullopt;
  while (i < line.size() && line[i] == ' ') ++i;
  const std::size_t digits = i;
  long n = 0;
  while (i < line.size() && line[i] >= '0' && line[i] <= '9' && i - digits < 9) {
    n = n * 10 + (line[i] - '0');
    ++i;
  }
  if (i == digits) return std::nullopt;
  while (i < line.size() && line[i] == ' ') ++i;
  if (i >= line.size() || line[i] != ':') return std::nullopt;
  const auto rest = text::trim(line.substr(i + 1));
  if (rest.empty()) return std::nullopt;
  return std::make_pair(n, std::string(rest));
}

std::vector<std::string> numbered_lines(std::string_view raw, std::string_view prefix) {
  std::vector<std::pair<long, std::string>> found;
  std::size_t start = 0;
  while (start <= raw.size()) {
    std::size_t end = raw.find('\n', start);
    if (end == std::string_view::npos) end = raw.size();
    if (auto hit = numbered_line(raw.substr(start, end - start), prefix)) found.push_back(std::move(*hit));
    start = end + 1;
  }
  std::stable_sort(found.begin(), found.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<std::string> out;
  out.reserve(found.size());
  for (auto& [n, q] : found) out.push_back(std::move(q));
  return out;
}

}  // namespace

std::string_view to_string(TemplateName t) {
  switch (t) {
    case TemplateName::decompose_iter1: return "decompose_iter1";
    case TemplateName::decompose_iter2: return "decompose_iter2";
    case TemplateName::paraphrase: return "paraphrase";
    case TemplateName::subq_answer: return "subq_answer";
    case TemplateName::reason_over_subqa: return "reason_over_subqa";
    case TemplateName::direct_answer: return "direct_answer";
    case TemplateName::direct_with_numeric_conf: return "direct_with_numeric_conf";
    case TemplateName::direct_with_linguistic_conf: return "direct_with_linguistic_conf";
  }
  return "unknown";
}

const PromptTemplate& prompt_template(TemplateName name) {
  for (const auto& t : kTemplates) {
    if (t.name == name) return t;
  }
  throw Error(ErrorCode::config, "unknown template");
}

std::string prompt_asset_hash() {
  std::string all;
  for (const auto& t : kTemplates) {
    all += to_string(t.name);
    all.push_back('\0');
    all += t.body;
    all.push_back('\0');
  }
  return sha256_hex(all);
}

std::vector<std::string> placeholders_of(std::string_view body) {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < body.size(); ++i) {
    if (const auto len = placeholder_len(body, i)) {
      std::string name(body.substr(i + 1, len - 2));
      if (std::find(names.begin(), names.end(), name) == names.end()) names.push_back(std::move(name));
      i += len - 1;
    }
  }
  return names;
}

std::vector<ChatMessage> render_prompt(const PromptTemplate& t, const Bindings& bindings,
                                       std::optional<std::string> image_ref) {
  std::string out;
  out.reserve(t.body.size() + 256);
  for (std::size_t i = 0; i < t.body.size(); ++i) {
    if (const auto len = placeholder_len(t.body, i)) {
      const auto name = t.body.substr(i + 1, len - 2);
      const auto it = bindings.find(name);
      if (it == bindings.end()) {
        throw Error(ErrorCode::unbound_placeholder,
                    std::string(to_string(t.name)) + ": unbound placeholder {" + std::string(name) + "}");
      }
      out += it->second;
      i += len - 1;
    } else {
      out.push_back(t.body[i]);
    }
  }
  return {ChatMessage{"user", std::move(out), std::move(image_ref)}};
}

Bindings instance_bindings(const Sample& s) {
  Bindings b;
  b["question"] = s.question;
  b["context"] = s.context && !text::trim(*s.context).empty() ? "Context: " + *s.context + " " : "";
  std::string choices;
  if (!s.choices.empty()) {
    choices = " Choices: ";
    for (std::size_t i = 0; i < s.choices.size(); ++i) {
      if (i) choices += ", ";
      choices += s.choices[i].label + ": " + s.choices[i].text;
    }
  }
  b["choices"] = std::move(choices);
  return b;
}

std::string format_subqa_pairs(std::span<const SubQA> pairs) {
  std::string out;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto n = std::to_string(i + 1);
    if (i) out.push_back('\n');
    out += "Sub-question " + n + ": " + pairs[i].sub_question + "\n";
    out += "Sub-answer " + n + ": " + pairs[i].sub_answer;
  }
  return out;
}

std::string format_subquestions(std::span<const std::string> questions, int iteration) {
  const std::string prefix = iteration == 2 ? "Additional Sub-question " : "Pre-question ";
  std::string out;
  for (std::size_t i = 0; i < questions.size(); ++i) {
    out += prefix + std::to_string(i + 1) + ": " + questions[i] + "\n";
  }
  return out;
}

std::vector<std::string> parse_subquestions(std::string_view raw, int iteration) {
  return numbered_lines(raw, iteration == 2 ? "additional sub-question" : "pre-question");
}

ParsedParaphrases parse_paraphrases(std::string_view raw, std::size_t expected) {
  ParsedParaphrases out;
  out.questions = numbered_lines(raw, "paraphrased question");
  if (out.questions.size() != expected) out.error = ErrorCode::wrong_paraphrase_count;
  return out;
}

}  // namespace decc
