#pragma once

// Prompt assets and the parsers for the structured replies they elicit.
//
// The decomposition, second-iteration decomposition and paraphrase templates
// carry few-shot exemplars transcribed verbatim (text only). The zero-shot
// templates (sub-question answering, reasoning, direct answers) are
// reconstructed and marked as such.

#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "decc/core_model.hpp"
#include "decc/error.hpp"
#include "decc/gateway.hpp"

namespace decc {

enum class TemplateName {
  decompose_iter1,
  decompose_iter2,
  paraphrase,
  subq_answer,
  reason_over_subqa,
  direct_answer,
  direct_with_numeric_conf,
  direct_with_linguistic_conf,
};

inline constexpr TemplateName kAllTemplates[] = {
    TemplateName::decompose_iter1,          TemplateName::decompose_iter2,
    TemplateName::paraphrase,               TemplateName::subq_answer,
    TemplateName::reason_over_subqa,        TemplateName::direct_answer,
    TemplateName::direct_with_numeric_conf, TemplateName::direct_with_linguistic_conf,
};

std::string_view to_string(TemplateName t);

struct PromptTemplate {
  TemplateName name;
  std::string_view body;  // placeholders: {question} {context} {choices} {subqa_block} {prior_subqa_block}
  bool verbatim_exemplars;
};

const PromptTemplate& prompt_template(TemplateName name);

/// SHA-256 over every template body, pinned in reports.
std::string prompt_asset_hash();

using Bindings = std::map<std::string, std::string, std::less<>>;

/// Placeholder names appearing in a template body, in order of first use.
std::vector<std::string> placeholders_of(std::string_view body);

/// Substitutes every `{name}` in the body and returns a single user message
/// carrying `image_ref` when given. Bound values are inserted verbatim (no
/// recursive expansion). Throws Error(unbound_placeholder).
std::vector<ChatMessage> render_prompt(const PromptTemplate& t, const Bindings& bindings,
                                       std::optional<std::string> image_ref = std::nullopt);

/// {context}, {choices} and {question} bindings for a sample, formatted the way
/// the exemplars present them ("Context: ... ", " Choices: A: x, B: y").
Bindings instance_bindings(const Sample& s);

/// "Sub-question i: ...\nSub-answer i: ..." lines, numbered 1..K in order.
std::string format_subqa_pairs(std::span<const SubQA> pairs);

/// Synthetic decomposer output: "Pre-question i: q" (iteration 1) or
/// "Additional Sub-question i: q" (iteration 2), one per line.
std::string format_subquestions(std::span<const std::string> questions, int iteration);

/// Extracts sub-questions from decomposer output. Lines (leading whitespace
/// allowed) starting with "Pre-question N:" for iteration 1 or "Additional
/// Sub-question N:" for iteration 2, case-insensitive, ordered by N. Never
/// throws; an empty result means nothing matched.
std::vector<std::string> parse_subquestions(std::string_view raw, int iteration);

struct ParsedParaphrases {
  std::vector<std::string> questions;
  std::optional<ErrorCode> error;  // wrong_paraphrase_count unless exactly `expected` were found

  bool ok() const { return !error.has_value(); }
};

/// Extracts "Paraphrased question N:" lines. Never throws.
ParsedParaphrases parse_paraphrases(std::string_view raw, std::size_t expected = 4);

}  // namespace decc
