#include "decc/consistency.hpp"

#include <vector>

#include "decc/error.hpp"
#include "text_util.hpp"

namespace decc {
namespace {

bool is_option_punct(char c) { return c == '.' || c == ':' || c == ')'; }

std::string strip_trailing_periods(std::string s) {
  while (!s.empty() && (s.back() == '.' || text::is_space(s.back()))) s.pop_back();
  return s;
}

std::string fold_for_match(std::string_view s, const MatchPolicy& policy) {
  std::string out = text::collapse_whitespace(s);
  if (policy.case_fold) out = text::to_lower(out);
  return out;
}

// Leading single-letter option marker: "B", "B.", "B:", "B)" optionally
// followed by more text after the punctuation.
std::optional<std::string> leading_option_letter(std::string_view trimmed, const MatchPolicy& policy,
                                                 std::span<const Choice> choices) {
  if (trimmed.empty()) return std::nullopt;
  const char c = trimmed.front();
  const bool upper = c >= 'A' && c <= 'Z';
  const bool lower = c >= 'a' && c <= 'z';
  if (!upper && !(lower && policy.case_fold)) return std::nullopt;
  if (trimmed.size() > 1 && !is_option_punct(trimmed[1])) return std::nullopt;
  const char letter = text::upper(c);
  for (const auto& choice : choices) {
    if (choice.label.size() == 1 && text::upper(choice.label.front()) == letter) return choice.label;
  }
  return std::nullopt;
}

}  // namespace

MatchPolicy MatchPolicy::for_sample(const Sample& s, bool case_fold, bool strip_punctuation) {
  return MatchPolicy{s.is_multiple_choice() ? MatchMode::multiple_choice : MatchMode::short_answer,
                     case_fold, strip_punctuation};
}

std::string_view to_string(MatchStatus s) {
  switch (s) {
    case MatchStatus::matched: return "matched";
    case MatchStatus::empty_answer: return "EmptyAnswer";
    case MatchStatus::ambiguous: return "AmbiguousMatch";
    case MatchStatus::no_match: return "NoMatch";
  }
  return "unknown";
}

NormalizedAnswer normalize_answer(std::string_view raw, const MatchPolicy& policy,
                                  std::span<const Choice> choices) {
  const std::string_view trimmed = text::trim(raw);
  if (trimmed.empty()) return {MatchStatus::empty_answer, {}};

  if (policy.mode == MatchMode::short_answer) {
    std::string out = text::collapse_whitespace(trimmed);
    if (policy.case_fold) out = text::to_lower(out);
    if (policy.strip_punctuation) out = strip_trailing_periods(std::move(out));
    if (out.empty()) return {MatchStatus::empty_answer, {}};
    return {MatchStatus::matched, std::move(out)};
  }

  if (choices.empty()) {
    throw Error(ErrorCode::validation, "multiple_choice matching requires the sample's choices");
  }

  if (auto label = leading_option_letter(trimmed, policy, choices)) {
    return {MatchStatus::matched, *label};
  }

  auto exact_form = [&](std::string_view s) {
    std::string f = fold_for_match(s, policy);
    return policy.strip_punctuation ? strip_trailing_periods(std::move(f)) : f;
  };
  const std::string folded = exact_form(trimmed);
  for (const auto& choice : choices) {
    if (folded == exact_form(choice.text)) return {MatchStatus::matched, choice.label};
  }

  const std::string haystack = fold_for_match(trimmed, policy);
  std::vector<const Choice*> hits;
  for (const auto& choice : choices) {
    const std::string needle = fold_for_match(choice.text, policy);
    if (!needle.empty() && haystack.find(needle) != std::string::npos) hits.push_back(&choice);
  }
  if (hits.size() == 1) return {MatchStatus::matched, hits.front()->label};
  if (hits.size() > 1) return {MatchStatus::ambiguous, {}};
  return {MatchStatus::no_match, {}};
}

bool answers_consistent(const AgentAnswer& a, const AgentAnswer& b, const MatchPolicy& policy,
                        std::span<const Choice> choices) {
  const auto na = normalize_answer(a.raw_text, policy, choices);
  if (!na.ok()) return false;
  const auto nb = normalize_answer(b.raw_text, policy, choices);
  return nb.ok() && na.canonical == nb.canonical;
}

ConsistencyTrace single_agent_verdict(const AgentAnswer& direct, const AgentAnswer& reasoned,
                                      const MatchPolicy& policy, std::span<const Choice> choices) {
  if (reasoned.role != AnswerRole::vlm_reasoned && reasoned.role != AnswerRole::llm_reasoned) {
    throw Error(ErrorCode::role_mismatch,
                "single_agent_verdict needs a reasoned answer, got role " +
                    std::string(to_string(reasoned.role)));
  }
  const bool consistent = answers_consistent(direct, reasoned, policy, choices);
  ConsistencyTrace trace;
  trace.scenario = Scenario::single_agent;
  trace.verdict = consistent;
  const bool second = reasoned.iteration == 2;
  if (reasoned.role == AnswerRole::vlm_reasoned) {
    (second ? trace.cons_v2 : trace.cons_v1) = consistent;
  } else {
    (second ? trace.cons_l2 : trace.cons_l1) = consistent;
  }
  return trace;
}

ConsistencyTrace multi_agent_verdict(bool cons_v1, bool cons_l1, std::optional<bool> cons_v2,
                                     std::optional<bool> cons_l2) {
  ConsistencyTrace trace;
  trace.cons_v1 = cons_v1;
  trace.cons_l1 = cons_l1;

  if (cons_v1 == cons_l1) {
    if (cons_v2 || cons_l2) {
      throw Error(ErrorCode::inconsistent_input,
                  "second-iteration flags supplied although first-iteration flags agree");
    }
    trace.scenario = Scenario::first_iter_agree;
    trace.verdict = cons_v1;
    return trace;
  }

  if (!cons_v2 || !cons_l2) {
    throw Error(ErrorCode::missing_second_iteration,
                "first-iteration flags disagree; both second-iteration flags are required");
  }
  trace.cons_v2 = cons_v2;
  trace.cons_l2 = cons_l2;

  if (*cons_v2 == *cons_l2) {
    trace.scenario = Scenario::second_iter_agree;
    trace.verdict = *cons_v2;
  } else if (cons_v1 == *cons_v2 && cons_l1 == *cons_l2) {
    trace.scenario = Scenario::both_unchanged_trust_llm;
    trace.verdict = *cons_l2;
  } else {
    // With binary flags and disagreement on both iterations the only other
    // possibility is that both agents flipped.
    trace.scenario = Scenario::both_changed_trust_vlm;
    trace.verdict = *cons_v2;
  }
  return trace;
}

bool trace_is_consistent(const ConsistencyTrace& t) {
  if (t.scenario == Scenario::single_agent) {
    const int populated = t.cons_v1.has_value() + t.cons_l1.has_value() + t.cons_v2.has_value() +
                          t.cons_l2.has_value();
    if (populated != 1) return false;
    const bool flag = t.cons_v1.value_or(t.cons_l1.value_or(t.cons_v2.value_or(t.cons_l2.value_or(false))));
    return flag == t.verdict;
  }
  if (!t.cons_v1 || !t.cons_l1) return false;
  try {
    return multi_agent_verdict(*t.cons_v1, *t.cons_l1, t.cons_v2, t.cons_l2) == t;
  } catch (const Error&) {
    return false;
  }
}

}  // namespace decc
