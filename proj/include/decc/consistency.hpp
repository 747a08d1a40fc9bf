#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "decc/core_model.hpp"

namespace decc {

enum class MatchMode { multiple_choice, short_answer };

struct MatchPolicy {
  MatchMode mode = MatchMode::multiple_choice;
  bool case_fold = true;
  bool strip_punctuation = true;

  /// multiple_choice when the sample carries options, short_answer otherwise.
  static MatchPolicy for_sample(const Sample& s, bool case_fold = true, bool strip_punctuation = true);
};

enum class MatchStatus { matched, empty_answer, ambiguous, no_match };

std::string_view to_string(MatchStatus s);

struct NormalizedAnswer {
  MatchStatus status = MatchStatus::no_match;
  std::string canonical;  // choice label or normalized short answer; empty unless matched

  bool ok() const { return status == MatchStatus::matched; }
};

/// Maps free-form model output onto a canonical answer.
///
/// Multiple-choice resolution order: a leading option letter (`B`, `B.`, `B:`,
/// `B)`), then an exact case-folded match against a choice text, then a unique
/// choice text contained in the output. Two or more substring hits report
/// `ambiguous`. Short answers are lowercased, whitespace-collapsed and have
/// trailing periods removed, subject to the policy flags.
///
/// Throws Error(validation) when multiple_choice mode is used without choices.
NormalizedAnswer normalize_answer(std::string_view raw, const MatchPolicy& policy,
                                  std::span<const Choice> choices = {});

/// 1 iff both answers normalize and their canonical forms are equal. Any
/// normalization failure (empty, ambiguous, no match) yields 0.
bool answers_consistent(const AgentAnswer& a, const AgentAnswer& b, const MatchPolicy& policy,
                        std::span<const Choice> choices = {});

/// Single-agent rule: verdict is the consistency between the direct answer and
/// one reasoned answer. Fills cons_v1/cons_l1 for iteration-1 answers and
/// cons_v2/cons_l2 for iteration-2 answers. Throws Error(role_mismatch) unless
/// `reasoned` comes from a reasoning agent.
ConsistencyTrace single_agent_verdict(const AgentAnswer& direct, const AgentAnswer& reasoned,
                                      const MatchPolicy& policy,
                                      std::span<const Choice> choices = {});

/// Multi-agent decision rule over the four consistency flags.
///
///  - first-iteration flags agree: verdict is that shared flag;
///  - else second-iteration flags agree: verdict is that shared flag;
///  - else neither agent changed: trust the text-only reasoner (cons_l2);
///  - else both changed: trust the vision reasoner (cons_v2).
///
/// Second-iteration flags must be present exactly when the first-iteration
/// flags disagree (Error missing_second_iteration / inconsistent_input).
ConsistencyTrace multi_agent_verdict(bool cons_v1, bool cons_l1, std::optional<bool> cons_v2,
                                     std::optional<bool> cons_l2);

/// Re-derives the verdict from a trace's flags; used to check traces loaded
/// from reports against the decision rule.
bool trace_is_consistent(const ConsistencyTrace& t);

}  // namespace decc
