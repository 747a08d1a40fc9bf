#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "decc/consistency.hpp"
#include "decc/core_model.hpp"

namespace decc {

struct BaselineConfig {
  double perplexity_threshold = 1.10;
  double numeric_confidence_threshold = 80.0;  // percent
  int paraphrase_count = 4;
  int paraphrase_inconsistency_tolerance = 0;
};

std::vector<std::string> validate_baseline_config(const BaselineConfig& c);

/// exp(-mean(logprobs)). Throws EmptyLogprobs / PositiveLogprob.
double perplexity_of_answer(std::span<const double> token_logprobs);

/// Reliable unless perplexity exceeds the threshold.
inline bool perplexity_verdict(double perplexity, double threshold) { return perplexity <= threshold; }

/// First number written as `N%` (or `N.M%`) after a case-insensitive
/// "confidence" token. Values outside [0, 100] count as absent.
std::optional<double> parse_numeric_confidence(std::string_view raw);

/// Reliable only when the stated confidence strictly exceeds the threshold.
inline bool numeric_confidence_verdict(std::optional<double> confidence, double threshold) {
  return confidence.has_value() && *confidence > threshold;
}

enum class LinguisticConfidence { confident, not_confident, absent };

std::string_view to_string(LinguisticConfidence c);

LinguisticConfidence parse_linguistic_confidence(std::string_view raw);

inline bool linguistic_confidence_verdict(LinguisticConfidence c) {
  return c == LinguisticConfidence::confident;
}

struct ParaphraseOutcome {
  int inconsistent = 0;
  bool verdict = false;
};

/// Counts paraphrase answers inconsistent with the direct answer (unparseable
/// ones included) and returns R = 1 iff that count is at most `tolerance`.
/// Throws WrongParaphraseCount unless exactly `expected_count` answers are given.
ParaphraseOutcome paraphrase_self_consistency(const AgentAnswer& direct,
                                              std::span<const AgentAnswer> paraphrased, int tolerance,
                                              const MatchPolicy& policy,
                                              std::span<const Choice> choices = {},
                                              int expected_count = 4);

void to_json(json& j, const BaselineConfig& c);
void from_json(const json& j, BaselineConfig& c);

}  // namespace decc
