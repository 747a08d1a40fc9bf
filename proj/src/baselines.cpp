#include "decc/baselines.hpp"

#include <cmath>

#include "decc/error.hpp"
#include "text_util.hpp"

namespace decc {
namespace {

bool is_digit(char c) { return c >= '0' && c <= '9'; }

// Parses the number ending right before `pct` (a '%' position), allowing
// spaces between the number and the sign.
std::optional<double> number_before(std::string_view s, std::size_t pct) {
  std::size_t end = pct;
  while (end > 0 && s[end - 1] == ' ') --end;
  std::size_t begin = end;
  while (begin > 0 && is_digit(s[begin - 1])) --begin;
  if (begin == end) return std::nullopt;
  // Fractional part: we consumed the digits after the dot; extend over "D.".
  if (begin >= 2 && s[begin - 1] == '.' && is_digit(s[begin - 2])) {
    begin -= 1;
    while (begin > 0 && is_digit(s[begin - 1])) --begin;
  }
  double value = 0.0;
  double scale = 0.0;
  for (std::size_t i = begin; i < end; ++i) {
    if (s[i] == '.') {
      scale = 1.0;
      continue;
    }
    const double d = s[i] - '0';
    if (scale == 0.0) {
      value = value * 10.0 + d;
    } else {
      scale /= 10.0;
      value += d * scale;
    }
  }
  return value;
}

}  // namespace

std::vector<std::string> validate_baseline_config(const BaselineConfig& c) {
  std::vector<std::string> issues;
  if (!(c.perplexity_threshold > 1.0)) issues.emplace_back("perplexity_threshold must be > 1");
  if (!(c.numeric_confidence_threshold >= 0.0 && c.numeric_confidence_threshold <= 100.0)) {
    issues.emplace_back("numeric_confidence_threshold must be a percentage");
  }
  if (c.paraphrase_count <= 0) issues.emplace_back("paraphrase_count must be positive");
  if (c.paraphrase_inconsistency_tolerance < 0 ||
      c.paraphrase_inconsistency_tolerance >= c.paraphrase_count) {
    issues.emplace_back("paraphrase_inconsistency_tolerance must lie in [0, paraphrase_count)");
  }
  return issues;
}

double perplexity_of_answer(std::span<const double> token_logprobs) {
  if (token_logprobs.empty()) throw Error(ErrorCode::empty_logprobs, "perplexity: no token logprobs");
  double sum = 0.0;
  for (double lp : token_logprobs) {
    if (!(lp <= 0.0)) {
      throw Error(ErrorCode::positive_logprob, "perplexity: logprob " + std::to_string(lp) + " > 0");
    }
    sum += lp;
  }
  return std::exp(-sum / static_cast<double>(token_logprobs.size()));
}

std::optional<double> parse_numeric_confidence(std::string_view raw) {
  const std::string lower = text::to_lower(raw);
  constexpr std::string_view kToken = "confidence";
  std::size_t at = lower.find(kToken);
  while (at != std::string::npos) {
    for (std::size_t pct = lower.find('%', at + kToken.size()); pct != std::string::npos;
         pct = lower.find('%', pct + 1)) {
      if (auto v = number_before(lower, pct)) {
        if (*v >= 0.0 && *v <= 100.0) return v;
        break;
      }
    }
    at = lower.find(kToken, at + 1);
  }
  return std::nullopt;
}

std::string_view to_string(LinguisticConfidence c) {
  switch (c) {
    case LinguisticConfidence::confident: return "confident";
    case LinguisticConfidence::not_confident: return "not_confident";
    case LinguisticConfidence::absent: return "absent";
  }
  return "absent";
}

LinguisticConfidence parse_linguistic_confidence(std::string_view raw) {
  const std::string lower = text::collapse_whitespace(text::to_lower(raw));
  if (lower.find("not confident") != std::string::npos) return LinguisticConfidence::not_confident;
  if (lower.find("confident") != std::string::npos) return LinguisticConfidence::confident;
  return LinguisticConfidence::absent;
}

ParaphraseOutcome paraphrase_self_consistency(const AgentAnswer& direct,
                                              std::span<const AgentAnswer> paraphrased, int tolerance,
                                              const MatchPolicy& policy, std::span<const Choice> choices,
                                              int expected_count) {
  if (static_cast<int>(paraphrased.size()) != expected_count) {
    throw Error(ErrorCode::wrong_paraphrase_count,
                "expected " + std::to_string(expected_count) + " paraphrase answers, got " +
                    std::to_string(paraphrased.size()));
  }
  ParaphraseOutcome out;
  for (const auto& p : paraphrased) {
    if (!answers_consistent(direct, p, policy, choices)) ++out.inconsistent;
  }
  out.verdict = out.inconsistent <= tolerance;
  return out;
}

void to_json(json& j, const BaselineConfig& c) {
  j = json{{"perplexity_threshold", c.perplexity_threshold},
           {"numeric_confidence_threshold", c.numeric_confidence_threshold},
           {"paraphrase_count", c.paraphrase_count},
           {"paraphrase_inconsistency_tolerance", c.paraphrase_inconsistency_tolerance}};
}

void from_json(const json& j, BaselineConfig& c) {
  c = BaselineConfig{};
  c.perplexity_threshold = j.value("perplexity_threshold", c.perplexity_threshold);
  c.numeric_confidence_threshold = j.value("numeric_confidence_threshold", c.numeric_confidence_threshold);
  c.paraphrase_count = j.value("paraphrase_count", c.paraphrase_count);
  c.paraphrase_inconsistency_tolerance =
      j.value("paraphrase_inconsistency_tolerance", c.paraphrase_inconsistency_tolerance);
}

}  // namespace decc
