#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "decc/core_model.hpp"
#include "decc/kernels.hpp"

namespace decc {

using kernels::ThresholdDirection;

struct MetricSummary {
  std::size_t n = 0;  // records that contributed (errored ones excluded)
  double brier = 0.0;
  double effective_reliability = 0.0;
  double coverage = 0.0;
  std::optional<double> risk;  // accuracy over covered records; absent at zero coverage
  double accuracy = 0.0;
  std::size_t errored = 0;

  bool operator==(const MetricSummary&) const = default;
};

/// Aggregates non-errored records. Returns an all-zero summary with n = 0 when
/// nothing is left to score.
MetricSummary summarize(std::span<const ReliabilityRecord> records);

/// Mean of (R_i - Acc_i)^2 over non-errored records. Throws EmptyInput.
double brier_score(std::span<const ReliabilityRecord> records);

/// Mean per-answer score: +1 answered and correct, -1 answered and wrong,
/// 0 abstained. Throws EmptyInput.
double effective_reliability(std::span<const ReliabilityRecord> records);

struct ScoredSample {
  std::string sample_id;
  double score = 0.0;
  bool correct = false;
};

struct SweepRow {
  double threshold = 0.0;
  double brier = 0.0;
  double coverage = 0.0;

  bool operator==(const SweepRow&) const = default;
};

struct SweepResult {
  std::vector<SweepRow> rows;  // ascending threshold
  std::size_t best = 0;        // minimum Brier; ties go to the lower threshold
};

SweepResult sweep_threshold(std::span<const ScoredSample> scores, std::span<const double> thresholds,
                            ThresholdDirection direction);

enum class QuestionType { yes_no, color, number, how, why, what_which, when, where, who, others };

inline constexpr QuestionType kAllQuestionTypes[] = {
    QuestionType::yes_no, QuestionType::color, QuestionType::number, QuestionType::how,
    QuestionType::why,    QuestionType::what_which, QuestionType::when, QuestionType::where,
    QuestionType::who,    QuestionType::others,
};

std::string_view to_string(QuestionType t);
QuestionType parse_question_type(std::string_view s);

/// String-matching question categorizer. Precedence: number ("how many",
/// "number of"), color ("color"/"colour" anywhere), the interrogatives how,
/// why, what/which, when, where, who (leading word or right after a comma),
/// a leading auxiliary verb (yes/no), otherwise others.
QuestionType classify_question_type(std::string_view question);

struct QuestionTypeStats {
  std::size_t samples = 0;
  std::size_t total_questions = 0;
  double mean_questions_per_sample = 0.0;
  double mean_types_per_sample = 0.0;
  std::map<QuestionType, std::size_t> histogram;  // every type present, possibly 0
};

/// One inner vector of (sub-)questions per sample.
QuestionTypeStats question_type_stats(std::span<const std::vector<std::string>> per_sample);

/// Expected seconds per sample when the second iteration runs for only
/// n_second of n_total samples:
///   (n_total * sum(first-iteration per-sample s) + n_second * sum(second-iteration per-sample s)) / n_total
/// Stages outside the two decomposition iterations are ignored. Throws BadCounts.
double expected_cost(std::span<const StageCost> stage_costs, std::uint64_t n_total, std::uint64_t n_second);

void to_json(json& j, const MetricSummary& m);
void from_json(const json& j, MetricSummary& m);
void to_json(json& j, const SweepRow& r);
void to_json(json& j, const QuestionTypeStats& s);

}  // namespace decc
