#include "decc/metrics.hpp"

#include <algorithm>
#include <set>

#include "decc/error.hpp"
#include "text_util.hpp"

namespace decc {
namespace {

struct Columns {
  std::vector<std::uint8_t> verdicts;
  std::vector<std::uint8_t> correct;
  std::size_t errored = 0;
};

Columns to_columns(std::span<const ReliabilityRecord> records) {
  Columns c;
  c.verdicts.reserve(records.size());
  c.correct.reserve(records.size());
  for (const auto& r : records) {
    if (r.errored()) {
      ++c.errored;
      continue;
    }
    c.verdicts.push_back(r.verdict ? 1 : 0);
    c.correct.push_back(r.correct ? 1 : 0);
  }
  return c;
}

kernels::BinaryCounts counts_or_throw(std::span<const ReliabilityRecord> records, const char* what) {
  const Columns c = to_columns(records);
  if (c.verdicts.empty()) {
    throw Error(ErrorCode::empty_input, std::string(what) + ": no non-errored records");
  }
  return kernels::parallel::count(c.verdicts, c.correct);
}

double brier_from(const kernels::BinaryCounts& c) {
  // (R - Acc)^2 is 1 exactly when they disagree.
  return static_cast<double>(c.disagree) / static_cast<double>(c.n);
}

double er_from(const kernels::BinaryCounts& c) {
  const auto covered_wrong = c.covered - c.covered_correct;
  return (static_cast<double>(c.covered_correct) - static_cast<double>(covered_wrong)) /
         static_cast<double>(c.n);
}

// Tokens of lowercase alphanumerics; `after_comma` marks tokens that directly
// follow a comma.
struct Token {
  std::string word;
  bool after_comma = false;
};

std::vector<Token> tokenize(std::string_view q) {
  std::vector<Token> tokens;
  std::string cur;
  bool comma_pending = false;
  bool cur_after_comma = false;
  auto flush = [&] {
    if (!cur.empty()) tokens.push_back({cur, cur_after_comma});
    cur.clear();
  };
  for (char ch : q) {
    const char c = text::lower(ch);
    const bool alnum = (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '\'';
    if (alnum) {
      if (cur.empty()) {
        cur_after_comma = comma_pending;
        comma_pending = false;
      }
      cur.push_back(c);
    } else {
      flush();
      if (c == ',') comma_pending = true;
    }
  }
  flush();
  return tokens;
}

bool has_bigram(const std::vector<Token>& t, std::string_view a, std::string_view b) {
  for (std::size_t i = 0; i + 1 < t.size(); ++i) {
    if (t[i].word == a && t[i + 1].word == b) return true;
  }
  return false;
}

bool interrogative_at_clause_start(const std::vector<Token>& t, std::initializer_list<std::string_view> words) {
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (i != 0 && !t[i].after_comma) continue;
    for (auto w : words) {
      if (t[i].word == w) return true;
    }
  }
  return false;
}

}  // namespace

MetricSummary summarize(std::span<const ReliabilityRecord> records) {
  const Columns cols = to_columns(records);
  MetricSummary m;
  m.errored = cols.errored;
  if (cols.verdicts.empty()) return m;
  const auto c = kernels::parallel::count(cols.verdicts, cols.correct);
  const auto n = static_cast<double>(c.n);
  m.n = c.n;
  m.brier = brier_from(c);
  m.effective_reliability = er_from(c);
  m.coverage = static_cast<double>(c.covered) / n;
  if (c.covered > 0) m.risk = static_cast<double>(c.covered_correct) / static_cast<double>(c.covered);
  m.accuracy = static_cast<double>(c.correct) / n;
  return m;
}

double brier_score(std::span<const ReliabilityRecord> records) {
  return brier_from(counts_or_throw(records, "brier_score"));
}

double effective_reliability(std::span<const ReliabilityRecord> records) {
  return er_from(counts_or_throw(records, "effective_reliability"));
}

SweepResult sweep_threshold(std::span<const ScoredSample> scores, std::span<const double> thresholds,
                            ThresholdDirection direction) {
  if (thresholds.empty()) throw Error(ErrorCode::empty_input, "sweep_threshold: no thresholds");
  if (scores.empty()) throw Error(ErrorCode::empty_input, "sweep_threshold: no scored samples");

  std::vector<double> sorted(thresholds.begin(), thresholds.end());
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());

  std::vector<double> values;
  std::vector<std::uint8_t> correct;
  values.reserve(scores.size());
  correct.reserve(scores.size());
  for (const auto& s : scores) {
    values.push_back(s.score);
    correct.push_back(s.correct ? 1 : 0);
  }

  std::vector<kernels::BinaryCounts> counts(sorted.size());
  kernels::parallel::sweep(values, correct, sorted, direction, counts);

  SweepResult result;
  result.rows.reserve(sorted.size());
  for (std::size_t k = 0; k < sorted.size(); ++k) {
    const auto& c = counts[k];
    result.rows.push_back(SweepRow{sorted[k], brier_from(c),
                                   static_cast<double>(c.covered) / static_cast<double>(c.n)});
    // Strict < keeps the earliest (lowest) threshold among ties.
    if (result.rows[k].brier < result.rows[result.best].brier) result.best = k;
  }
  return result;
}

std::string_view to_string(QuestionType t) {
  switch (t) {
    case QuestionType::yes_no: return "yes/no";
    case QuestionType::color: return "color";
    case QuestionType::number: return "number";
    case QuestionType::how: return "how";
    case QuestionType::why: return "why";
    case QuestionType::what_which: return "what/which";
    case QuestionType::when: return "when";
    case QuestionType::where: return "where";
    case QuestionType::who: return "who";
    case QuestionType::others: return "others";
  }
  return "others";
}

QuestionType parse_question_type(std::string_view s) {
  for (auto t : kAllQuestionTypes) {
    if (to_string(t) == s) return t;
  }
  throw Error(ErrorCode::validation, "unknown question type '" + std::string(s) + "'");
}

QuestionType classify_question_type(std::string_view question) {
  const auto tokens = tokenize(question);
  if (tokens.empty()) return QuestionType::others;

  if (has_bigram(tokens, "how", "many") || has_bigram(tokens, "number", "of")) return QuestionType::number;
  if (text::to_lower(question).find("color") != std::string::npos ||
      text::to_lower(question).find("colour") != std::string::npos) {
    return QuestionType::color;
  }
  if (interrogative_at_clause_start(tokens, {"how"})) return QuestionType::how;
  if (interrogative_at_clause_start(tokens, {"why"})) return QuestionType::why;
  if (interrogative_at_clause_start(tokens, {"what", "which"})) return QuestionType::what_which;
  if (interrogative_at_clause_start(tokens, {"when"})) return QuestionType::when;
  if (interrogative_at_clause_start(tokens, {"where"})) return QuestionType::where;
  if (interrogative_at_clause_start(tokens, {"who", "whom", "whose"})) return QuestionType::who;

  static const std::set<std::string, std::less<>> kAuxiliaries = {
      "is", "are", "does", "do", "did", "was", "were", "can", "could", "has", "have"};
  if (kAuxiliaries.contains(tokens.front().word)) return QuestionType::yes_no;
  return QuestionType::others;
}

QuestionTypeStats question_type_stats(std::span<const std::vector<std::string>> per_sample) {
  QuestionTypeStats stats;
  for (auto t : kAllQuestionTypes) stats.histogram[t] = 0;
  std::size_t distinct_total = 0;
  for (const auto& questions : per_sample) {
    std::set<QuestionType> seen;
    for (const auto& q : questions) {
      const auto t = classify_question_type(q);
      ++stats.histogram[t];
      seen.insert(t);
    }
    stats.total_questions += questions.size();
    distinct_total += seen.size();
  }
  stats.samples = per_sample.size();
  if (stats.samples > 0) {
    stats.mean_questions_per_sample = static_cast<double>(stats.total_questions) / static_cast<double>(stats.samples);
    stats.mean_types_per_sample = static_cast<double>(distinct_total) / static_cast<double>(stats.samples);
  }
  return stats;
}

double expected_cost(std::span<const StageCost> stage_costs, std::uint64_t n_total, std::uint64_t n_second) {
  if (n_total == 0) throw Error(ErrorCode::bad_counts, "expected_cost: n_total must be positive");
  if (n_second > n_total) throw Error(ErrorCode::bad_counts, "expected_cost: n_second exceeds n_total");
  double first = 0.0;
  double second = 0.0;
  for (const auto& c : stage_costs) {
    if (is_first_iteration_stage(c.stage)) first += c.per_sample_seconds();
    if (is_second_iteration_stage(c.stage)) second += c.per_sample_seconds();
  }
  const auto total = static_cast<double>(n_total);
  return (total * first + static_cast<double>(n_second) * second) / total;
}

void to_json(json& j, const MetricSummary& m) {
  j = json{{"n", m.n},
           {"brier", m.brier},
           {"effective_reliability", m.effective_reliability},
           {"coverage", m.coverage},
           {"accuracy", m.accuracy},
           {"errored", m.errored}};
  j["risk"] = m.risk ? json(*m.risk) : json(nullptr);
}

void from_json(const json& j, MetricSummary& m) {
  j.at("n").get_to(m.n);
  j.at("brier").get_to(m.brier);
  j.at("effective_reliability").get_to(m.effective_reliability);
  j.at("coverage").get_to(m.coverage);
  j.at("accuracy").get_to(m.accuracy);
  j.at("errored").get_to(m.errored);
  if (j.contains("risk") && !j.at("risk").is_null()) m.risk = j.at("risk").get<double>();
}

void to_json(json& j, const SweepRow& r) {
  j = json{{"threshold", r.threshold}, {"brier", r.brier}, {"coverage", r.coverage}};
}

void to_json(json& j, const QuestionTypeStats& s) {
  json hist = json::object();
  for (const auto& [t, n] : s.histogram) hist[std::string(to_string(t))] = n;
  j = json{{"samples", s.samples},
           {"total_questions", s.total_questions},
           {"mean_questions_per_sample", s.mean_questions_per_sample},
           {"mean_types_per_sample", s.mean_types_per_sample},
           {"histogram", hist}};
}

}  // namespace decc
