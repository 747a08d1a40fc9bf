// decc: command-line driver for the reliability pipeline.
//
// Exit codes: 0 success, 1 fatal or usage error, 2 finished with per-sample
// errors (only with --strict).

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>

#include "CLI11.hpp"
#include "decc/backends.hpp"
#include "decc/error.hpp"
#include "decc/metrics.hpp"
#include "decc/pipeline.hpp"

namespace fs = std::filesystem;
using namespace decc;

namespace {

struct Overrides {
  std::string config;
  std::string dataset;
  std::vector<std::string> methods;
  std::string cache_dir;
  int concurrency = 0;
  std::size_t limit = 0;
  std::string output_dir;
};

void add_overrides(CLI::App* cmd, Overrides& o, bool with_output) {
  cmd->add_option("-c,--config", o.config, "Run config file (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--dataset", o.dataset, "Override the dataset path");
  cmd->add_option("--methods", o.methods, "Override the method set (comma separated)")->delimiter(',');
  cmd->add_option("--cache-dir", o.cache_dir, "Override the decomposition cache directory");
  cmd->add_option("--concurrency", o.concurrency, "Override the number of samples in flight")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--limit", o.limit, "Process at most this many samples")->check(CLI::PositiveNumber);
  if (with_output) cmd->add_option("-o,--output-dir", o.output_dir, "Override the report directory");
}

// Flag paths are taken relative to the working directory, config paths
// relative to the config file.
std::string absolute(const std::string& p) { return fs::absolute(p).lexically_normal().string(); }

RunConfig load(const Overrides& o) {
  auto cfg = load_run_config(o.config);
  if (!o.dataset.empty()) cfg.dataset = absolute(o.dataset);
  if (!o.methods.empty()) {
    cfg.methods.clear();
    for (const auto& m : o.methods) {
      try {
        cfg.methods.push_back(parse_method(m));
      } catch (const Error& e) {
        throw Error(ErrorCode::usage, e.what());
      }
    }
  }
  if (!o.cache_dir.empty()) cfg.cache_dir = absolute(o.cache_dir);
  if (o.concurrency > 0) cfg.concurrency = o.concurrency;
  if (o.limit > 0) cfg.limit = o.limit;
  if (!o.output_dir.empty()) cfg.output_dir = absolute(o.output_dir);
  if (const auto issues = validate_run_config(cfg); !issues.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& i : issues) msg += "\n  " + i;
    throw Error(ErrorCode::config, msg);
  }
  return cfg;
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io, "cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::validation, path + ": " + e.what());
  }
}

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v * 100.0);
  return buf;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

// ---- decompose ---------------------------------------------------------------

int cmd_decompose(const Overrides& o) {
  const auto cfg = load(o);
  if (!cfg.roles.decomposer) throw Error(ErrorCode::config, "no decomposer role configured");
  auto ingested = ingest_dataset(cfg.resolve(cfg.dataset));
  auto& samples = ingested.samples;
  if (cfg.limit && samples.size() > *cfg.limit) samples.resize(*cfg.limit);

  Evaluator evaluator(cfg);
  std::size_t fresh = 0;
  std::size_t cached = 0;
  std::size_t failed = 0;
  for (const auto& s : samples) {
    try {
      const auto [qs, hit] = evaluator.decompose(s);
      ++(hit ? cached : fresh);
    } catch (const Error& e) {
      ++failed;
      std::cerr << "decompose " << s.id << ": " << e.what() << "\n";
      if (e.code() == ErrorCode::transport || e.code() == ErrorCode::capability) break;
    }
  }
  std::cout << "samples: " << samples.size() << "\n"
            << "rejected lines: " << ingested.rejects.size() << "\n"
            << "new cache entries: " << fresh << "\n"
            << "already cached: " << cached << "\n"
            << "decomposer requests: " << evaluator.requests_sent(RoleKind::decomposer) << "\n";
  if (failed > 0) {
    std::cerr << failed << " sample(s) could not be decomposed\n";
    return 1;
  }
  return 0;
}

// ---- evaluate / record-fixture -------------------------------------------------

int finish_evaluation(const RunConfig& cfg, const ReliabilityReport& report, bool strict) {
  const auto out_dir = cfg.resolve(cfg.output_dir);
  write_report(report, out_dir);
  std::cout << render_markdown(report);
  std::cerr << "wrote " << (out_dir / "report.json").string() << " and report.md\n";
  if (report.samples_with_errors > 0) {
    std::cerr << report.samples_with_errors << " sample(s) had errors\n";
    if (strict) return 2;
  }
  return 0;
}

int cmd_evaluate(const Overrides& o, bool strict) {
  const auto cfg = load(o);
  return finish_evaluation(cfg, run_evaluation(cfg), strict);
}

int cmd_record(const Overrides& o, const std::string& fixture_dir, bool strict) {
  const auto cfg = load(o);
  const fs::path dir = absolute(fixture_dir);
  std::map<std::string, std::shared_ptr<ChatBackend>> shared;
  const BackendFactory factory = [&](const ModelRole& role) {
    auto& b = shared[role.endpoint];
    if (!b) b = std::make_shared<RecordingChatBackend>(make_backend(role, cfg.base_dir), dir);
    return b;
  };
  const int rc = finish_evaluation(cfg, run_evaluation(cfg, factory), strict);
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(dir)) files += e.path().extension() == ".json";
  std::cerr << "fixture " << dir.string() << " holds " << files << " exchange(s)\n";
  return rc;
}

// ---- sweep -------------------------------------------------------------------

struct SweepArgs {
  std::string report;
  std::string scores;
  std::string method;
  std::vector<double> thresholds;
  std::string direction;
  bool json_out = false;
};

int cmd_sweep(const SweepArgs& a) {
  if (a.thresholds.empty()) throw Error(ErrorCode::usage, "--thresholds needs at least one value");
  if (a.report.empty() == a.scores.empty()) throw Error(ErrorCode::usage, "give exactly one of --report or --scores");

  std::vector<ScoredSample> scores;
  ThresholdDirection dir = ThresholdDirection::reliable_if_leq;
  if (!a.report.empty()) {
    if (a.method.empty()) throw Error(ErrorCode::usage, "--method is required with --report");
    const Method m = parse_method(a.method);
    if (m == Method::numeric_conf) dir = ThresholdDirection::reliable_if_geq;
    const auto report = report_from_json(read_json_file(a.report));
    for (const auto& r : report.records) {
      if (r.method != m || r.errored()) continue;
      if (r.score) {
        scores.push_back({r.sample_id, *r.score, r.correct});
      } else if (m == Method::numeric_conf) {
        // No stated confidence never clears a threshold.
        scores.push_back({r.sample_id, -std::numeric_limits<double>::infinity(), r.correct});
      }
    }
    if (scores.empty()) {
      throw Error(ErrorCode::missing_scores, "report has no scored records for method " + a.method);
    }
  } else {
    std::ifstream in(a.scores);
    if (!in) throw Error(ErrorCode::io, "cannot open " + a.scores);
    std::string line;
    for (std::size_t n = 1; std::getline(in, line); ++n) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      try {
        const auto j = json::parse(line);
        scores.push_back({j.value("sample_id", std::to_string(n)), j.at("score").get<double>(),
                          j.at("correct").is_boolean() ? j.at("correct").get<bool>() : j.at("correct").get<int>() != 0});
      } catch (const json::exception& e) {
        throw Error(ErrorCode::validation, a.scores + ":" + std::to_string(n) + ": " + e.what());
      }
    }
    if (scores.empty()) throw Error(ErrorCode::missing_scores, a.scores + " holds no scores");
  }
  if (a.direction == "leq") dir = ThresholdDirection::reliable_if_leq;
  if (a.direction == "geq") dir = ThresholdDirection::reliable_if_geq;

  const auto result = sweep_threshold(scores, a.thresholds, dir);
  if (a.json_out) {
    json rows = json::array();
    for (std::size_t i = 0; i < result.rows.size(); ++i) {
      json row = result.rows[i];
      row["best"] = i == result.best;
      rows.push_back(std::move(row));
    }
    std::cout << json{{"direction", dir == ThresholdDirection::reliable_if_leq ? "leq" : "geq"},
                      {"samples", scores.size()},
                      {"rows", std::move(rows)}}
                     .dump(2)
              << "\n";
    return 0;
  }
  std::cout << "| Threshold | BS (x100) | Coverage (x100) |\n|---:|---:|---:|\n";
  for (std::size_t i = 0; i < result.rows.size(); ++i) {
    const auto& row = result.rows[i];
    std::string cells[3] = {num(row.threshold), pct(row.brier), pct(row.coverage)};
    if (i == result.best) {
      for (auto& c : cells) c = "**" + c + "**";
    }
    std::cout << "| " << cells[0] << " | " << cells[1] << " | " << cells[2] << " |\n";
  }
  return 0;
}

// ---- analyze-types ---------------------------------------------------------------

int cmd_analyze_types(const std::string& report_path, const std::string& questions_path, bool json_out) {
  if (report_path.empty() == questions_path.empty()) {
    throw Error(ErrorCode::usage, "give exactly one of --report or --questions");
  }
  std::vector<std::vector<std::string>> per_sample;
  if (!report_path.empty()) {
    const auto report = report_from_json(read_json_file(report_path));
    for (const auto& [id, pairs] : report.subquestions) {
      auto& qs = per_sample.emplace_back();
      for (const auto& p : pairs) qs.push_back(p.sub_question);
    }
  } else {
    // One question per line, or JSON objects with a "question" field. Each
    // question counts as its own sample.
    std::ifstream in(questions_path);
    if (!in) throw Error(ErrorCode::io, "cannot open " + questions_path);
    for (std::string line; std::getline(in, line);) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      std::string q = line;
      if (line.front() == '{') {
        try {
          q = json::parse(line).at("question").get<std::string>();
        } catch (const json::exception& e) {
          throw Error(ErrorCode::validation, questions_path + ": " + e.what());
        }
      }
      per_sample.push_back({q});
      if (!json_out) std::cout << to_string(classify_question_type(q)) << "\t" << q << "\n";
    }
  }
  const auto stats = question_type_stats(per_sample);
  if (json_out) {
    std::cout << json(stats).dump(2) << "\n";
    return 0;
  }
  if (!questions_path.empty()) std::cout << "\n";
  std::cout << "samples: " << stats.samples << "\nquestions: " << stats.total_questions << "\n";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", stats.mean_questions_per_sample);
  std::cout << "questions per sample: " << buf << "\n";
  std::snprintf(buf, sizeof buf, "%.2f", stats.mean_types_per_sample);
  std::cout << "types per sample: " << buf << "\n\n| Type | Count |\n|---|---:|\n";
  for (QuestionType t : kAllQuestionTypes) {
    const auto it = stats.histogram.find(t);
    std::cout << "| " << to_string(t) << " | " << (it == stats.histogram.end() ? 0 : it->second) << " |\n";
  }
  return 0;
}

// ---- report ------------------------------------------------------------------

int cmd_report(const std::string& report_path, const std::string& format, const std::string& out_path) {
  const auto j = read_json_file(report_path);
  const auto report = report_from_json(j);
  const std::string body = format == "json" ? report_to_json(report).dump(2) + "\n" : render_markdown(report);
  if (out_path.empty()) {
    std::cout << body;
  } else {
    std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
    out << body;
    if (!out) throw Error(ErrorCode::io, "cannot write " + out_path);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Answer-reliability estimation by question decomposition and consistency checking"};
  app.require_subcommand(1, 1);
  app.fallthrough(false);

  Overrides dec_o, eval_o, rec_o;
  bool eval_strict = false, rec_strict = false;
  std::string fixture_dir;

  auto* decompose = app.add_subcommand("decompose", "Precompute iteration-1 decompositions into the cache");
  add_overrides(decompose, dec_o, false);

  auto* evaluate = app.add_subcommand("evaluate", "Run every configured method and write report.json / report.md");
  add_overrides(evaluate, eval_o, true);
  evaluate->add_flag("--strict", eval_strict, "Exit with status 2 when any sample had errors");

  SweepArgs sweep_args;
  auto* sweep = app.add_subcommand("sweep", "Brier Score and coverage over a list of thresholds");
  sweep->add_option("--report", sweep_args.report, "report.json from a previous evaluate run");
  sweep->add_option("--scores", sweep_args.scores, "JSONL of {sample_id, score, correct}");
  sweep->add_option("--method", sweep_args.method, "Method whose scores to sweep (perplexity, paraphrase, numeric_conf)");
  sweep->add_option("--thresholds", sweep_args.thresholds, "Comma-separated thresholds")->delimiter(',')->required();
  sweep->add_option("--direction", sweep_args.direction, "leq: reliable if score <= t; geq: reliable if score >= t")
      ->check(CLI::IsMember({"leq", "geq"}));
  sweep->add_flag("--json", sweep_args.json_out, "Emit JSON instead of a markdown table");

  std::string types_report, types_questions;
  bool types_json = false;
  auto* types = app.add_subcommand("analyze-types", "Question-type statistics");
  types->add_option("--report", types_report, "report.json whose sub-questions to classify");
  types->add_option("--questions", types_questions, "Text file (one question per line) or JSONL with \"question\"");
  types->add_flag("--json", types_json, "Emit JSON");

  std::string report_path, report_format = "md", report_out;
  auto* report = app.add_subcommand("report", "Re-render a report.json");
  report->add_option("--report", report_path, "report.json to render")->required()->check(CLI::ExistingFile);
  report->add_option("--format", report_format, "md or json")->check(CLI::IsMember({"md", "json"}));
  report->add_option("-o,--output", report_out, "Write to this file instead of stdout");

  auto* record = app.add_subcommand("record-fixture", "Run an evaluation while recording every exchange for replay");
  add_overrides(record, rec_o, true);
  record->add_option("--fixture-dir", fixture_dir, "Directory receiving <request_hash>.json records")->required();
  record->add_flag("--strict", rec_strict, "Exit with status 2 when any sample had errors");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*decompose) return cmd_decompose(dec_o);
    if (*evaluate) return cmd_evaluate(eval_o, eval_strict);
    if (*sweep) return cmd_sweep(sweep_args);
    if (*types) return cmd_analyze_types(types_report, types_questions, types_json);
    if (*report) return cmd_report(report_path, report_format, report_out);
    if (*record) return cmd_record(rec_o, fixture_dir, rec_strict);
  } catch (const Error& e) {
    std::cerr << "error (" << to_string(e.code()) << "): " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
