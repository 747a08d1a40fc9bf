#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <set>

#include "decc/error.hpp"
#include "decc/pipeline.hpp"
#include "decc/prompts.hpp"

namespace decc {
namespace fs = std::filesystem;

namespace {

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v * 100.0);
  return buf;
}

std::string fixed(double v, int digits = 2) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

const MetricSummary* find_summary(const ReliabilityReport& r, Method m, const std::string& dataset) {
  for (const auto& s : r.summaries) {
    if (s.method == m && s.dataset_id == dataset) return &s.summary;
  }
  return nullptr;
}

std::vector<Method> report_methods(const ReliabilityReport& r) {
  std::vector<Method> out;
  for (const auto& s : r.summaries) {
    if (s.dataset_id.empty()) out.push_back(s.method);
  }
  return out;
}

QuestionTypeStats stats_from(const std::map<std::string, std::vector<SubQA>>& subquestions) {
  std::vector<std::vector<std::string>> per_sample;
  for (const auto& [id, pairs] : subquestions) {
    if (pairs.empty()) continue;
    auto& qs = per_sample.emplace_back();
    for (const auto& p : pairs) qs.push_back(p.sub_question);
  }
  return question_type_stats(per_sample);
}

}  // namespace

ReliabilityReport assemble_report(const RunConfig& cfg, std::span<const Sample> samples,
                                  std::span<const SampleRun> runs, std::vector<IngestReject> rejects) {
  if (samples.size() != runs.size()) throw Error(ErrorCode::validation, "one run per sample expected");
  ReliabilityReport rep;

  json endpoints = json::object();
  for (const auto* role : {&cfg.roles.decomposer, &cfg.roles.candidate_vlm, &cfg.roles.llm_reasoner}) {
    if (*role) {
      endpoints[std::string(to_string((*role)->role))] = {{"endpoint", (*role)->endpoint},
                                                          {"model", (*role)->model_name}};
    }
  }
  json methods = json::array();
  for (Method m : cfg.methods) methods.push_back(to_string(m));
  rep.header = {{"config_hash", config_hash(cfg)},
                {"prompt_asset_hash", prompt_asset_hash()},
                {"dataset", cfg.dataset},
                {"methods", std::move(methods)},
                {"endpoints", std::move(endpoints)},
                {"baselines", cfg.baselines},
                {"max_subquestions", cfg.max_subquestions}};

  std::set<std::string> datasets;
  for (const auto& s : samples) datasets.insert(s.dataset_id);
  rep.dataset_ids.assign(datasets.begin(), datasets.end());

  std::map<Stage, StageCost> costs;
  for (Stage st : kAllStages) costs[st] = StageCost{st, 0, 0.0};
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const auto& run = runs[i];
    bool any_error = false;
    for (const auto& rec : run.records) {
      rep.records.push_back(rec);
      any_error = any_error || rec.errored();
    }
    if (any_error) ++rep.samples_with_errors;
    for (const auto& c : run.costs) {
      costs[c.stage].samples_touched += c.samples_touched;
      costs[c.stage].wall_seconds_total += c.wall_seconds_total;
    }
    if (!run.subqa.empty()) rep.subquestions[samples[i].id] = run.subqa;
  }
  rep.samples = samples.size();
  for (Stage st : kAllStages) rep.stage_costs.push_back(costs[st]);

  for (Method m : cfg.methods) {
    std::vector<ReliabilityRecord> all;
    std::map<std::string, std::vector<ReliabilityRecord>> by_dataset;
    for (const auto& rec : rep.records) {
      if (rec.method != m) continue;
      all.push_back(rec);
      by_dataset[rec.dataset_id].push_back(rec);
    }
    rep.summaries.push_back({m, "", summarize(all)});
    for (const auto& d : rep.dataset_ids) rep.summaries.push_back({m, d, summarize(by_dataset[d])});
  }

  rep.n_first = costs[Stage::decompose_1].samples_touched;
  rep.n_second = costs[Stage::decompose_2].samples_touched;
  if (rep.n_first > 0 && rep.n_second <= rep.n_first) {
    rep.expected_cost = expected_cost(rep.stage_costs, rep.n_first, rep.n_second);
  }
  rep.question_types = stats_from(rep.subquestions);
  rep.rejects = std::move(rejects);
  return rep;
}

ReliabilityReport run_evaluation(const RunConfig& cfg, BackendFactory factory) {
  if (const auto issues = validate_run_config(cfg); !issues.empty()) {
    std::string msg = "invalid run config:";
    for (const auto& i : issues) msg += " " + i + ";";
    throw Error(ErrorCode::config, msg);
  }
  auto ingested = ingest_dataset(cfg.resolve(cfg.dataset));
  auto& samples = ingested.samples;
  if (cfg.limit && samples.size() > *cfg.limit) samples.resize(*cfg.limit);
  if (samples.empty()) throw Error(ErrorCode::validation, "dataset " + cfg.dataset + " has no valid samples");

  Evaluator evaluator(cfg, std::move(factory));
  std::vector<SampleRun> runs(samples.size());
  std::exception_ptr fatal;
  std::mutex fatal_mu;
  const long n = static_cast<long>(samples.size());

  // Stage ordering inside a sample stays sequential; samples run side by side.
#pragma omp parallel for schedule(dynamic, 1) num_threads(cfg.concurrency)
  for (long i = 0; i < n; ++i) {
    try {
      runs[static_cast<std::size_t>(i)] = evaluator.run_sample(samples[static_cast<std::size_t>(i)]);
    } catch (...) {
      std::lock_guard lock(fatal_mu);
      if (!fatal) fatal = std::current_exception();
    }
  }
  if (fatal) std::rethrow_exception(fatal);

  return assemble_report(cfg, samples, runs, std::move(ingested.rejects));
}

json report_to_json(const ReliabilityReport& r) {
  json summaries = json::array();
  for (const auto& s : r.summaries) {
    json j = s.summary;
    j["method"] = to_string(s.method);
    j["dataset_id"] = s.dataset_id.empty() ? json(nullptr) : json(s.dataset_id);
    summaries.push_back(std::move(j));
  }
  json subquestions = json::object();
  for (const auto& [id, pairs] : r.subquestions) subquestions[id] = pairs;

  return json{{"header", r.header},
              {"samples", r.samples},
              {"samples_with_errors", r.samples_with_errors},
              {"dataset_ids", r.dataset_ids},
              {"summaries", std::move(summaries)},
              {"stage_costs", r.stage_costs},
              {"cost",
               {{"n_first", r.n_first},
                {"n_second", r.n_second},
                {"expected_seconds_per_sample", r.expected_cost ? json(*r.expected_cost) : json(nullptr)}}},
              {"question_types", r.question_types},
              {"records", r.records},
              {"subquestions", std::move(subquestions)},
              {"rejects", r.rejects}};
}

ReliabilityReport report_from_json(const json& j) {
  try {
    ReliabilityReport r;
    r.header = j.at("header");
    j.at("samples").get_to(r.samples);
    j.at("samples_with_errors").get_to(r.samples_with_errors);
    j.at("dataset_ids").get_to(r.dataset_ids);
    for (const auto& s : j.at("summaries")) {
      MethodSummary ms;
      ms.method = parse_method(s.at("method").get<std::string>());
      ms.dataset_id = s.at("dataset_id").is_null() ? std::string{} : s.at("dataset_id").get<std::string>();
      ms.summary = s.get<MetricSummary>();
      r.summaries.push_back(std::move(ms));
    }
    j.at("stage_costs").get_to(r.stage_costs);
    const auto& cost = j.at("cost");
    cost.at("n_first").get_to(r.n_first);
    cost.at("n_second").get_to(r.n_second);
    if (!cost.at("expected_seconds_per_sample").is_null()) {
      r.expected_cost = cost.at("expected_seconds_per_sample").get<double>();
    }
    j.at("records").get_to(r.records);
    for (const auto& [id, pairs] : j.at("subquestions").items()) r.subquestions[id] = pairs.get<std::vector<SubQA>>();
    j.at("rejects").get_to(r.rejects);
    r.question_types = stats_from(r.subquestions);
    return r;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::validation, std::string("malformed report: ") + e.what());
  }
}

std::string render_markdown(const ReliabilityReport& r) {
  std::string md = "# Reliability report\n\n";
  const auto header_str = [&](const char* key) {
    return r.header.contains(key) && r.header.at(key).is_string() ? r.header.at(key).get<std::string>()
                                                                   : std::string("?");
  };
  md += "- config: `" + header_str("config_hash").substr(0, 16) + "`\n";
  md += "- prompt assets: `" + header_str("prompt_asset_hash").substr(0, 16) + "`\n";
  md += "- samples: " + std::to_string(r.samples) + " (" + std::to_string(r.samples_with_errors) +
        " with errors, " + std::to_string(r.rejects.size()) + " rejected lines)\n\n";

  const auto methods = report_methods(r);

  md += "## BS / ER by dataset (x100)\n\n| Method |";
  std::string rule = "|---|";
  for (const auto& d : r.dataset_ids) {
    md += " " + d + " BS | " + d + " ER |";
    rule += "---:|---:|";
  }
  md += "\n" + rule + "\n";
  for (Method m : methods) {
    md += "| " + std::string(to_string(m)) + " |";
    for (const auto& d : r.dataset_ids) {
      const auto* s = find_summary(r, m, d);
      if (!s || s->n == 0) {
        md += " - | - |";
      } else {
        md += " " + pct(s->brier) + " | " + pct(s->effective_reliability) + " |";
      }
    }
    md += "\n";
  }

  md += "\n## All datasets\n\n| Method | N | Errored | Acc | Coverage | Risk | BS | ER |\n"
        "|---|---:|---:|---:|---:|---:|---:|---:|\n";
  for (Method m : methods) {
    const auto* s = find_summary(r, m, "");
    if (!s) continue;
    md += "| " + std::string(to_string(m)) + " | " + std::to_string(s->n) + " | " + std::to_string(s->errored) +
          " | " + pct(s->accuracy) + " | " + pct(s->coverage) + " | " + (s->risk ? pct(*s->risk) : "n/a") +
          " | " + pct(s->brier) + " | " + pct(s->effective_reliability) + " |\n";
  }

  md += "\n## Stage costs\n\n| Stage | Samples | Total s | Per-sample s |\n|---|---:|---:|---:|\n";
  for (const auto& c : r.stage_costs) {
    if (c.samples_touched == 0) continue;
    md += "| " + std::string(to_string(c.stage)) + " | " + std::to_string(c.samples_touched) + " | " +
          fixed(c.wall_seconds_total) + " | " + fixed(c.per_sample_seconds()) + " |\n";
  }
  if (r.expected_cost) {
    md += "\nExpected decomposition cost: " + fixed(*r.expected_cost) + " s/sample (second iteration on " +
          std::to_string(r.n_second) + " of " + std::to_string(r.n_first) + " samples)\n";
  }

  if (r.question_types.total_questions > 0) {
    const auto& q = r.question_types;
    md += "\n## Sub-question types\n\n" + std::to_string(q.total_questions) + " sub-questions over " +
          std::to_string(q.samples) + " samples; " + fixed(q.mean_questions_per_sample) + " per sample, " +
          fixed(q.mean_types_per_sample) + " distinct types per sample.\n\n| Type | Count |\n|---|---:|\n";
    for (QuestionType t : kAllQuestionTypes) {
      const auto it = q.histogram.find(t);
      md += "| " + std::string(to_string(t)) + " | " + std::to_string(it == q.histogram.end() ? 0 : it->second) +
            " |\n";
    }
  }

  if (!r.rejects.empty()) {
    md += "\n## Rejected dataset lines\n\n";
    for (const auto& rej : r.rejects) md += "- line " + std::to_string(rej.line) + ": " + rej.reason + "\n";
  }
  return md;
}

void write_report(const ReliabilityReport& r, const fs::path& dir) {
  fs::create_directories(dir);
  const auto write = [](const fs::path& p, const std::string& body) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << body;
    if (!out) throw Error(ErrorCode::io, "cannot write " + p.string());
  };
  write(dir / "report.json", report_to_json(r).dump(2) + "\n");
  write(dir / "report.md", render_markdown(r));
}

}  // namespace decc
