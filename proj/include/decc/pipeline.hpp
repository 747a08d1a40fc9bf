#pragma once

// Per-sample orchestration, dataset ingestion, the decomposition cache and
// report assembly.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "decc/baselines.hpp"
#include "decc/consistency.hpp"
#include "decc/core_model.hpp"
#include "decc/gateway.hpp"
#include "decc/metrics.hpp"

namespace decc {

struct RoleSet {
  std::optional<ModelRole> decomposer;
  std::optional<ModelRole> candidate_vlm;
  std::optional<ModelRole> llm_reasoner;
};

struct RunConfig {
  std::string dataset;
  std::vector<Method> methods;
  RoleSet roles;
  BaselineConfig baselines;
  std::string cache_dir;  // empty: no decomposition cache
  int concurrency = 4;
  std::optional<std::size_t> limit;
  std::string output_dir = "out";
  std::size_t max_subquestions = 8;
  RetryPolicy retry;
  bool case_fold = true;
  bool strip_punctuation = true;

  // Directory relative paths are resolved against (the config file's
  // directory). Not serialized.
  std::filesystem::path base_dir;

  std::filesystem::path resolve(const std::string& p) const;
  bool has_method(Method m) const;
};

std::vector<std::string> validate_run_config(const RunConfig& c);

/// Parses and validates a config file. Throws Error(config) / Error(io).
RunConfig load_run_config(const std::filesystem::path& path);

/// Hash over the fields that influence results; output_dir, cache_dir and
/// concurrency are left out so relocated or re-threaded runs hash the same.
std::string config_hash(const RunConfig& c);

void to_json(json& j, const RunConfig& c);
void from_json(const json& j, RunConfig& c);

// ---- ingestion ---------------------------------------------------------------

struct IngestReject {
  std::size_t line = 0;  // 1-based
  std::string reason;

  bool operator==(const IngestReject&) const = default;
};

struct IngestResult {
  std::vector<Sample> samples;
  std::vector<IngestReject> rejects;
};

/// One JSON object per line. Blank lines are skipped; malformed or invalid
/// lines (and repeated ids within a dataset) become rejects. Throws Error(io).
IngestResult ingest_dataset(const std::filesystem::path& path);

void to_json(json& j, const IngestReject& r);
void from_json(const json& j, IngestReject& r);

// ---- decomposition cache ---------------------------------------------------

struct SubQACacheKey {
  std::string dataset_id;
  std::string sample_id;
  std::string model_name;
  std::string params_hash;
  int iteration = 1;
  std::string kind = "subq";  // "subq" or "paraphrase"
  // Hash of the iteration-1 sub-QA block an iteration-2 decomposition was
  // conditioned on; empty for iteration 1.
  std::string prior_hash;

  bool operator==(const SubQACacheKey&) const = default;
};

struct SubQACacheEntry {
  SubQACacheKey key;
  std::vector<SubQA> subqa;  // sub-answers are left empty; they depend on the candidate
  std::string raw_text;
  double elapsed_seconds = 0.0;
};

void to_json(json& j, const SubQACacheKey& k);
void from_json(const json& j, SubQACacheKey& k);
void to_json(json& j, const SubQACacheEntry& e);
void from_json(const json& j, SubQACacheEntry& e);

/// Append-only JSONL store, one file per (dataset_id, decomposer model).
/// A line that fails to parse is skipped and counted; later lines for the same
/// key replace earlier ones. Thread-safe.
class SubQACache {
 public:
  /// An empty `dir` gives an in-memory cache that never touches disk.
  explicit SubQACache(std::filesystem::path dir);

  std::optional<SubQACacheEntry> get(const SubQACacheKey& key) const;
  void put(const SubQACacheEntry& entry);

  std::size_t size() const;
  std::size_t corrupted_lines() const { return corrupted_; }

  static std::string file_name(const std::string& dataset_id, const std::string& model_name);

 private:
  std::filesystem::path dir_;
  mutable std::mutex mu_;
  std::map<std::string, SubQACacheEntry> entries_;
  std::size_t corrupted_ = 0;
};

// ---- per-sample execution ----------------------------------------------------

using BackendFactory = std::function<std::shared_ptr<ChatBackend>(const ModelRole&)>;

struct SampleRun {
  std::vector<ReliabilityRecord> records;  // config method order
  std::vector<SubQA> subqa;                // iteration 1 then iteration 2
  std::vector<std::string> paraphrases;
  std::vector<StageCost> costs;            // stages this sample touched
  bool second_iteration = false;
  std::optional<bool> first_iter_disagree;  // multi_agent only
};

class Evaluator {
 public:
  /// Builds one gateway per configured role. Without a factory, backends come
  /// from make_backend (HTTP or replay directory).
  explicit Evaluator(RunConfig cfg, BackendFactory factory = nullptr);

  const RunConfig& config() const { return cfg_; }
  SubQACache& cache() { return *cache_; }

  /// Every configured method for one sample; the direct answer is shared.
  SampleRun run_sample(const Sample& s);
  /// DeCC methods only.
  SampleRun run_decc_sample(const Sample& s);
  /// Baseline methods only.
  SampleRun run_baseline_sample(const Sample& s);

  /// Iteration-1 decomposition only (cache-aware). Returns the sub-questions
  /// and whether the cache answered. Throws on backend failure.
  std::pair<std::vector<std::string>, bool> decompose(const Sample& s);

  std::uint64_t requests_sent(RoleKind role) const;

 private:
  SampleRun run(const Sample& s, bool decc, bool baselines);

  RunConfig cfg_;
  std::unique_ptr<SubQACache> cache_;
  std::map<RoleKind, std::shared_ptr<ModelGateway>> gateways_;
};

// ---- evaluation ------------------------------------------------------------

struct MethodSummary {
  Method method = Method::multi_agent;
  std::string dataset_id;  // empty for the all-datasets row
  MetricSummary summary;
};

struct ReliabilityReport {
  json header;
  std::vector<std::string> dataset_ids;     // sorted
  std::vector<ReliabilityRecord> records;   // sample order, then method order
  std::vector<MethodSummary> summaries;     // per method: overall, then per dataset
  std::vector<StageCost> stage_costs;       // every stage, fixed order
  std::uint64_t n_first = 0;                // samples that ran decomposition iteration 1
  std::uint64_t n_second = 0;               // ... and iteration 2
  std::optional<double> expected_cost;
  QuestionTypeStats question_types;
  std::map<std::string, std::vector<SubQA>> subquestions;  // by sample id
  std::vector<IngestReject> rejects;
  std::size_t samples = 0;
  std::size_t samples_with_errors = 0;
};

/// Folds per-sample runs (in dataset order) into a report. Pure.
ReliabilityReport assemble_report(const RunConfig& cfg, std::span<const Sample> samples,
                                  std::span<const SampleRun> runs, std::vector<IngestReject> rejects);

/// Ingests the dataset, runs every sample with bounded concurrency and
/// assembles the report. Only config- and dataset-level failures throw.
ReliabilityReport run_evaluation(const RunConfig& cfg, BackendFactory factory = nullptr);

json report_to_json(const ReliabilityReport& r);
ReliabilityReport report_from_json(const json& j);

/// Methods x datasets grid (BS and ER, x100) followed by per-method detail,
/// stage costs and question-type counts.
std::string render_markdown(const ReliabilityReport& r);

/// Writes report.json and report.md into `dir`.
void write_report(const ReliabilityReport& r, const std::filesystem::path& dir);

}  // namespace decc
