#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "decc/error.hpp"
#include "decc/hash.hpp"
#include "decc/pipeline.hpp"
#include "text_util.hpp"

namespace decc {
namespace fs = std::filesystem;

namespace {

const std::set<std::string, std::less<>> kConfigKeys{
    "dataset", "methods",     "roles",           "baselines", "cache_dir", "concurrency",
    "limit",   "output_dir",  "max_subquestions", "retry",    "match",
};

ModelRole parse_role(const json& j, RoleKind kind) {
  json tagged = j;
  if (tagged.contains("role") && tagged.at("role") != to_string(kind)) {
    throw Error(ErrorCode::config, "roles." + std::string(to_string(kind)) + " declares role " +
                                       tagged.at("role").dump());
  }
  tagged["role"] = to_string(kind);
  return tagged.get<ModelRole>();
}

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

std::string sanitize(std::string_view s) {
  std::string out;
  for (char c : s) {
    const bool keep = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
                      c == '-' || c == '_' || c == '.';
    out.push_back(keep ? c : '_');
  }
  return out.empty() ? "_" : out;
}

}  // namespace

fs::path RunConfig::resolve(const std::string& p) const {
  fs::path path(p);
  if (path.is_relative() && !base_dir.empty()) return base_dir / path;
  return path;
}

bool RunConfig::has_method(Method m) const {
  return std::find(methods.begin(), methods.end(), m) != methods.end();
}

std::vector<std::string> validate_run_config(const RunConfig& c) {
  std::vector<std::string> issues;
  if (c.dataset.empty()) issues.push_back("dataset path is empty");
  if (c.methods.empty()) issues.push_back("method set is empty");

  std::set<Method> seen;
  bool any_decc = false;
  bool any_llm = false;
  for (Method m : c.methods) {
    if (!seen.insert(m).second) issues.push_back("method listed twice: " + std::string(to_string(m)));
    any_decc = any_decc || is_decc_method(m);
    any_llm = any_llm || needs_llm_reasoner(m);
  }

  if (!c.roles.candidate_vlm) issues.push_back("roles.candidate_vlm is required");
  if ((any_decc || c.has_method(Method::paraphrase)) && !c.roles.decomposer) {
    issues.push_back("roles.decomposer is required for decomposition and paraphrase methods");
  }
  if (c.has_method(Method::multi_agent) && (!c.roles.candidate_vlm || !c.roles.llm_reasoner)) {
    issues.push_back("multi_agent requires both reasoner roles (candidate_vlm and llm_reasoner)");
  } else if (any_llm && !c.roles.llm_reasoner) {
    issues.push_back("roles.llm_reasoner is required for llm_agent methods");
  }

  for (const auto* r : {&c.roles.decomposer, &c.roles.candidate_vlm, &c.roles.llm_reasoner}) {
    if (*r) {
      for (auto& issue : validate_role(**r)) issues.push_back(std::move(issue));
    }
  }
  for (auto& issue : validate_baseline_config(c.baselines)) issues.push_back("baselines: " + issue);

  if (c.concurrency < 1) issues.push_back("concurrency must be >= 1");
  if (c.limit && *c.limit == 0) issues.push_back("limit must be >= 1");
  if (c.max_subquestions < 1) issues.push_back("max_subquestions must be >= 1");
  if (c.retry.attempts < 1) issues.push_back("retry.attempts must be >= 1");
  if (c.retry.initial_backoff.count() < 0.0) issues.push_back("retry.initial_backoff_seconds must be >= 0");
  if (c.retry.multiplier < 1.0) issues.push_back("retry.multiplier must be >= 1");
  return issues;
}

void to_json(json& j, const RunConfig& c) {
  json methods = json::array();
  for (Method m : c.methods) methods.push_back(to_string(m));
  json roles = json::object();
  if (c.roles.decomposer) roles["decomposer"] = *c.roles.decomposer;
  if (c.roles.candidate_vlm) roles["candidate_vlm"] = *c.roles.candidate_vlm;
  if (c.roles.llm_reasoner) roles["llm_reasoner"] = *c.roles.llm_reasoner;
  j = json{{"dataset", c.dataset},
           {"methods", std::move(methods)},
           {"roles", std::move(roles)},
           {"baselines", c.baselines},
           {"cache_dir", c.cache_dir},
           {"concurrency", c.concurrency},
           {"limit", c.limit ? json(*c.limit) : json(nullptr)},
           {"output_dir", c.output_dir},
           {"max_subquestions", c.max_subquestions},
           {"retry",
            {{"attempts", c.retry.attempts},
             {"initial_backoff_seconds", c.retry.initial_backoff.count()},
             {"multiplier", c.retry.multiplier}}},
           {"match", {{"case_fold", c.case_fold}, {"strip_punctuation", c.strip_punctuation}}}};
}

void from_json(const json& j, RunConfig& c) {
  c = RunConfig{};
  if (!j.is_object()) throw Error(ErrorCode::config, "config must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!kConfigKeys.contains(key)) throw Error(ErrorCode::config, "unknown config key '" + key + "'");
  }
  try {
    c.dataset = j.value("dataset", std::string{});
    if (j.contains("methods")) {
      for (const auto& m : j.at("methods")) c.methods.push_back(parse_method(m.get<std::string>()));
    }
    if (j.contains("roles")) {
      const auto& roles = j.at("roles");
      for (const auto& [key, value] : roles.items()) {
        const auto kind = parse_role_kind(key);
        auto role = parse_role(value, kind);
        switch (kind) {
          case RoleKind::decomposer: c.roles.decomposer = std::move(role); break;
          case RoleKind::candidate_vlm: c.roles.candidate_vlm = std::move(role); break;
          case RoleKind::llm_reasoner: c.roles.llm_reasoner = std::move(role); break;
        }
      }
    }
    if (j.contains("baselines")) c.baselines = j.at("baselines").get<BaselineConfig>();
    c.cache_dir = j.value("cache_dir", std::string{});
    c.concurrency = j.value("concurrency", c.concurrency);
    if (j.contains("limit") && !j.at("limit").is_null()) {
      const auto limit = j.at("limit").get<long long>();
      if (limit < 0) throw Error(ErrorCode::config, "limit must be >= 1");
      c.limit = static_cast<std::size_t>(limit);
    }
    c.output_dir = j.value("output_dir", c.output_dir);
    c.max_subquestions = j.value("max_subquestions", c.max_subquestions);
    if (j.contains("retry")) {
      const auto& r = j.at("retry");
      c.retry.attempts = r.value("attempts", c.retry.attempts);
      c.retry.initial_backoff =
          std::chrono::duration<double>(r.value("initial_backoff_seconds", c.retry.initial_backoff.count()));
      c.retry.multiplier = r.value("multiplier", c.retry.multiplier);
    }
    if (j.contains("match")) {
      c.case_fold = j.at("match").value("case_fold", c.case_fold);
      c.strip_punctuation = j.at("match").value("strip_punctuation", c.strip_punctuation);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::config, std::string("bad config: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::config) throw;
    throw Error(ErrorCode::config, e.what());
  }
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io, "cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::config, path.string() + ": " + e.what());
  }
  auto cfg = j.get<RunConfig>();
  cfg.base_dir = fs::absolute(path).parent_path();
  if (const auto issues = validate_run_config(cfg); !issues.empty()) {
    throw Error(ErrorCode::config, path.string() + ": " + join(issues, "; "));
  }
  return cfg;
}

std::string config_hash(const RunConfig& c) {
  json j = c;
  j.erase("output_dir");
  j.erase("cache_dir");
  j.erase("concurrency");
  return sha256_hex(j.dump());
}

// ---- ingestion -------------------------------------------------------------

void to_json(json& j, const IngestReject& r) { j = json{{"line", r.line}, {"reason", r.reason}}; }

void from_json(const json& j, IngestReject& r) {
  j.at("line").get_to(r.line);
  j.at("reason").get_to(r.reason);
}

IngestResult ingest_dataset(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io, "cannot open dataset " + path.string());

  IngestResult out;
  std::set<std::pair<std::string, std::string>> ids;
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (text::trim(line).empty()) continue;
    Sample s;
    try {
      const auto j = json::parse(line);
      if (!j.is_object()) {
        out.rejects.push_back({n, "not a JSON object"});
        continue;
      }
      s = j.get<Sample>();
    } catch (const std::exception& e) {
      out.rejects.push_back({n, e.what()});
      continue;
    }
    if (const auto issues = validate_sample(s); !issues.empty()) {
      out.rejects.push_back({n, join(issues, "; ")});
      continue;
    }
    if (!ids.emplace(s.dataset_id, s.id).second) {
      out.rejects.push_back({n, "duplicate id '" + s.id + "' in dataset '" + s.dataset_id + "'"});
      continue;
    }
    out.samples.push_back(std::move(s));
  }
  return out;
}

// ---- cache -----------------------------------------------------------------

void to_json(json& j, const SubQACacheKey& k) {
  j = json{{"dataset_id", k.dataset_id}, {"sample_id", k.sample_id}, {"model", k.model_name},
           {"params_hash", k.params_hash}, {"iteration", k.iteration},  {"kind", k.kind},
           {"prior_hash", k.prior_hash}};
}

void from_json(const json& j, SubQACacheKey& k) {
  j.at("dataset_id").get_to(k.dataset_id);
  j.at("sample_id").get_to(k.sample_id);
  j.at("model").get_to(k.model_name);
  j.at("params_hash").get_to(k.params_hash);
  j.at("iteration").get_to(k.iteration);
  j.at("kind").get_to(k.kind);
  k.prior_hash = j.value("prior_hash", std::string{});
}

void to_json(json& j, const SubQACacheEntry& e) {
  j = json{{"key", e.key}, {"subqa", e.subqa}, {"raw_text", e.raw_text}, {"elapsed_seconds", e.elapsed_seconds}};
}

void from_json(const json& j, SubQACacheEntry& e) {
  j.at("key").get_to(e.key);
  j.at("subqa").get_to(e.subqa);
  j.at("raw_text").get_to(e.raw_text);
  e.elapsed_seconds = j.value("elapsed_seconds", 0.0);
}

SubQACache::SubQACache(fs::path dir) : dir_(std::move(dir)) {
  if (dir_.empty()) return;
  fs::create_directories(dir_);
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir_)) {
    if (entry.is_regular_file() && entry.path().extension() == ".jsonl") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    std::ifstream in(f);
    for (std::string line; std::getline(in, line);) {
      if (text::trim(line).empty()) continue;
      try {
        auto e = json::parse(line).get<SubQACacheEntry>();
        entries_.insert_or_assign(json(e.key).dump(), std::move(e));
      } catch (const std::exception&) {
        ++corrupted_;
      }
    }
  }
}

std::optional<SubQACacheEntry> SubQACache::get(const SubQACacheKey& key) const {
  std::lock_guard lock(mu_);
  const auto it = entries_.find(json(key).dump());
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

void SubQACache::put(const SubQACacheEntry& entry) {
  const auto line = json(entry).dump() + "\n";
  std::lock_guard lock(mu_);
  if (!dir_.empty()) {
    const auto path = dir_ / file_name(entry.key.dataset_id, entry.key.model_name);
    std::ofstream out(path, std::ios::binary | std::ios::app);
    out.write(line.data(), static_cast<std::streamsize>(line.size()));
    out.flush();
    if (!out) throw Error(ErrorCode::io, "cannot append to " + path.string());
  }
  entries_.insert_or_assign(json(entry.key).dump(), entry);
}

std::size_t SubQACache::size() const {
  std::lock_guard lock(mu_);
  return entries_.size();
}

std::string SubQACache::file_name(const std::string& dataset_id, const std::string& model_name) {
  return sanitize(dataset_id) + "__" + sanitize(model_name) + ".jsonl";
}

}  // namespace decc
