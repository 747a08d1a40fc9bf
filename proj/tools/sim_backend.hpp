#pragma once

// Scripted stand-in for the three model endpoints. It reads the rendered
// prompt, works out which sample and stage the request belongs to and
// answers from a per-sample script. Used to record the demo replay fixture
// and by tests that need a live-looking backend.

#include <atomic>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include "decc/gateway.hpp"

namespace decc::sim {

struct SampleScript {
  Sample sample;
  std::string direct;
  std::vector<double> logprobs;
  std::vector<std::string> subqs1;  // empty: decomposer replies with prose only
  std::vector<std::string> subqs2;
  std::map<std::string, std::string> subanswers;  // sub-question -> answer
  std::string vlm1, llm1;
  std::string vlm2, llm2;  // default to the iteration-1 answers
  std::vector<std::string> paraphrases;
  std::vector<std::string> paraphrase_answers;
  std::string numeric;
  std::string linguistic;
};

class ScriptedBackend : public ChatBackend {
 public:
  ScriptedBackend(std::vector<SampleScript> scripts, std::string llm_model);

  ChatResponse complete(const ChatRequest& request) override;

  /// Requests seen per purpose tag.
  std::uint64_t calls(const std::string& purpose) const;
  /// Iteration-2 decomposition requests seen per sample id.
  std::map<std::string, int> decompose2_by_sample() const;

  static double latency(const std::string& purpose, bool text_only);

 private:
  const SampleScript* by_question(std::string_view prompt, int* paraphrase_index) const;

  std::vector<SampleScript> scripts_;
  std::string llm_model_;
  std::map<std::string, std::string> subanswers_;
  mutable std::mutex mu_;
  std::map<std::string, std::uint64_t> calls_;
  std::map<std::string, int> decompose2_;
};

/// The twelve-sample demo: four all-consistent, three where the second
/// iteration leaves both agents unchanged, two all-inconsistent, one where
/// the agents agree after the second iteration, one where both change, and
/// one short-answer item. Five samples disagree at iteration 1.
std::vector<SampleScript> demo_scripts();

inline constexpr const char* kDemoVlmModel = "sim-vlm-7b";
inline constexpr const char* kDemoLlmModel = "sim-llm-7b";
inline constexpr const char* kDemoDecomposerModel = "sim-vlm-7b";

/// Writes dataset.jsonl, fixture/ (recorded through the real pipeline),
/// config.json (multi_agent, single agents and every baseline) and
/// config_all.json (all nine methods) under `dir`.
void write_demo(const std::string& dir);

}  // namespace decc::sim
