#include "decc/pipeline.hpp"

#include <algorithm>
#include <exception>
#include <set>

#include "decc/backends.hpp"
#include "decc/error.hpp"
#include "decc/hash.hpp"
#include "decc/prompts.hpp"
#include "text_util.hpp"

namespace decc {
namespace {

struct StageFailure {
  Stage stage;
  std::string message;
};

// Seconds per stage for one sample. An entry exists once the stage ran, even
// if it took zero reported time.
struct StageClock {
  std::map<Stage, double> seconds;

  void add(Stage s, double sec) { seconds[s] += sec; }
  bool touched(Stage s) const { return seconds.contains(s); }
};

std::string params_hash(const GenerationParams& p) { return sha256_hex(json(p).dump()).substr(0, 16); }

std::vector<ChatMessage> render(TemplateName t, const Bindings& b, const std::optional<std::string>& image) {
  return render_prompt(prompt_template(t), b, image);
}

// Canonical gold form under the same normalization the answers go through.
std::optional<std::string> gold_canonical(const Sample& s, const MatchPolicy& policy) {
  if (s.is_multiple_choice()) return resolve_gold_label(s);
  auto n = normalize_answer(s.gold_answer, policy);
  if (!n.ok()) return std::nullopt;
  return n.canonical;
}

AgentAnswer make_answer(AnswerRole role, int iteration, std::string raw, const Sample& s,
                        const MatchPolicy& policy) {
  AgentAnswer a;
  a.role = role;
  a.iteration = iteration;
  a.raw_text = std::move(raw);
  const auto n = normalize_answer(a.raw_text, policy, s.choices);
  if (n.ok()) a.normalized = n.canonical;
  return a;
}

std::optional<std::string> answer_note(const AgentAnswer& a, const Sample& s, const MatchPolicy& policy) {
  const auto n = normalize_answer(a.raw_text, policy, s.choices);
  if (n.ok()) return std::nullopt;
  return std::string(to_string(a.role)) + "@" + std::to_string(a.iteration) + ": " +
         std::string(to_string(n.status));
}

bool mentions_choices(std::string_view q) {
  const auto lower = text::to_lower(q);
  return lower.find("choices:") != std::string::npos || lower.find("options:") != std::string::npos;
}

// Cache-aware decomposition for one iteration. Retries once when nothing
// parseable comes back; a second empty reply is an error.
std::pair<std::vector<std::string>, bool> decompose_iteration(ModelGateway& decomposer, SubQACache& cache,
                                                              const RunConfig& cfg, const Sample& s,
                                                              int iteration, std::span<const SubQA> prior,
                                                              StageClock& clock) {
  const Stage stage = iteration == 1 ? Stage::decompose_1 : Stage::decompose_2;
  const auto prior_block = format_subqa_pairs(prior);

  SubQACacheKey key{s.dataset_id, s.id, decomposer.role().model_name, params_hash(decomposer.role().params),
                    iteration, "subq", iteration == 2 ? sha256_hex(prior_block) : std::string{}};
  if (auto hit = cache.get(key)) {
    clock.add(stage, hit->elapsed_seconds);
    std::vector<std::string> qs;
    for (const auto& q : hit->subqa) qs.push_back(q.sub_question);
    return {qs, true};
  }

  auto bindings = instance_bindings(s);
  const auto tmpl = iteration == 1 ? TemplateName::decompose_iter1 : TemplateName::decompose_iter2;
  if (iteration == 2) bindings["prior_subqa_block"] = prior_block;
  const auto messages = render(tmpl, bindings, s.image_ref);

  double elapsed = 0.0;
  for (int attempt = 0; attempt < 2; ++attempt) {
    const auto r = decomposer.chat(messages, false, to_string(tmpl));
    elapsed += r.elapsed_seconds;
    clock.add(stage, r.elapsed_seconds);
    auto qs = parse_subquestions(r.text, iteration);
    if (qs.empty()) continue;
    if (qs.size() > cfg.max_subquestions) qs.resize(cfg.max_subquestions);

    SubQACacheEntry entry{key, {}, r.text, elapsed};
    for (std::size_t i = 0; i < qs.size(); ++i) {
      entry.subqa.push_back(SubQA{static_cast<int>(i + 1), iteration, qs[i], ""});
    }
    cache.put(entry);
    return {qs, false};
  }
  throw Error(ErrorCode::protocol, "decomposer returned no parseable sub-questions (iteration " +
                                       std::to_string(iteration) + ", 2 attempts)");
}

// Stages a method's verdict depends on, for per-record timings.
std::vector<Stage> stages_for(Method m, bool second_iteration_used) {
  std::vector<Stage> out{Stage::direct_answer};
  const auto add_iter1 = [&](bool v, bool l) {
    out.insert(out.end(), {Stage::decompose_1, Stage::subanswer_1});
    if (v) out.push_back(Stage::vlm_reason_1);
    if (l) out.push_back(Stage::llm_reason_1);
  };
  const auto add_iter2 = [&](bool v, bool l) {
    out.insert(out.end(), {Stage::decompose_2, Stage::subanswer_2});
    if (v) out.push_back(Stage::vlm_reason_2);
    if (l) out.push_back(Stage::llm_reason_2);
  };
  switch (m) {
    case Method::vlm_agent: add_iter1(true, false); break;
    case Method::llm_agent: add_iter1(false, true); break;
    case Method::vlm_agent_2iter:
      add_iter1(false, false);
      add_iter2(true, false);
      break;
    case Method::llm_agent_2iter:
      add_iter1(false, false);
      add_iter2(false, true);
      break;
    case Method::multi_agent:
      add_iter1(true, true);
      if (second_iteration_used) add_iter2(true, true);
      break;
    case Method::perplexity: break;
    case Method::numeric_conf:
    case Method::linguistic_conf: out.push_back(Stage::baseline); break;
    case Method::paraphrase: out.push_back(Stage::paraphrase); break;
  }
  return out;
}

}  // namespace

Evaluator::Evaluator(RunConfig cfg, BackendFactory factory) : cfg_(std::move(cfg)) {
  if (const auto issues = validate_run_config(cfg_); !issues.empty()) {
    std::string msg = "invalid run config:";
    for (const auto& i : issues) msg += " " + i + ";";
    throw Error(ErrorCode::config, msg);
  }
  cache_ = std::make_unique<SubQACache>(cfg_.cache_dir.empty() ? std::filesystem::path{}
                                                                : cfg_.resolve(cfg_.cache_dir));

  std::map<std::string, std::shared_ptr<ChatBackend>> shared_backends;
  if (!factory) {
    factory = [this, &shared_backends](const ModelRole& role) {
      auto& b = shared_backends[role.endpoint];
      if (!b) b = make_backend(role, cfg_.base_dir);
      return b;
    };
  }

  std::map<std::string, int> endpoint_limit;
  const std::optional<ModelRole>* roles[] = {&cfg_.roles.decomposer, &cfg_.roles.candidate_vlm,
                                             &cfg_.roles.llm_reasoner};
  for (const auto* r : roles) {
    if (!*r) continue;
    auto [it, fresh] = endpoint_limit.emplace((*r)->endpoint, (*r)->max_in_flight);
    if (!fresh) it->second = std::min(it->second, (*r)->max_in_flight);
  }
  std::map<std::string, std::shared_ptr<InFlightLimiter>> limiters;
  for (const auto& [endpoint, limit] : endpoint_limit) {
    limiters[endpoint] = std::make_shared<InFlightLimiter>(limit);
  }
  for (const auto* r : roles) {
    if (!*r) continue;
    gateways_[(*r)->role] =
        std::make_shared<ModelGateway>(**r, factory(**r), cfg_.retry, limiters.at((*r)->endpoint));
  }
}

std::uint64_t Evaluator::requests_sent(RoleKind role) const {
  const auto it = gateways_.find(role);
  return it == gateways_.end() ? 0 : it->second->requests_sent();
}

std::pair<std::vector<std::string>, bool> Evaluator::decompose(const Sample& s) {
  const auto it = gateways_.find(RoleKind::decomposer);
  if (it == gateways_.end()) throw Error(ErrorCode::config, "no decomposer role configured");
  StageClock clock;
  return decompose_iteration(*it->second, *cache_, cfg_, s, 1, {}, clock);
}

SampleRun Evaluator::run_sample(const Sample& s) { return run(s, true, true); }
SampleRun Evaluator::run_decc_sample(const Sample& s) { return run(s, true, false); }
SampleRun Evaluator::run_baseline_sample(const Sample& s) { return run(s, false, true); }

SampleRun Evaluator::run(const Sample& s, bool decc, bool baselines) {
  SampleRun out;
  std::vector<Method> methods;
  for (Method m : cfg_.methods) {
    if (is_decc_method(m) ? decc : baselines) methods.push_back(m);
  }
  if (methods.empty()) return out;

  const auto has = [&](Method m) { return std::find(methods.begin(), methods.end(), m) != methods.end(); };
  const auto policy = MatchPolicy::for_sample(s, cfg_.case_fold, cfg_.strip_punctuation);
  const auto inst = instance_bindings(s);
  StageClock clock;

  auto& candidate = *gateways_.at(RoleKind::candidate_vlm);
  const auto chat = [&](ModelGateway& g, Stage stage, const std::vector<ChatMessage>& msgs, bool logprobs,
                        TemplateName t) {
    auto r = g.chat(msgs, logprobs, to_string(t));
    clock.add(stage, r.elapsed_seconds);
    return r;
  };

  std::map<Method, ReliabilityRecord> records;
  std::map<Method, double> own_baseline_seconds;
  for (Method m : methods) {
    auto& r = records[m];
    r.sample_id = s.id;
    r.dataset_id = s.dataset_id;
    r.method = m;
  }
  const auto fail = [&](Method m, const StageFailure& f) {
    auto& r = records.at(m);
    if (!r.error) r.error = StageError{f.stage, f.message};
    r.verdict = false;
  };

  const auto finish = [&](bool second_iteration_used) {
    for (const auto& [stage, sec] : clock.seconds) out.costs.push_back(StageCost{stage, 1, sec});
    for (Method m : methods) {
      auto& r = records.at(m);
      std::map<std::string, double> timings;
      for (Stage st : stages_for(m, second_iteration_used)) {
        if (!clock.touched(st)) continue;
        const bool own = st == Stage::baseline && own_baseline_seconds.contains(m);
        timings[std::string(to_string(st))] = own ? own_baseline_seconds.at(m) : clock.seconds.at(st);
      }
      r.timings = std::move(timings);
      out.records.push_back(std::move(r));
    }
    return out;
  };

  // (1) direct answer
  const bool want_logprobs = has(Method::perplexity) && candidate.role().supports_logprobs;
  AgentAnswer direct;
  try {
    const auto r = chat(candidate, Stage::direct_answer, render(TemplateName::direct_answer, inst, s.image_ref),
                        want_logprobs, TemplateName::direct_answer);
    direct = make_answer(AnswerRole::direct, 0, r.text, s, policy);
    direct.token_logprobs = r.token_logprobs;
  } catch (const std::exception& e) {
    for (Method m : methods) fail(m, {Stage::direct_answer, e.what()});
    return finish(false);
  }
  const auto gold = gold_canonical(s, policy);
  const bool correct = gold && !direct.normalized.empty() && direct.normalized == *gold;
  for (auto& [m, r] : records) {
    r.correct = correct;
    if (auto note = answer_note(direct, s, policy)) r.notes.push_back(*note);
  }

  // (2)-(4) decomposition, reasoning and consistency
  bool second_iteration_used = false;
  const bool any_decc = std::any_of(methods.begin(), methods.end(), is_decc_method);
  if (any_decc) {
    auto& decomposer = *gateways_.at(RoleKind::decomposer);
    const auto reasoner = [&](bool vision) -> ModelGateway& {
      return vision ? candidate : *gateways_.at(RoleKind::llm_reasoner);
    };

    const auto answer_subquestions = [&](int iteration, const std::vector<std::string>& qs,
                                         std::span<const SubQA> prior) {
      const Stage stage = iteration == 1 ? Stage::subanswer_1 : Stage::subanswer_2;
      const std::string prior_block =
          prior.empty() ? "" : "Previous sub-questions and answers:\n" + format_subqa_pairs(prior) + "\n\n";
      std::vector<SubQA> pairs;
      for (std::size_t i = 0; i < qs.size(); ++i) {
        Bindings b{{"question", qs[i]}, {"prior_subqa_block", prior_block}};
        const auto r = chat(candidate, stage, render(TemplateName::subq_answer, b, s.image_ref), false,
                            TemplateName::subq_answer);
        pairs.push_back(SubQA{static_cast<int>(i + 1), iteration, qs[i], std::string(text::trim(r.text))});
      }
      return pairs;
    };

    // The vision reasoner sees the image; the text-only reasoner never does.
    const auto reason = [&](bool vision, int iteration, std::span<const SubQA> pairs) {
      const Stage stage = vision ? (iteration == 1 ? Stage::vlm_reason_1 : Stage::vlm_reason_2)
                                 : (iteration == 1 ? Stage::llm_reason_1 : Stage::llm_reason_2);
      auto b = inst;
      b["subqa_block"] = format_subqa_pairs(pairs);
      const auto image = vision ? s.image_ref : std::nullopt;
      const auto r = chat(reasoner(vision), stage, render(TemplateName::reason_over_subqa, b, image), false,
                          TemplateName::reason_over_subqa);
      return make_answer(vision ? AnswerRole::vlm_reasoned : AnswerRole::llm_reasoned, iteration, r.text, s,
                         policy);
    };

    Stage current = Stage::decompose_1;
    std::optional<StageFailure> f1;
    std::vector<SubQA> pairs1;
    try {
      const auto qs = decompose_iteration(decomposer, *cache_, cfg_, s, 1, {}, clock).first;
      current = Stage::subanswer_1;
      pairs1 = answer_subquestions(1, qs, {});
    } catch (const std::exception& e) {
      f1 = StageFailure{current, e.what()};
    }

    std::optional<AgentAnswer> v1, l1, v2, l2;
    std::optional<StageFailure> fv1, fl1, f2, fv2, fl2;
    const auto try_reason = [&](bool vision, int iteration, std::span<const SubQA> pairs,
                                std::optional<AgentAnswer>& slot, std::optional<StageFailure>& failure) {
      try {
        slot = reason(vision, iteration, pairs);
      } catch (const std::exception& e) {
        const Stage stage = vision ? (iteration == 1 ? Stage::vlm_reason_1 : Stage::vlm_reason_2)
                                   : (iteration == 1 ? Stage::llm_reason_1 : Stage::llm_reason_2);
        failure = StageFailure{stage, e.what()};
      }
    };

    if (!f1) {
      if (has(Method::vlm_agent) || has(Method::multi_agent)) try_reason(true, 1, pairs1, v1, fv1);
      if (has(Method::llm_agent) || has(Method::multi_agent)) try_reason(false, 1, pairs1, l1, fl1);
    }

    std::optional<bool> cv1, cl1, cv2, cl2;
    if (v1) cv1 = answers_consistent(direct, *v1, policy, s.choices);
    if (l1) cl1 = answers_consistent(direct, *l1, policy, s.choices);
    bool disagree = false;
    if (has(Method::multi_agent) && cv1 && cl1) {
      disagree = *cv1 != *cl1;
      out.first_iter_disagree = disagree;
    }

    const bool need_v2 = has(Method::vlm_agent_2iter) || disagree;
    const bool need_l2 = has(Method::llm_agent_2iter) || disagree;
    std::vector<SubQA> pairs2;
    if (!f1 && (need_v2 || need_l2)) {
      out.second_iteration = true;
      second_iteration_used = disagree;
      current = Stage::decompose_2;
      try {
        const auto qs = decompose_iteration(decomposer, *cache_, cfg_, s, 2, pairs1, clock).first;
        current = Stage::subanswer_2;
        pairs2 = answer_subquestions(2, qs, pairs1);
      } catch (const std::exception& e) {
        f2 = StageFailure{current, e.what()};
      }
      if (!f2) {
        std::vector<SubQA> all = pairs1;
        all.insert(all.end(), pairs2.begin(), pairs2.end());
        if (need_v2) try_reason(true, 2, all, v2, fv2);
        if (need_l2) try_reason(false, 2, all, l2, fl2);
      }
    }
    if (v2) cv2 = answers_consistent(direct, *v2, policy, s.choices);
    if (l2) cl2 = answers_consistent(direct, *l2, policy, s.choices);

    out.subqa = pairs1;
    out.subqa.insert(out.subqa.end(), pairs2.begin(), pairs2.end());

    const auto note = [&](Method m, const std::optional<AgentAnswer>& a) {
      if (!a) return;
      if (auto n = answer_note(*a, s, policy)) records.at(m).notes.push_back(*n);
    };
    const auto single = [&](Method m, const std::optional<AgentAnswer>& a,
                            std::initializer_list<const std::optional<StageFailure>*> failures) {
      for (const auto* f : failures) {
        if (*f) {
          fail(m, **f);
          return;
        }
      }
      auto& r = records.at(m);
      r.trace = single_agent_verdict(direct, *a, policy, s.choices);
      r.verdict = r.trace->verdict;
      note(m, a);
    };

    if (has(Method::vlm_agent)) single(Method::vlm_agent, v1, {&f1, &fv1});
    if (has(Method::llm_agent)) single(Method::llm_agent, l1, {&f1, &fl1});
    if (has(Method::vlm_agent_2iter)) single(Method::vlm_agent_2iter, v2, {&f1, &f2, &fv2});
    if (has(Method::llm_agent_2iter)) single(Method::llm_agent_2iter, l2, {&f1, &f2, &fl2});
    if (has(Method::multi_agent)) {
      std::optional<StageFailure> failure = f1 ? f1 : fv1 ? fv1 : fl1;
      if (!failure && disagree) failure = f2 ? f2 : fv2 ? fv2 : fl2;
      if (failure) {
        fail(Method::multi_agent, *failure);
      } else {
        auto& r = records.at(Method::multi_agent);
        r.trace = disagree ? multi_agent_verdict(*cv1, *cl1, cv2, cl2)
                           : multi_agent_verdict(*cv1, *cl1, std::nullopt, std::nullopt);
        r.verdict = r.trace->verdict;
        note(Method::multi_agent, v1);
        note(Method::multi_agent, l1);
        if (disagree) {
          note(Method::multi_agent, v2);
          note(Method::multi_agent, l2);
        }
      }
    }
  }

  // baselines
  if (has(Method::perplexity)) {
    if (!candidate.role().supports_logprobs) {
      fail(Method::perplexity, {Stage::baseline, "candidate_vlm does not support token logprobs"});
    } else if (!direct.token_logprobs) {
      fail(Method::perplexity, {Stage::baseline, "backend returned no token logprobs"});
    } else {
      try {
        const double ppl = perplexity_of_answer(*direct.token_logprobs);
        auto& r = records.at(Method::perplexity);
        r.score = ppl;
        r.verdict = perplexity_verdict(ppl, cfg_.baselines.perplexity_threshold);
      } catch (const std::exception& e) {
        fail(Method::perplexity, {Stage::baseline, e.what()});
      }
    }
  }

  const auto stated = [&](Method m, TemplateName t) -> std::optional<std::string> {
    const double before = clock.seconds.contains(Stage::baseline) ? clock.seconds.at(Stage::baseline) : 0.0;
    try {
      const auto r = chat(candidate, Stage::baseline, render(t, inst, s.image_ref), false, t);
      own_baseline_seconds[m] = clock.seconds.at(Stage::baseline) - before;
      return r.text;
    } catch (const std::exception& e) {
      fail(m, {Stage::baseline, e.what()});
      return std::nullopt;
    }
  };
  if (has(Method::numeric_conf)) {
    if (const auto text = stated(Method::numeric_conf, TemplateName::direct_with_numeric_conf)) {
      auto& r = records.at(Method::numeric_conf);
      const auto conf = parse_numeric_confidence(*text);
      r.score = conf;
      r.verdict = numeric_confidence_verdict(conf, cfg_.baselines.numeric_confidence_threshold);
      if (!conf) r.notes.push_back("no stated confidence");
    }
  }
  if (has(Method::linguistic_conf)) {
    if (const auto text = stated(Method::linguistic_conf, TemplateName::direct_with_linguistic_conf)) {
      auto& r = records.at(Method::linguistic_conf);
      const auto conf = parse_linguistic_confidence(*text);
      r.verdict = linguistic_confidence_verdict(conf);
      if (conf == LinguisticConfidence::absent) r.notes.push_back("no stated confidence");
    }
  }

  if (has(Method::paraphrase)) {
    try {
      auto& decomposer = *gateways_.at(RoleKind::decomposer);
      const int count = cfg_.baselines.paraphrase_count;
      SubQACacheKey key{s.dataset_id, s.id, decomposer.role().model_name, params_hash(decomposer.role().params),
                        1, "paraphrase", ""};
      std::vector<std::string> paraphrases;
      if (auto hit = cache_->get(key)) {
        clock.add(Stage::paraphrase, hit->elapsed_seconds);
        for (const auto& q : hit->subqa) paraphrases.push_back(q.sub_question);
      } else {
        const auto r = chat(decomposer, Stage::paraphrase, render(TemplateName::paraphrase, inst, s.image_ref),
                            false, TemplateName::paraphrase);
        auto parsed = parse_paraphrases(r.text, static_cast<std::size_t>(count));
        if (!parsed.ok()) {
          throw Error(ErrorCode::wrong_paraphrase_count,
                      "expected " + std::to_string(count) + " paraphrases, parsed " +
                          std::to_string(parsed.questions.size()));
        }
        paraphrases = std::move(parsed.questions);
        SubQACacheEntry entry{key, {}, r.text, r.elapsed_seconds};
        for (std::size_t i = 0; i < paraphrases.size(); ++i) {
          entry.subqa.push_back(SubQA{static_cast<int>(i + 1), 1, paraphrases[i], ""});
        }
        cache_->put(entry);
      }

      std::vector<AgentAnswer> answers;
      for (const auto& q : paraphrases) {
        auto b = inst;
        b["question"] = q;
        // Paraphrases normally restate the options themselves.
        if (mentions_choices(q)) b["choices"] = "";
        const auto r = chat(candidate, Stage::paraphrase, render(TemplateName::direct_answer, b, s.image_ref),
                            false, TemplateName::direct_answer);
        answers.push_back(make_answer(AnswerRole::paraphrase_answer, 0, r.text, s, policy));
      }
      const auto outcome = paraphrase_self_consistency(direct, answers, cfg_.baselines.paraphrase_inconsistency_tolerance,
                                                       policy, s.choices, count);
      auto& rec = records.at(Method::paraphrase);
      rec.score = outcome.inconsistent;
      rec.verdict = outcome.verdict;
      out.paraphrases = std::move(paraphrases);
    } catch (const std::exception& e) {
      fail(Method::paraphrase, {Stage::paraphrase, e.what()});
    }
  }

  return finish(second_iteration_used);
}

}  // namespace decc
