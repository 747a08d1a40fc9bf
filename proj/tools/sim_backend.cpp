#include "sim_backend.hpp"

#include <filesystem>
#include <fstream>

#include "decc/backends.hpp"
#include "decc/error.hpp"
#include "decc/pipeline.hpp"
#include "decc/prompts.hpp"

namespace decc::sim {
namespace fs = std::filesystem;

namespace {

std::string_view after_last(std::string_view s, std::string_view marker) {
  const auto pos = s.rfind(marker);
  if (pos == std::string_view::npos) return {};
  return s.substr(pos + marker.size());
}

bool starts_with(std::string_view s, std::string_view prefix) {
  return s.size() >= prefix.size() && s.substr(0, prefix.size()) == prefix;
}

std::string lines(std::string_view prefix, const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    out += std::string(prefix) + " " + std::to_string(i + 1) + ": " + items[i] + "\n";
  }
  return out;
}

std::size_t count_of(std::string_view haystack, std::string_view needle) {
  std::size_t n = 0;
  for (auto pos = haystack.find(needle); pos != std::string_view::npos; pos = haystack.find(needle, pos + 1)) ++n;
  return n;
}

}  // namespace

ScriptedBackend::ScriptedBackend(std::vector<SampleScript> scripts, std::string llm_model)
    : scripts_(std::move(scripts)), llm_model_(std::move(llm_model)) {
  for (auto& s : scripts_) {
    if (s.vlm2.empty()) s.vlm2 = s.vlm1;
    if (s.llm2.empty()) s.llm2 = s.llm1;
    for (const auto& [q, a] : s.subanswers) subanswers_[q] = a;
  }
}

double ScriptedBackend::latency(const std::string& purpose, bool text_only) {
  if (purpose == "decompose_iter1") return 1.25;
  if (purpose == "decompose_iter2") return 1.5;
  if (purpose == "subq_answer") return 0.25;
  if (purpose == "reason_over_subqa") return text_only ? 0.125 : 0.375;
  if (purpose == "paraphrase") return 1.0;
  if (purpose == "direct_answer") return 0.5;
  return 0.625;
}

const SampleScript* ScriptedBackend::by_question(std::string_view prompt, int* paraphrase_index) const {
  const auto tail = after_last(prompt, "Main Question: ");
  const SampleScript* best = nullptr;
  std::size_t best_len = 0;
  for (const auto& s : scripts_) {
    if (starts_with(tail, s.sample.question) && s.sample.question.size() > best_len) {
      best = &s;
      best_len = s.sample.question.size();
      if (paraphrase_index) *paraphrase_index = -1;
    }
    for (std::size_t i = 0; i < s.paraphrases.size(); ++i) {
      if (starts_with(tail, s.paraphrases[i]) && s.paraphrases[i].size() > best_len) {
        best = &s;
        best_len = s.paraphrases[i].size();
        if (paraphrase_index) *paraphrase_index = static_cast<int>(i);
      }
    }
  }
  return best;
}

ChatResponse ScriptedBackend::complete(const ChatRequest& request) {
  if (request.messages.empty()) throw Error(ErrorCode::protocol, "simulator: empty request");
  const std::string& prompt = request.messages.back().text;
  const std::string& purpose = request.purpose;
  const bool text_only = request.model == llm_model_;
  {
    std::lock_guard lock(mu_);
    ++calls_[purpose];
  }

  ChatResponse out;
  out.elapsed_seconds = latency(purpose, text_only);
  const auto miss = [&] { return Error(ErrorCode::transport, "simulator: no script for " + purpose + " request"); };

  if (purpose == "subq_answer") {
    const auto tail = after_last(prompt, "Question: ");
    const auto q = tail.substr(0, tail.find("\nAnswer:"));
    const auto it = subanswers_.find(std::string(q));
    if (it == subanswers_.end()) throw miss();
    out.text = it->second;
    return out;
  }

  int para = -1;
  const SampleScript* s = by_question(prompt, &para);
  if (!s) throw miss();

  if (purpose == "decompose_iter1") {
    out.text = s->subqs1.empty() ? "The question is simple enough to answer directly.\n"
                                 : lines("Pre-question", s->subqs1);
  } else if (purpose == "decompose_iter2") {
    std::lock_guard lock(mu_);
    ++decompose2_[s->sample.id];
    out.text = lines("Additional Sub-question", s->subqs2);
  } else if (purpose == "reason_over_subqa") {
    const bool second = count_of(prompt, "Sub-answer ") > s->subqs1.size();
    out.text = text_only ? (second ? s->llm2 : s->llm1) : (second ? s->vlm2 : s->vlm1);
  } else if (purpose == "paraphrase") {
    out.text = lines("Paraphrased question", s->paraphrases);
  } else if (purpose == "direct_answer") {
    if (para >= 0) {
      out.text = s->paraphrase_answers.at(static_cast<std::size_t>(para));
    } else {
      out.text = s->direct;
      if (request.want_logprobs) out.token_logprobs = s->logprobs;
    }
  } else if (purpose == "direct_with_numeric_conf") {
    out.text = s->numeric;
  } else if (purpose == "direct_with_linguistic_conf") {
    out.text = s->linguistic;
  } else {
    throw miss();
  }
  return out;
}

std::uint64_t ScriptedBackend::calls(const std::string& purpose) const {
  std::lock_guard lock(mu_);
  const auto it = calls_.find(purpose);
  return it == calls_.end() ? 0 : it->second;
}

std::map<std::string, int> ScriptedBackend::decompose2_by_sample() const {
  std::lock_guard lock(mu_);
  return decompose2_;
}

// ---- demo data ---------------------------------------------------------------

namespace {

std::vector<Choice> abcd(std::initializer_list<const char*> texts) {
  std::vector<Choice> out;
  std::size_t i = 0;
  for (const char* t : texts) out.push_back(Choice{synthetic_label(i++), t});
  return out;
}

std::vector<std::string> paraphrase_set(const std::string& q) {
  std::string lowered = q;
  if (!lowered.empty()) lowered[0] = static_cast<char>(std::tolower(static_cast<unsigned char>(lowered[0])));
  std::string in_image = q;
  if (!in_image.empty() && in_image.back() == '?') in_image.pop_back();
  return {"Looking at the image, " + lowered, "In this picture, " + lowered, in_image + " in the image?",
          "Considering the photo, " + lowered};
}

SampleScript script(std::string id, std::string dataset, std::string question, std::vector<Choice> choices,
                    std::string gold) {
  SampleScript s;
  s.sample.id = std::move(id);
  s.sample.dataset_id = std::move(dataset);
  s.sample.question = std::move(question);
  s.sample.image_ref = "images/" + s.sample.id + ".jpg";
  s.sample.choices = std::move(choices);
  s.sample.gold_answer = std::move(gold);
  s.paraphrases = paraphrase_set(s.sample.question);
  return s;
}

void qa(SampleScript& s, int iteration, std::initializer_list<std::pair<const char*, const char*>> pairs) {
  for (const auto& [q, a] : pairs) {
    (iteration == 1 ? s.subqs1 : s.subqs2).push_back(q);
    s.subanswers[q] = a;
  }
}

}  // namespace

std::vector<SampleScript> demo_scripts() {
  std::vector<SampleScript> out;
  const std::string snli =
      "Is this statement entailment, neutral or contradiction based on the image? Statement: ";
  const auto nli = [] { return abcd({"entailment", "neutral", "contradiction"}); };

  // all consistent, correct
  {
    auto s = script("s01", "aokvqa_demo", "What kind of birds are resting on the pond?",
                    abcd({"ducks", "geese", "swans", "herons"}), "B");
    s.direct = "B. geese";
    s.logprobs = {-0.02, -0.01, -0.03};
    qa(s, 1, {{"What color are the birds' necks?", "Black"},
              {"How large are the birds compared to the reeds?", "They are large"},
              {"Is there a white chin strap on the birds?", "Yes"}});
    qa(s, 2, {{"Where are the birds standing?", "On the grass near the water"},
              {"Are the birds in a flock?", "Yes"}});
    s.vlm1 = "B";
    s.llm1 = "The answer is geese.";
    s.paraphrase_answers = {"B", "B", "B", "geese"};
    s.numeric = "Answer: B. Confidence: 95%";
    s.linguistic = "Answer: B. I am confident in this answer.";
    out.push_back(std::move(s));
  }
  {
    auto s = script("s02", "snlive_demo", snli + "'Two children play in the park.'", nli(), "entailment");
    s.direct = "A";
    s.logprobs = {-0.05, -0.04};
    qa(s, 1, {{"Are there any children in the image?", "Yes, two children"},
              {"Are the two children playing in the park?", "Yes"}});
    qa(s, 2, {{"What are the children playing with?", "A ball"}});
    s.vlm1 = "A: entailment";
    s.llm1 = "entailment";
    s.paraphrase_answers = {"A", "A", "A", "A"};
    s.numeric = "Answer: A. Confidence: 90%";
    s.linguistic = "Answer: A. I am confident in this answer.";
    out.push_back(std::move(s));
  }
  {
    auto s = script("s03", "aokvqa_demo", "Which room of the house is shown?",
                    abcd({"kitchen", "bathroom", "bedroom", "garage"}), "A");
    s.direct = "A";
    s.logprobs = {-0.08, -0.12};
    qa(s, 1, {{"Is there a stove in the room?", "Yes"},
              {"What appliances are on the counter?", "A toaster and a kettle"},
              {"Is there a bed in the room?", "No"}});
    qa(s, 2, {{"Which objects hang on the wall?", "Pots and pans"}});
    s.vlm1 = "A";
    s.llm1 = "A. kitchen";
    s.paraphrase_answers = {"A", "A", "kitchen", "B"};
    s.numeric = "Answer: A. Confidence: 85%";
    s.linguistic = "Answer: A. I am confident in this answer.";
    out.push_back(std::move(s));
  }
  // all consistent but wrong: agreement alone does not make the answer right
  {
    auto s = script("s04", "aokvqa_demo", "Why is the man holding an umbrella?",
                    abcd({"it is raining", "to block the sun", "as a walking cane", "he is selling it"}), "B");
    s.direct = "A";
    s.logprobs = {-0.2, -0.15, -0.1};
    qa(s, 1, {{"Is the ground wet?", "No"},
              {"Is the sun shining brightly?", "Yes"},
              {"Why might someone carry an umbrella on a dry day?", "To stay in the shade"}});
    qa(s, 2, {{"Are other people carrying umbrellas?", "No"}});
    s.vlm1 = "A";
    s.llm1 = "A";
    s.paraphrase_answers = {"A", "B", "A", "A"};
    s.numeric = "Answer: A. Confidence: 80%";
    s.linguistic = "Answer: A. I am not confident in this answer.";
    out.push_back(std::move(s));
  }
  // first iteration disagrees, second iteration leaves both agents unchanged
  {
    auto s = script("s05", "aokvqa_demo", "Which animal is pulling the cart?",
                    abcd({"horse", "donkey", "ox", "mule"}), "A");
    s.direct = "B";
    s.logprobs = {-0.3, -0.25};
    qa(s, 1, {{"How tall is the animal compared to the driver?", "Taller than the driver"},
              {"What shape are the animal's ears?", "Short and pointed"}});
    qa(s, 2, {{"Does the animal have a long flowing mane?", "Yes"},
              {"How many legs does the animal have?", "Four"}});
    s.vlm1 = "B";
    s.llm1 = "A";
    s.vlm2 = "B. donkey";
    s.llm2 = "A. horse";
    s.paraphrase_answers = {"B", "A", "A", "B"};
    s.numeric = "Answer: B. Confidence: 70%";
    s.linguistic = "Answer: B. I am confident in this answer.";
    out.push_back(std::move(s));
  }
  {
    auto s = script("s06", "snlive_demo", snli + "'A professor is late to class.'", nli(), "neutral");
    s.direct = "C";
    s.logprobs = {-0.11, -0.09};
    qa(s, 1, {{"Is there a person in the image wearing clothing typically associated with a professor?", "Yes"},
              {"Is there a clock visible in the classroom?", "No"},
              {"Is there a classroom setting in the image?", "Yes"}});
    qa(s, 2, {{"What is the person's age in the image?", "Around fifty"},
              {"Is the person holding any books or papers?", "Yes"}});
    s.vlm1 = "C. contradiction";
    s.llm1 = "B";
    s.vlm2 = "C";
    s.llm2 = "neutral";
    s.paraphrase_answers = {"C", "C", "B", "C"};
    s.numeric = "Answer: C. Confidence: 88%";
    s.linguistic = "Answer: C.";
    out.push_back(std::move(s));
  }
  {
    auto s = script("s07", "aokvqa_demo", "What is the weather like in the scene?",
                    abcd({"sunny", "snowy", "rainy", "foggy"}), "C");
    s.direct = "C";
    s.logprobs = {-0.04, -0.06};
    qa(s, 1, {{"Are people holding umbrellas?", "Yes"},
              {"Is the street reflecting light?", "Yes, it is shiny"}});
    qa(s, 2, {{"Are there clouds in the sky?", "Yes, dark clouds"}});
    s.vlm1 = "A";
    s.llm1 = "C";
    s.vlm2 = "A";
    s.llm2 = "rainy";
    s.paraphrase_answers = {"C", "C", "C", "C"};
    s.numeric = "Answer: C. Confidence: 92%";
    s.linguistic = "Answer: C. I am confident in this answer.";
    out.push_back(std::move(s));
  }
  // every reasoned answer contradicts the direct one
  {
    auto s = script("s08", "aokvqa_demo", "Where was this photo most likely taken?",
                    abcd({"airport", "train station", "bus depot", "harbor"}), "B");
    s.direct = "A";
    s.logprobs = {-0.5, -0.4, -0.3};
    qa(s, 1, {{"Are there rails on the ground?", "Yes"},
              {"When does the next departure leave according to the board?", "At 10:15"}});
    qa(s, 2, {{"Who is waiting on the platform?", "Commuters"}});
    s.vlm1 = "C";
    s.llm1 = "D";
    s.paraphrase_answers = {"B", "B", "A", "C"};
    s.numeric = "Answer: A. Confidence: 60%";
    s.linguistic = "Answer: A. I am not confident in this answer.";
    out.push_back(std::move(s));
  }
  {
    auto s = script("s09", "snlive_demo", snli + "'The dog is asleep on the couch.'", nli(), "contradiction");
    s.direct = "A";
    s.logprobs = {-0.18, -0.2};
    qa(s, 1, {{"Is there a dog in the image?", "Yes"},
              {"Is the dog running on the beach?", "Yes"}});
    qa(s, 2, {{"Is there a couch in the image?", "No"}});
    s.vlm1 = "B";
    s.llm1 = "neutral";
    s.paraphrase_answers = {"A", "C", "C", "C"};
    s.numeric = "Answer: A. Confidence: 75%";
    s.linguistic = "Answer: A. I am not confident in this answer.";
    out.push_back(std::move(s));
  }
  // agents disagree, then agree after the second iteration
  {
    auto s = script("s10", "aokvqa_demo", "Who is most likely to use this equipment?",
                    abcd({"a chef", "a surgeon", "a carpenter", "a painter"}), "C");
    s.direct = "C";
    s.logprobs = {-0.07, -0.05};
    qa(s, 1, {{"What tools are on the bench?", "A saw and a hammer"},
              {"Are there brushes on the bench?", "One brush"}});
    qa(s, 2, {{"Is there sawdust on the floor?", "Yes"}, {"Are there wooden planks nearby?", "Yes"}});
    s.vlm1 = "C";
    s.llm1 = "D";
    s.vlm2 = "C";
    s.llm2 = "a carpenter";
    s.paraphrase_answers = {"C", "C", "C", "D"};
    s.numeric = "Answer: C. Confidence: 83%";
    s.linguistic = "Answer: C. I am confident in this answer.";
    out.push_back(std::move(s));
  }
  // both agents change their consistency outcome
  {
    auto s = script("s11", "aokvqa_demo", "When was this photo most likely taken?",
                    abcd({"morning", "noon", "evening", "midnight"}), "C");
    s.direct = "A";
    s.logprobs = {-0.09, -0.1};
    qa(s, 1, {{"Is the sun low on the horizon?", "Yes"},
              {"Are the street lights on?", "No"}});
    qa(s, 2, {{"Which direction are the shadows pointing?", "East"},
              {"Are shops closing for the day?", "Yes"}});
    s.vlm1 = "A";
    s.llm1 = "C";
    s.vlm2 = "C";
    s.llm2 = "A";
    s.paraphrase_answers = {"A", "C", "A", "A"};
    s.numeric = "Answer: A. Confidence: 81%";
    s.linguistic = "Answer: A. I am confident in this answer.";
    out.push_back(std::move(s));
  }
  // short answer
  {
    auto s = script("s12", "mathvista_demo", "How many apples are on the table?", {}, "3");
    s.direct = "3.";
    s.logprobs = {-0.01};
    qa(s, 1, {{"How many red apples are there?", "2"},
              {"How many green apples are there?", "1"}});
    qa(s, 2, {{"Are any apples hidden behind the bowl?", "No"}});
    s.vlm1 = "3";
    s.llm1 = "3";
    s.paraphrase_answers = {"3", "3", "three", "3"};
    s.numeric = "Answer: 3. Confidence: 97%";
    s.linguistic = "Answer: 3. I am confident in this answer.";
    out.push_back(std::move(s));
  }
  return out;
}

void write_demo(const std::string& dir_str) {
  const fs::path dir(dir_str);
  fs::create_directories(dir);
  const auto scripts = demo_scripts();

  {
    std::ofstream out(dir / "dataset.jsonl", std::ios::binary | std::ios::trunc);
    for (const auto& s : scripts) out << json(s.sample).dump() << "\n";
    if (!out) throw Error(ErrorCode::io, "cannot write dataset");
  }

  const auto role = [](RoleKind kind, const char* model, bool logprobs) {
    ModelRole r;
    r.role = kind;
    r.endpoint = "fixture";
    r.model_name = model;
    r.supports_images = kind != RoleKind::llm_reasoner;
    r.supports_logprobs = logprobs;
    return r;
  };

  RunConfig cfg;
  cfg.dataset = "dataset.jsonl";
  cfg.roles.decomposer = role(RoleKind::decomposer, kDemoDecomposerModel, false);
  cfg.roles.candidate_vlm = role(RoleKind::candidate_vlm, kDemoVlmModel, true);
  cfg.roles.llm_reasoner = role(RoleKind::llm_reasoner, kDemoLlmModel, false);
  cfg.cache_dir = "cache";
  cfg.output_dir = "out";
  cfg.base_dir = dir;

  // Record with and without logprob requests so any method subset replays.
  fs::remove_all(dir / "fixture");
  auto simulator = std::make_shared<ScriptedBackend>(scripts, kDemoLlmModel);
  auto recorder = std::make_shared<RecordingChatBackend>(simulator, dir / "fixture");
  const BackendFactory factory = [&](const ModelRole&) { return recorder; };
  for (const auto& methods : {std::vector<Method>(std::begin(kAllMethods), std::end(kAllMethods)),
                              std::vector<Method>{Method::vlm_agent, Method::vlm_agent_2iter, Method::llm_agent,
                                                  Method::llm_agent_2iter, Method::multi_agent}}) {
    auto rec_cfg = cfg;
    rec_cfg.methods = methods;
    rec_cfg.cache_dir.clear();
    run_evaluation(rec_cfg, factory);
  }

  const auto write_config = [&](const fs::path& p, std::vector<Method> methods) {
    auto c = cfg;
    c.methods = std::move(methods);
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << json(c).dump(2) << "\n";
    if (!out) throw Error(ErrorCode::io, "cannot write " + p.string());
  };
  write_config(dir / "config.json",
               {Method::multi_agent, Method::vlm_agent, Method::llm_agent, Method::perplexity,
                Method::numeric_conf, Method::linguistic_conf, Method::paraphrase});
  write_config(dir / "config_all.json", std::vector<Method>(std::begin(kAllMethods), std::end(kAllMethods)));
}

}  // namespace decc::sim
