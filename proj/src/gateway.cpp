#include "decc/gateway.hpp"

#include <cmath>
#include <thread>

#include "decc/error.hpp"
#include "decc/hash.hpp"

namespace decc {

std::string_view to_string(RoleKind r) {
  switch (r) {
    case RoleKind::decomposer: return "decomposer";
    case RoleKind::candidate_vlm: return "candidate_vlm";
    case RoleKind::llm_reasoner: return "llm_reasoner";
  }
  return "unknown";
}

RoleKind parse_role_kind(std::string_view s) {
  if (s == "decomposer") return RoleKind::decomposer;
  if (s == "candidate_vlm") return RoleKind::candidate_vlm;
  if (s == "llm_reasoner") return RoleKind::llm_reasoner;
  throw Error(ErrorCode::config, "unknown model role '" + std::string(s) + "'");
}

std::vector<std::string> validate_role(const ModelRole& r) {
  std::vector<std::string> issues;
  const std::string name(to_string(r.role));
  if (r.endpoint.empty()) issues.push_back(name + ": endpoint is empty");
  if (r.model_name.empty()) issues.push_back(name + ": model name is empty");
  if (r.role == RoleKind::llm_reasoner && r.supports_images) {
    issues.push_back(name + ": the text-only reasoner must not accept images");
  }
  if (r.role != RoleKind::llm_reasoner && !r.supports_images) {
    issues.push_back(name + ": must accept images");
  }
  if (r.max_in_flight < 1) issues.push_back(name + ": max_in_flight must be >= 1");
  for (auto& issue : validate_params(r.params)) issues.push_back(name + ": " + issue);
  return issues;
}

json canonical_request(const ChatRequest& r) {
  json messages = json::array();
  for (const auto& m : r.messages) messages.push_back(m);
  return json{{"model", r.model},
              {"messages", std::move(messages)},
              {"params", r.params},
              {"logprobs", r.want_logprobs}};
}

std::string request_hash(const ChatRequest& r) { return sha256_hex(canonical_request(r).dump()); }

ModelGateway::ModelGateway(ModelRole role, std::shared_ptr<ChatBackend> backend, RetryPolicy retry,
                           std::shared_ptr<InFlightLimiter> limiter, Sleeper sleeper)
    : role_(std::move(role)),
      backend_(std::move(backend)),
      retry_(retry),
      limiter_(limiter ? std::move(limiter) : std::make_shared<InFlightLimiter>(role_.max_in_flight)),
      sleeper_(sleeper ? std::move(sleeper)
                       : Sleeper([](std::chrono::duration<double> d) { std::this_thread::sleep_for(d); })) {
  if (!backend_) throw Error(ErrorCode::config, "gateway for " + std::string(to_string(role_.role)) + " has no backend");
  if (retry_.attempts < 1) retry_.attempts = 1;
}

ChatResponse ModelGateway::chat(const std::vector<ChatMessage>& messages, bool want_logprobs,
                                std::string_view purpose) {
  const std::string who(to_string(role_.role));
  for (const auto& m : messages) {
    if (m.image_ref && !role_.supports_images) {
      throw Error(ErrorCode::capability, who + " does not accept images (" + std::string(purpose) + ")");
    }
  }
  if (want_logprobs && !role_.supports_logprobs) {
    throw Error(ErrorCode::capability, who + " does not support token logprobs");
  }

  ChatRequest request{role_.model_name, messages, role_.params.normalized(), want_logprobs,
                      std::string(purpose)};

  struct Slot {
    InFlightLimiter& l;
    explicit Slot(InFlightLimiter& l) : l(l) { l.acquire(); }
    ~Slot() { l.release(); }
  };

  auto delay = retry_.initial_backoff;
  for (int attempt = 1;; ++attempt) {
    try {
      Slot slot(*limiter_);
      ++requests_;
      return backend_->complete(request);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::transport_transient) throw;
      if (attempt >= retry_.attempts) {
        throw Error(ErrorCode::transport, who + ": giving up after " + std::to_string(attempt) +
                                              " attempts: " + e.what());
      }
    }
    sleeper_(delay);
    delay *= retry_.multiplier;
  }
}

void to_json(json& j, const ChatMessage& m) {
  j = json{{"role", m.speaker}, {"content", m.text}};
  if (m.image_ref) j["image"] = *m.image_ref;
}

void from_json(const json& j, ChatMessage& m) {
  j.at("role").get_to(m.speaker);
  j.at("content").get_to(m.text);
  m.image_ref.reset();
  if (j.contains("image") && !j.at("image").is_null()) m.image_ref = j.at("image").get<std::string>();
}

void to_json(json& j, const ModelRole& r) {
  j = json{{"role", to_string(r.role)},
           {"endpoint", r.endpoint},
           {"model", r.model_name},
           {"params", r.params},
           {"supports_images", r.supports_images},
           {"supports_logprobs", r.supports_logprobs},
           {"max_in_flight", r.max_in_flight}};
  if (r.api_key_env) j["api_key_env"] = *r.api_key_env;
}

void from_json(const json& j, ModelRole& r) {
  r = ModelRole{};
  if (j.contains("role")) r.role = parse_role_kind(j.at("role").get<std::string>());
  r.supports_images = r.role != RoleKind::llm_reasoner;
  j.at("endpoint").get_to(r.endpoint);
  j.at("model").get_to(r.model_name);
  if (j.contains("params")) r.params = j.at("params").get<GenerationParams>();
  r.supports_images = j.value("supports_images", r.supports_images);
  r.supports_logprobs = j.value("supports_logprobs", r.supports_logprobs);
  r.max_in_flight = j.value("max_in_flight", r.max_in_flight);
  if (j.contains("api_key_env") && !j.at("api_key_env").is_null()) {
    r.api_key_env = j.at("api_key_env").get<std::string>();
  }
}

}  // namespace decc
