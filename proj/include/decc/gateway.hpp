#pragma once

// Uniform access to the three model roles over a chat-style protocol.
//
// A ModelGateway owns one role's capabilities and enforces them before any
// request leaves the process: images never reach a role that does not accept
// them (the text-only reasoner in particular) and logprobs are only requested
// from backends that can return them. Transient transport failures are retried
// with exponential backoff; everything else surfaces immediately.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "decc/core_model.hpp"

namespace decc {

enum class RoleKind { decomposer, candidate_vlm, llm_reasoner };

std::string_view to_string(RoleKind r);
RoleKind parse_role_kind(std::string_view s);

struct ModelRole {
  RoleKind role = RoleKind::candidate_vlm;
  std::string endpoint;  // http(s):// base URL, or a replay fixture directory
  std::string model_name;
  GenerationParams params;
  bool supports_images = true;
  bool supports_logprobs = false;
  std::optional<std::string> api_key_env;  // name of the env var holding a bearer token
  int max_in_flight = 4;
};

std::vector<std::string> validate_role(const ModelRole& r);

struct ChatMessage {
  std::string speaker;  // "system" | "user" | "assistant"
  std::string text;
  std::optional<std::string> image_ref;

  bool operator==(const ChatMessage&) const = default;
};

struct ChatRequest {
  std::string model;
  std::vector<ChatMessage> messages;
  GenerationParams params;
  bool want_logprobs = false;
  // Free-form tag (template name) for logs and fixtures; not part of the
  // canonical form and not sent over the wire.
  std::string purpose;
};

/// Canonical request JSON: keys sorted, params normalized. The replay hash is
/// computed over its compact dump.
json canonical_request(const ChatRequest& r);
std::string request_hash(const ChatRequest& r);

struct ChatResponse {
  std::string text;
  std::optional<std::vector<double>> token_logprobs;
  double elapsed_seconds = 0.0;  // backend-reported latency, used for stage costs
};

class ChatBackend {
 public:
  virtual ~ChatBackend() = default;

  /// Throws Error(transport_transient) for retryable failures,
  /// Error(transport) / Error(protocol) otherwise.
  virtual ChatResponse complete(const ChatRequest& request) = 0;
};

struct RetryPolicy {
  int attempts = 3;
  std::chrono::duration<double> initial_backoff{1.0};
  double multiplier = 2.0;
};

/// Counting semaphore with a runtime limit, shared by gateways that talk to
/// the same endpoint.
class InFlightLimiter {
 public:
  explicit InFlightLimiter(int limit) : available_(limit < 1 ? 1 : limit) {}

  void acquire() {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return available_ > 0; });
    --available_;
  }

  void release() {
    {
      std::lock_guard lock(mu_);
      ++available_;
    }
    cv_.notify_one();
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  int available_;
};

class ModelGateway {
 public:
  using Sleeper = std::function<void(std::chrono::duration<double>)>;

  ModelGateway(ModelRole role, std::shared_ptr<ChatBackend> backend, RetryPolicy retry = {},
               std::shared_ptr<InFlightLimiter> limiter = nullptr, Sleeper sleeper = nullptr);

  const ModelRole& role() const { return role_; }

  /// Sends one chat request. Throws Error(capability) when a message carries
  /// an image the role cannot accept or logprobs are requested from a role
  /// without logprob support; Error(transport) once retries are exhausted.
  ChatResponse chat(const std::vector<ChatMessage>& messages, bool want_logprobs,
                    std::string_view purpose = {});

  std::uint64_t requests_sent() const { return requests_.load(); }

 private:
  ModelRole role_;
  std::shared_ptr<ChatBackend> backend_;
  RetryPolicy retry_;
  std::shared_ptr<InFlightLimiter> limiter_;
  Sleeper sleeper_;
  std::atomic<std::uint64_t> requests_{0};
};

void to_json(json& j, const ChatMessage& m);
void from_json(const json& j, ChatMessage& m);
void to_json(json& j, const ModelRole& r);
void from_json(const json& j, ModelRole& r);

}  // namespace decc
