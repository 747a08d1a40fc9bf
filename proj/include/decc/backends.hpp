#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>

#include "decc/gateway.hpp"

namespace decc {

/// OpenAI-style `POST {base}/chat/completions`. Images are attached as
/// `image_url` content parts; logprobs are read from
/// `choices[0].logprobs.content[*].logprob`.
class HttpChatBackend : public ChatBackend {
 public:
  /// `base_url` like `http://host:8000/v1`. When `api_key_env` names a set
  /// environment variable its value is sent as a bearer token.
  HttpChatBackend(std::string base_url, std::optional<std::string> api_key_env = std::nullopt,
                  std::chrono::seconds timeout = std::chrono::seconds(300));

  ChatResponse complete(const ChatRequest& request) override;

  /// Request body as sent on the wire.
  static json wire_body(const ChatRequest& request);
  /// Parses a chat-completions response body. Throws Error(protocol).
  static ChatResponse parse_wire_response(const std::string& body);

 private:
  std::string scheme_host_port_;
  std::string path_prefix_;
  std::optional<std::string> api_key_env_;
  std::chrono::seconds timeout_;
};

/// One recorded exchange. On disk: {request_hash, request, response_text,
/// logprobs, elapsed_seconds?, purpose?}.
struct ReplayRecord {
  std::string request_hash;
  json request;
  std::string response_text;
  std::optional<std::vector<double>> logprobs;
  double elapsed_seconds = 0.0;
  std::string purpose;
};

void to_json(json& j, const ReplayRecord& r);
void from_json(const json& j, ReplayRecord& r);

/// Read-only lookup of recorded responses keyed by the canonical request
/// hash. Loads every `*.json` (one record) and `*.jsonl` (one per line) file
/// in the directory. A miss is a non-retryable transport error.
class ReplayChatBackend : public ChatBackend {
 public:
  explicit ReplayChatBackend(const std::filesystem::path& dir);

  ChatResponse complete(const ChatRequest& request) override;

  std::size_t size() const { return records_.size(); }

 private:
  std::map<std::string, ReplayRecord> records_;
};

/// Forwards to `inner` and writes each successful exchange to
/// `<dir>/<request_hash>.json`.
class RecordingChatBackend : public ChatBackend {
 public:
  RecordingChatBackend(std::shared_ptr<ChatBackend> inner, std::filesystem::path dir);

  ChatResponse complete(const ChatRequest& request) override;

 private:
  std::shared_ptr<ChatBackend> inner_;
  std::filesystem::path dir_;
  std::mutex mu_;
};

bool is_http_endpoint(const std::string& endpoint);

/// HTTP backend for URLs; replay backend for anything else, resolved
/// relative to `base_dir`.
std::shared_ptr<ChatBackend> make_backend(const ModelRole& role, const std::filesystem::path& base_dir);

}  // namespace decc
