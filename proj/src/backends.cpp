#include "decc/backends.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "httplib.h"

#include "decc/error.hpp"
#include "decc/hash.hpp"

namespace decc {
namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

bool is_http_endpoint(const std::string& endpoint) {
  return endpoint.rfind("http://", 0) == 0 || endpoint.rfind("https://", 0) == 0;
}

// ---- HTTP ------------------------------------------------------------------

HttpChatBackend::HttpChatBackend(std::string base_url, std::optional<std::string> api_key_env,
                                 std::chrono::seconds timeout)
    : api_key_env_(std::move(api_key_env)), timeout_(timeout) {
  const auto scheme_end = base_url.find("://");
  if (scheme_end == std::string::npos) throw Error(ErrorCode::config, "not a URL: " + base_url);
  const auto path_start = base_url.find('/', scheme_end + 3);
  scheme_host_port_ = base_url.substr(0, path_start);
  path_prefix_ = path_start == std::string::npos ? "" : base_url.substr(path_start);
  while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
}

json HttpChatBackend::wire_body(const ChatRequest& request) {
  json messages = json::array();
  for (const auto& m : request.messages) {
    if (!m.image_ref) {
      messages.push_back({{"role", m.speaker}, {"content", m.text}});
      continue;
    }
    json parts = json::array();
    parts.push_back({{"type", "image_url"}, {"image_url", {{"url", *m.image_ref}}}});
    parts.push_back({{"type", "text"}, {"text", m.text}});
    messages.push_back({{"role", m.speaker}, {"content", std::move(parts)}});
  }

  const auto p = request.params.normalized();
  json body{{"model", request.model}, {"messages", std::move(messages)}, {"max_tokens", p.max_tokens}};
  if (p.mode == DecodingMode::greedy) {
    body["temperature"] = 0.0;
  } else {
    body["temperature"] = p.temperature;
    body["top_p"] = p.nucleus_p;
  }
  if (p.seed) body["seed"] = *p.seed;
  if (request.want_logprobs) body["logprobs"] = true;
  return body;
}

ChatResponse HttpChatBackend::parse_wire_response(const std::string& body) {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::protocol, std::string("response is not JSON: ") + e.what());
  }
  try {
    const auto& choice = j.at("choices").at(0);
    ChatResponse out;
    const auto& content = choice.at("message").at("content");
    out.text = content.is_null() ? std::string{} : content.get<std::string>();
    if (choice.contains("logprobs") && choice.at("logprobs").is_object() &&
        choice.at("logprobs").contains("content") && choice.at("logprobs").at("content").is_array()) {
      std::vector<double> lps;
      for (const auto& tok : choice.at("logprobs").at("content")) lps.push_back(tok.at("logprob").get<double>());
      out.token_logprobs = std::move(lps);
    }
    return out;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::protocol, std::string("malformed chat response: ") + e.what());
  }
}

ChatResponse HttpChatBackend::complete(const ChatRequest& request) {
  httplib::Client client(scheme_host_port_);
  client.set_connection_timeout(std::chrono::seconds(10));
  client.set_read_timeout(timeout_);
  client.set_write_timeout(timeout_);

  httplib::Headers headers;
  if (api_key_env_) {
    if (const char* key = std::getenv(api_key_env_->c_str()); key != nullptr && *key != '\0') {
      headers.emplace("Authorization", std::string("Bearer ") + key);
    }
  }

  const auto started = std::chrono::steady_clock::now();
  auto res = client.Post(path_prefix_ + "/chat/completions", headers, wire_body(request).dump(),
                         "application/json");
  const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - started;

  if (!res) {
    throw Error(ErrorCode::transport_transient,
                scheme_host_port_ + ": " + httplib::to_string(res.error()));
  }
  if (res->status == 429 || res->status >= 500) {
    throw Error(ErrorCode::transport_transient,
                scheme_host_port_ + ": HTTP " + std::to_string(res->status));
  }
  if (res->status < 200 || res->status >= 300) {
    throw Error(ErrorCode::transport, scheme_host_port_ + ": HTTP " + std::to_string(res->status) + ": " +
                                          res->body.substr(0, 200));
  }
  auto out = parse_wire_response(res->body);
  out.elapsed_seconds = elapsed.count();
  return out;
}

// ---- replay ----------------------------------------------------------------

void to_json(json& j, const ReplayRecord& r) {
  j = json{{"request_hash", r.request_hash},
           {"request", r.request},
           {"response_text", r.response_text},
           {"elapsed_seconds", r.elapsed_seconds}};
  j["logprobs"] = r.logprobs ? json(*r.logprobs) : json(nullptr);
  if (!r.purpose.empty()) j["purpose"] = r.purpose;
}

void from_json(const json& j, ReplayRecord& r) {
  r = ReplayRecord{};
  r.request_hash = j.value("request_hash", std::string{});
  if (j.contains("request")) r.request = j.at("request");
  j.at("response_text").get_to(r.response_text);
  if (j.contains("logprobs") && !j.at("logprobs").is_null()) r.logprobs = j.at("logprobs").get<std::vector<double>>();
  r.elapsed_seconds = j.value("elapsed_seconds", 0.0);
  r.purpose = j.value("purpose", std::string{});
}

ReplayChatBackend::ReplayChatBackend(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error(ErrorCode::io, "replay fixture directory not found: " + dir.string());

  auto add = [&](const json& j, const fs::path& origin) {
    auto rec = j.get<ReplayRecord>();
    if (!rec.request.is_null()) {
      const auto computed = sha256_hex(rec.request.dump());
      if (!rec.request_hash.empty() && rec.request_hash != computed) {
        throw Error(ErrorCode::validation, "fixture " + origin.string() + ": request_hash does not match request");
      }
      rec.request_hash = computed;
    }
    if (rec.request_hash.empty()) throw Error(ErrorCode::validation, "fixture " + origin.string() + ": no request_hash");
    records_.insert_or_assign(rec.request_hash, std::move(rec));
  };

  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file()) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    try {
      if (f.extension() == ".json") {
        add(json::parse(read_file(f)), f);
      } else if (f.extension() == ".jsonl") {
        std::istringstream lines(read_file(f));
        for (std::string line; std::getline(lines, line);) {
          if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
          add(json::parse(line), f);
        }
      }
    } catch (const json::exception& e) {
      throw Error(ErrorCode::validation, "fixture " + f.string() + ": " + e.what());
    }
  }
}

ChatResponse ReplayChatBackend::complete(const ChatRequest& request) {
  const auto hash = request_hash(request);
  const auto it = records_.find(hash);
  if (it == records_.end()) {
    throw Error(ErrorCode::transport, "replay miss for " + hash +
                                          (request.purpose.empty() ? "" : " (" + request.purpose + ")"));
  }
  return ChatResponse{it->second.response_text, it->second.logprobs, it->second.elapsed_seconds};
}

// ---- recording -------------------------------------------------------------

RecordingChatBackend::RecordingChatBackend(std::shared_ptr<ChatBackend> inner, fs::path dir)
    : inner_(std::move(inner)), dir_(std::move(dir)) {
  fs::create_directories(dir_);
}

ChatResponse RecordingChatBackend::complete(const ChatRequest& request) {
  auto response = inner_->complete(request);
  ReplayRecord rec;
  rec.request = canonical_request(request);
  rec.request_hash = sha256_hex(rec.request.dump());
  rec.response_text = response.text;
  rec.logprobs = response.token_logprobs;
  rec.elapsed_seconds = response.elapsed_seconds;
  rec.purpose = request.purpose;

  const auto path = dir_ / (rec.request_hash + ".json");
  const auto tmp = dir_ / (rec.request_hash + ".json.tmp");
  std::lock_guard lock(mu_);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << json(rec).dump(2) << '\n';
    if (!out) throw Error(ErrorCode::io, "cannot write " + tmp.string());
  }
  fs::rename(tmp, path);
  return response;
}

std::shared_ptr<ChatBackend> make_backend(const ModelRole& role, const fs::path& base_dir) {
  if (is_http_endpoint(role.endpoint)) {
    return std::make_shared<HttpChatBackend>(role.endpoint, role.api_key_env);
  }
  fs::path dir(role.endpoint);
  if (dir.is_relative()) dir = base_dir / dir;
  return std::make_shared<ReplayChatBackend>(dir);
}

}  // namespace decc
