#pragma once

// Remote chat-completion backend speaking the common HTTP schema:
// POST {base}/chat/completions with {model, messages, temperature,
// max_tokens, seed}; reply text at choices[0].message.content.

#include <cstdlib>
#include <string>

#include <httplib.h>

#include "clot/gateway.hpp"

namespace clot {

struct RemoteOptions {
  std::string base_url = "http://127.0.0.1:8000/v1";
  std::string api_key;
  std::string model = "default";
  bool supports_images = true;
  int connect_timeout_s = 10;
  int read_timeout_s = 120;

  /// Reads LLM_API_BASE, LLM_API_KEY and LLM_MODEL over the defaults.
  static RemoteOptions from_env() {
    RemoteOptions o;
    if (const char* v = std::getenv("LLM_API_BASE"); v && *v) o.base_url = v;
    if (const char* v = std::getenv("LLM_API_KEY"); v && *v) o.api_key = v;
    if (const char* v = std::getenv("LLM_MODEL"); v && *v) o.model = v;
    return o;
  }
};

/// Builds the request body. Text-only requests send `content` as a plain
/// string; requests with an image send a two-part content array.
inline Json chat_request_body(const ChatRequest& request, const std::string& model) {
  Json msg;
  msg["role"] = "user";
  if (request.image_ref) {
    Json parts = Json::array();
    parts.push_back(Json{{"type", "text"}, {"text", request.prompt}});
    parts.push_back(Json{{"type", "image_url"}, {"image_url", Json{{"url", *request.image_ref}}}});
    msg["content"] = std::move(parts);
  } else {
    msg["content"] = request.prompt;
  }
  Json body;
  body["model"] = model;
  body["messages"] = Json::array({std::move(msg)});
  body["temperature"] = request.decode.temperature;
  body["max_tokens"] = request.decode.max_tokens;
  if (request.decode.seed) body["seed"] = *request.decode.seed;
  return body;
}

/// Extracts the reply text; content may be a string or an array of parts.
inline std::string chat_reply_text(const Json& body) {
  if (!body.contains("choices") || !body["choices"].is_array() || body["choices"].empty()) {
    throw FormatError("reply has no choices");
  }
  const auto& message = body["choices"][0].at("message");
  const auto& content = message.at("content");
  if (content.is_string()) return content.get<std::string>();
  if (content.is_array()) {
    std::string out;
    for (const auto& part : content) {
      if (part.contains("text")) out += part["text"].get<std::string>();
    }
    return out;
  }
  throw FormatError("reply content has unexpected type");
}

class RemoteBackend : public LlmBackend {
 public:
  explicit RemoteBackend(RemoteOptions o) : opt_(std::move(o)) {
    auto scheme_end = opt_.base_url.find("://");
    if (scheme_end == std::string::npos) throw ArgumentError("LLM_API_BASE must include a scheme: " + opt_.base_url);
    auto path_start = opt_.base_url.find('/', scheme_end + 3);
    origin_ = opt_.base_url.substr(0, path_start);
    path_ = path_start == std::string::npos ? "" : opt_.base_url.substr(path_start);
    while (!path_.empty() && path_.back() == '/') path_.pop_back();
#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
    if (opt_.base_url.rfind("https://", 0) == 0) {
      throw CapabilityError("https endpoints need a build with CLOT_WITH_OPENSSL=ON");
    }
#endif
  }

  std::string name() const override { return "remote"; }
  std::string model() const override { return opt_.model; }
  bool supports_images() const override { return opt_.supports_images; }

  std::string complete(const ChatRequest& request) override {
    httplib::Client client(origin_);
    client.set_connection_timeout(opt_.connect_timeout_s, 0);
    client.set_read_timeout(opt_.read_timeout_s, 0);
    httplib::Headers headers;
    if (!opt_.api_key.empty()) headers.emplace("Authorization", "Bearer " + opt_.api_key);
    auto body = io::dump_line(chat_request_body(request, opt_.model));
    auto res = client.Post(path_ + "/chat/completions", headers, body, "application/json");
    if (!res) throw TransportError("request failed: " + httplib::to_string(res.error()));
    if (res->status == 429 || res->status >= 500) {
      throw TransportError("server returned " + std::to_string(res->status));
    }
    if (res->status != 200) {
      throw RejectedError("server returned " + std::to_string(res->status) + ": " + res->body);
    }
    try {
      return chat_reply_text(Json::parse(res->body));
    } catch (const Json::exception& e) {
      throw TransportError(std::string("malformed reply: ") + e.what());
    }
  }

  /// GET {base}/health; returns the body or throws TransportError.
  std::string health() const {
    httplib::Client client(origin_);
    client.set_connection_timeout(opt_.connect_timeout_s, 0);
    auto res = client.Get(path_ + "/health");
    if (!res || res->status != 200) throw TransportError("health check failed");
    return res->body;
  }

 private:
  RemoteOptions opt_;
  std::string origin_;
  std::string path_;
};

}  // namespace clot
