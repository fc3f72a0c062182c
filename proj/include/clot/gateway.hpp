#pragma once

// Backend abstraction over chat-completion services. Backends are shared
// across threads; `Gateway` adds the retry budget, the in-flight cap, a
// per-backend rate limit and the request log on top of any backend.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "clot/concurrency.hpp"
#include "clot/core.hpp"
#include "clot/jsonl.hpp"
#include "clot/random.hpp"

namespace clot {

struct DecodeSettings {
  double temperature = 0.0;  // 0 requests greedy decoding
  int max_tokens = 256;
  std::optional<std::uint64_t> seed;

  static DecodeSettings generation() { return {1.0, 256, std::nullopt}; }
  static DecodeSettings discrimination() { return {0.0, 256, std::nullopt}; }
};

struct ChatRequest {
  std::string prompt;
  std::optional<std::string> image_ref;
  DecodeSettings decode;
};

/// Server refused the request for a reason retrying cannot fix (4xx).
struct RejectedError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Stable key for a (prompt, image) pair; used by transcripts and logs.
inline std::string prompt_hash(std::string_view prompt, const std::optional<std::string>& image_ref) {
  std::uint64_t h = text::fnv1a64(prompt);
  h = text::fnv1a64("\x1f", h);
  if (image_ref) h = text::fnv1a64(*image_ref, text::fnv1a64("\x1e", h));
  return text::hex64(h);
}

class LlmBackend {
 public:
  virtual ~LlmBackend() = default;
  virtual std::string name() const = 0;
  virtual std::string model() const = 0;
  virtual bool supports_images() const = 0;
  /// Must be safe to call concurrently.
  virtual std::string complete(const ChatRequest& request) = 0;

  std::string identity() const { return name() + ":" + model(); }
};

// ---------------------------------------------------------------------------
// Mock backend

/// Deterministic in-process backend. Replies come from a transcript
/// (prompt_hash -> reply) when one matches, otherwise from a seeded
/// procedural generator that understands the toolkit's prompt families.
class MockBackend : public LlmBackend {
 public:
  struct Options {
    std::uint64_t seed = 0;
    bool supports_images = true;
    bool procedural = true;
    std::string model = "mock";
  };

  MockBackend() = default;
  explicit MockBackend(Options o) : opt_(std::move(o)) {}

  std::string name() const override { return "mock"; }
  std::string model() const override { return opt_.model; }
  bool supports_images() const override { return opt_.supports_images; }

  void script(const std::string& prompt, const std::optional<std::string>& image_ref, std::string reply) {
    transcript_[prompt_hash(prompt, image_ref)] = std::move(reply);
  }

  void script_hash(std::string hash, std::string reply) { transcript_[std::move(hash)] = std::move(reply); }

  /// Transcript file rows: {"prompt_hash": h, "reply": r}; a row may carry
  /// "prompt" (and "image_ref") instead of the hash.
  void load_transcript(const std::filesystem::path& path) {
    for (const auto& row : io::read_jsonl(path).rows) {
      auto reply = detail::require_string(row, "reply");
      if (row.contains("prompt_hash")) {
        script_hash(row.at("prompt_hash").get<std::string>(), std::move(reply));
      } else {
        script(detail::require_string(row, "prompt"), detail::optional_string(row, "image_ref"), std::move(reply));
      }
    }
  }

  std::size_t transcript_size() const { return transcript_.size(); }

  std::string complete(const ChatRequest& request) override {
    if (request.image_ref && !opt_.supports_images) {
      throw CapabilityError("backend " + identity() + " has no vision support");
    }
    auto key = prompt_hash(request.prompt, request.image_ref);
    if (auto it = transcript_.find(key); it != transcript_.end()) return it->second;
    if (!opt_.procedural) throw TransportError("mock: no scripted reply for prompt " + key);
    return procedural_reply(request, key);
  }

  /// Option lines "A. ...", "B. ..." found in a prompt, in label order.
  static std::vector<std::string> option_lines(std::string_view prompt) {
    std::vector<std::string> out;
    for (const auto& raw : io::split_lines(prompt)) {
      auto line = text::trim_view(raw);
      char expected = option_label(out.size());
      if (line.size() >= 2 && line[0] == expected && line[1] == '.') {
        out.emplace_back(text::trim_view(line.substr(2)));
      }
    }
    return out;
  }

 private:
  std::string procedural_reply(const ChatRequest& request, const std::string& key) const {
    auto rng = Rng::derive(opt_.seed ^ splitmix64(request.decode.seed.value_or(0)), "mock", text::fnv1a64(key));
    const std::string_view p = request.prompt;
    auto options = option_lines(p);
    if (p.find("kindly respond with") != std::string_view::npos) return "No.";
    if (p.find("ranking the humorousness") != std::string_view::npos && !options.empty()) {
      auto order = rng.permutation(options.size());
      std::string out;
      for (std::size_t k = 0; k < order.size(); ++k) {
        if (k) out += ' ';
        out += std::to_string(k + 1) + ". " + option_label(order[k]) + ". " + options[order[k]] + ".";
      }
      return out;
    }
    if (p.find("Option id. Option content") != std::string_view::npos && !options.empty()) {
      std::size_t picks = p.find("Only two options") != std::string_view::npos ? 2 : 1;
      auto chosen = rng.sample_without_replacement(options.size(), std::min(picks, options.size()));
      std::sort(chosen.begin(), chosen.end());
      std::string out;
      for (std::size_t k = 0; k < chosen.size(); ++k) {
        if (k) out += ' ';
        out += std::string(1, option_label(chosen[k])) + ". " + options[chosen[k]];
      }
      return out;
    }
    static const char* subjects[] = {"My cat", "The moon", "Grandpa", "A pigeon", "The office printer", "My alarm clock",
                                     "The mayor", "A penguin", "The fridge", "My landlord", "The toaster", "A ghost",
                                     "The dentist", "My shadow", "A giraffe", "The wifi router"};
    static const char* verbs[] = {"files taxes for", "negotiates with", "apologizes to", "secretly trains",
                                  "writes poetry about", "sues", "moonwalks past", "invoices", "adopts",
                                  "haunts", "texts", "out-stares", "sings opera to", "unfriends", "bribes",
                                  "rents a flat from"};
    static const char* objects[] = {"the neighbor's goldfish", "a tax auditor", "the last slice of pizza", "my boss",
                                    "a traffic cone", "the weather forecast", "a lonely sock", "the microwave",
                                    "an entire choir", "the group chat", "a confused tourist", "yesterday",
                                    "a spreadsheet", "the escalator", "a retired pirate", "the vending machine"};
    std::string cond;
    for (const auto& raw : io::split_lines(p)) {
      auto line = text::trim_view(raw);
      if (line.rfind("Condition: ", 0) == 0) cond = std::string(line.substr(11));
    }
    std::string out = subjects[rng.index(16)];
    out += ' ';
    out += verbs[rng.index(16)];
    out += ' ';
    out += cond.empty() ? std::string(objects[rng.index(16)]) : ("the " + cond);
    out += '.';
    return out;
  }

  Options opt_;
  std::unordered_map<std::string, std::string> transcript_;
};

// ---------------------------------------------------------------------------
// Request log

inline std::string utc_timestamp(std::chrono::system_clock::time_point tp = std::chrono::system_clock::now()) {
  auto t = std::chrono::system_clock::to_time_t(tp);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Line-delimited (timestamp, backend, latency_ms, prompt_hash, status).
class RequestLog {
 public:
  RequestLog() = default;
  explicit RequestLog(const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    file_.open(path, std::ios::app);
    if (!file_) throw FormatError("cannot open request log " + path.string());
  }

  void record(const std::string& backend, double latency_ms, const std::string& hash, const std::string& status) {
    Json j;
    j["timestamp"] = utc_timestamp();
    j["backend"] = backend;
    j["latency_ms"] = latency_ms;
    j["prompt_hash"] = hash;
    j["status"] = status;
    std::lock_guard lock(mu_);
    ++entries_;
    if (file_.is_open()) {
      file_ << io::dump_line(j) << '\n';
      file_.flush();
    }
  }

  std::size_t entries() const {
    std::lock_guard lock(mu_);
    return entries_;
  }

 private:
  mutable std::mutex mu_;
  std::ofstream file_;
  std::size_t entries_ = 0;
};

// ---------------------------------------------------------------------------
// Gateway

struct GatewayOptions {
  int retries = 3;  // extra attempts after the first
  std::chrono::milliseconds backoff_base{200};
  double backoff_factor = 2.0;
  std::chrono::milliseconds backoff_max{10000};
  std::size_t max_inflight = 4;
  std::chrono::milliseconds min_interval{0};  // per-backend rate limit
};

struct CallResult {
  std::optional<std::string> reply;
  std::string error;  // set when reply is absent
};

class Gateway {
 public:
  Gateway(std::shared_ptr<LlmBackend> backend, GatewayOptions opt = {}, std::shared_ptr<RequestLog> log = nullptr)
      : backend_(std::move(backend)), opt_(opt), log_(std::move(log)), gate_(opt.max_inflight) {
    if (!backend_) throw ArgumentError("gateway needs a backend");
  }

  const LlmBackend& backend() const { return *backend_; }
  const GatewayOptions& options() const { return opt_; }

  /// Sends one request. Transport failures are retried with exponential
  /// backoff; capability and rejection errors are not.
  std::string complete(const ChatRequest& request) {
    if (request.image_ref && !backend_->supports_images()) {
      throw CapabilityError("backend " + backend_->identity() + " has no vision support");
    }
    ++requests_;
    const auto hash = prompt_hash(request.prompt, request.image_ref);
    std::string last_error;
    for (int attempt = 0; attempt <= opt_.retries; ++attempt) {
      if (attempt > 0) std::this_thread::sleep_for(backoff(attempt));
      throttle();
      gate_.acquire();
      ++attempts_;
      const auto start = std::chrono::steady_clock::now();
      try {
        auto reply = backend_->complete(request);
        gate_.release();
        log(start, hash, "ok");
        return reply;
      } catch (const TransportError& e) {
        gate_.release();
        last_error = e.what();
        log(start, hash, std::string("transport_error: ") + e.what());
      } catch (const std::exception& e) {
        gate_.release();
        log(start, hash, std::string("error: ") + e.what());
        throw;
      }
    }
    ++failures_;
    throw TransportError("gave up after " + std::to_string(opt_.retries + 1) + " attempts: " + last_error);
  }

  /// Sends many requests concurrently (bounded by the in-flight cap) and
  /// returns results in input order.
  std::vector<CallResult> complete_batch(const std::vector<ChatRequest>& requests) {
    std::vector<CallResult> out(requests.size());
    parallel_for(requests.size(), opt_.max_inflight, [&](std::size_t i) {
      try {
        out[i].reply = complete(requests[i]);
      } catch (const std::exception& e) {
        out[i].error = e.what();
      }
    });
    return out;
  }

  std::size_t requests() const { return requests_; }
  std::size_t attempts() const { return attempts_; }
  std::size_t failures() const { return failures_; }
  std::size_t peak_inflight() const { return gate_.peak(); }

 private:
  std::chrono::milliseconds backoff(int attempt) const {
    double ms = static_cast<double>(opt_.backoff_base.count());
    for (int i = 1; i < attempt; ++i) ms *= opt_.backoff_factor;
    ms = std::min(ms, static_cast<double>(opt_.backoff_max.count()));
    return std::chrono::milliseconds(static_cast<long long>(ms));
  }

  void throttle() {
    if (opt_.min_interval.count() <= 0) return;
    std::chrono::steady_clock::time_point slot;
    {
      std::lock_guard lock(rate_mu_);
      auto now = std::chrono::steady_clock::now();
      slot = std::max(now, next_slot_);
      next_slot_ = slot + opt_.min_interval;
    }
    std::this_thread::sleep_until(slot);
  }

  void log(std::chrono::steady_clock::time_point start, const std::string& hash, const std::string& status) {
    if (!log_) return;
    auto ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    log_->record(backend_->identity(), ms, hash, status);
  }

  std::shared_ptr<LlmBackend> backend_;
  GatewayOptions opt_;
  std::shared_ptr<RequestLog> log_;
  InflightGate gate_;
  std::mutex rate_mu_;
  std::chrono::steady_clock::time_point next_slot_{};
  std::atomic<std::size_t> requests_{0};
  std::atomic<std::size_t> attempts_{0};
  std::atomic<std::size_t> failures_{0};
};

}  // namespace clot
