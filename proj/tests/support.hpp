#pragma once

// Shared fixtures: temporary directories, the shipped lexicons, and a
// deterministic synthetic corpus in three languages.

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "clot/core.hpp"
#include "clot/gateway.hpp"
#include "clot/ingest.hpp"
#include "clot/nouns.hpp"
#include "clot/random.hpp"

#ifndef CLOT_DATA_DIR
#define CLOT_DATA_DIR "data"
#endif
#ifndef CLOT_TEST_DATA
#define CLOT_TEST_DATA "tests"
#endif

namespace clot::fixture {

namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    auto base = fs::temp_directory_path() / "clot-tests";
    path_ = base / (std::to_string(::getpid()) + "-" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline fs::path data_dir() { return CLOT_DATA_DIR; }
inline fs::path test_data() { return CLOT_TEST_DATA; }

inline const std::vector<std::string>& lexicon(const Language& lang) {
  static const auto en = io::read_word_list(data_dir() / "lexicon" / "en.txt");
  static const auto cn = io::read_word_list(data_dir() / "lexicon" / "cn.txt");
  static const auto jp = io::read_word_list(data_dir() / "lexicon" / "jp.txt");
  if (lang == Language::CN()) return cn;
  if (lang == Language::JP()) return jp;
  return en;
}

inline const DictionaryExtractor& shipped_extractor() {
  static const auto ex = DictionaryExtractor::from_directory(data_dir() / "lexicon");
  return ex;
}

/// Backend whose replies come from a callback; records every prompt.
class ScriptedBackend : public LlmBackend {
 public:
  using Fn = std::function<std::string(const ChatRequest&, std::size_t call)>;
  explicit ScriptedBackend(Fn fn, bool images = true) : fn_(std::move(fn)), images_(images) {}

  std::string name() const override { return "scripted"; }
  std::string model() const override { return "test"; }
  bool supports_images() const override { return images_; }
  std::string complete(const ChatRequest& r) override {
    std::size_t n;
    {
      std::lock_guard lock(mu_);
      n = prompts_.size();
      prompts_.push_back(r.prompt);
    }
    return fn_(r, n);
  }

  std::vector<std::string> prompts() const {
    std::lock_guard lock(mu_);
    return prompts_;
  }
  std::size_t calls() const {
    std::lock_guard lock(mu_);
    return prompts_.size();
  }

 private:
  Fn fn_;
  bool images_;
  mutable std::mutex mu_;
  std::vector<std::string> prompts_;
};

inline GatewayOptions fast_gateway(int retries = 0, std::size_t inflight = 4) {
  GatewayOptions o;
  o.retries = retries;
  o.backoff_base = std::chrono::milliseconds(1);
  o.max_inflight = inflight;
  return o;
}

/// A humorous-looking response built around two lexicon nouns.
inline std::string synthetic_response(const Language& lang, Rng& rng) {
  static const std::vector<std::string> en{
      "the {a} is secretly a {b} in disguise",       "when your {a} finally learns to use the {b}",
      "{a} said no to the {b} today",                "nobody warned the {a} about the {b}",
      "my {a} has filed a complaint against the {b}", "breaking news: {a} elected mayor, {b} demands a recount",
      "the {a} and the {b} are not speaking anymore", "I asked for a {a} and they gave me a {b}"};
  static const std::vector<std::string> cn{"{a}：我只是想当一个{b}", "{a}终于学会了用{b}", "别问，问就是{a}和{b}的事",
                                           "{a}今天又和{b}吵架了", "听说{a}要嫁给{b}了"};
  static const std::vector<std::string> jp{"{a}が{b}になりたいと言っている", "{a}は今日も{b}を探している",
                                           "{a}と{b}の秘密の会議", "{a}、ついに{b}を買う"};
  const auto& templates = lang == Language::CN() ? cn : (lang == Language::JP() ? jp : en);
  const auto& words = lexicon(lang);
  auto t = templates[rng.index(templates.size())];
  auto put = [&](const std::string& slot) {
    auto pos = t.find(slot);
    t.replace(pos, slot.size(), words[rng.index(words.size())]);
  };
  put("{a}");
  put("{b}");
  return t;
}

inline Language synthetic_language(Rng& rng) {
  auto u = rng.uniform01();
  if (u < 0.6) return Language::EN();
  if (u < 0.85) return Language::CN();
  return Language::JP();
}

/// Crawl records for `questions` image questions with 5..8 answers each.
inline std::vector<ingest::RawCrawlRecord> synthetic_crawl(std::size_t questions, std::uint64_t seed) {
  auto rng = Rng::derive(seed, "fixture/crawl", 0);
  std::vector<ingest::RawCrawlRecord> out;
  std::size_t answer = 0;
  for (std::size_t q = 0; q < questions; ++q) {
    auto lang = synthetic_language(rng);
    auto pid = std::to_string(6900000 + q);
    auto count = 5 + rng.index(4);
    std::vector<std::string> seen;
    for (std::size_t k = 0; k < count; ++k) {
      std::string text_value;
      do {
        text_value = synthetic_response(lang, rng);
      } while (std::find(seen.begin(), seen.end(), text_value) != seen.end());
      seen.push_back(text_value);
      auto likes = rng.index(5000);
      std::string shown = std::to_string(likes);
      if (likes >= 1000 && rng.bernoulli(0.5)) shown.insert(shown.size() - 3, ",");
      out.push_back({std::to_string(++answer), text_value, shown, "2023-0" + std::to_string(1 + q % 9) + "-01",
                     pid, "https://img.example/" + pid + ".jpg"});
    }
  }
  return out;
}

/// Ready-made samples covering every task and language.
inline std::vector<OogiriSample> synthetic_samples(std::size_t count, std::uint64_t seed) {
  auto rng = Rng::derive(seed, "fixture/samples", 0);
  std::vector<OogiriSample> out;
  for (std::size_t i = 0; i < count; ++i) {
    OogiriSample s;
    s.id = "s" + std::to_string(i);
    s.task = static_cast<TaskType>(i % 3);
    s.lang = synthetic_language(rng);
    if (s.task != TaskType::T2T) s.image_ref = "img/" + s.id + ".jpg";
    if (s.task == TaskType::T2T) s.question_text = "What would a " + lexicon(s.lang)[rng.index(20)] + " say?";
    if (s.task == TaskType::IT2T) s.question_text = "The sign says: [MASK]";
    auto n = 5 + rng.index(3);
    for (std::size_t k = 0; k < n; ++k) {
      std::string t;
      do {
        t = synthetic_response(s.lang, rng);
      } while (std::any_of(s.responses.begin(), s.responses.end(), [&](const Response& r) { return r.text == t; }));
      s.responses.push_back({t, static_cast<std::int64_t>(rng.index(1000))});
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace clot::fixture
