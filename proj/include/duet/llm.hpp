#pragma once

#include <condition_variable>
#include <cstdlib>
#include <ctime>
#include <deque>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "duet/errors.hpp"

namespace duet {

/// Completion backend interface. Implementations must be safe to call
/// from multiple threads.
class LlmClient {
 public:
  virtual ~LlmClient() = default;
  virtual std::string complete(const std::string& prompt) = 0;
};

// Fixture files are JSON lines {prompt, response, timestamp}.

struct FixtureRecord {
  std::string prompt;
  std::string response;
  std::string timestamp;
};

inline std::string iso8601_now() {
  std::time_t now = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof buf, "%FT%TZ", std::gmtime(&now));
  return buf;
}

inline void append_fixture(const std::string& path, const FixtureRecord& rec) {
  std::ofstream out(path, std::ios::app);
  require<IoError>(bool(out), "cannot open fixture file: " + path);
  nlohmann::json j = {{"prompt", rec.prompt},
                      {"response", rec.response},
                      {"timestamp", rec.timestamp}};
  out << j.dump() << "\n";
}

inline std::vector<FixtureRecord> load_fixtures(const std::string& path) {
  std::ifstream in(path);
  require<IoError>(bool(in), "cannot open fixture file: " + path);
  std::vector<FixtureRecord> records;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    require<CorruptFile>(!j.is_discarded() && j.contains("prompt") &&
                             j.contains("response"),
                         "bad fixture line " + std::to_string(line_no));
    records.push_back({j.at("prompt").get<std::string>(),
                       j.at("response").get<std::string>(),
                       j.value("timestamp", "")});
  }
  return records;
}

/// Replays recorded responses keyed by the exact prompt; repeated prompts
/// replay in recording order.
class FixtureLlmClient : public LlmClient {
 public:
  explicit FixtureLlmClient(const std::string& path) {
    for (auto& rec : load_fixtures(path))
      replies_[rec.prompt].push_back(std::move(rec.response));
  }

  std::string complete(const std::string& prompt) override {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = replies_.find(prompt);
    require<BackendUnavailable>(it != replies_.end() && !it->second.empty(),
                                "no recorded response for this prompt");
    std::string out = std::move(it->second.front());
    it->second.pop_front();
    return out;
  }

 private:
  std::mutex mu_;
  std::map<std::string, std::deque<std::string>> replies_;
};

struct HttpLlmConfig {
  std::string endpoint;    // e.g. http://host:8080/v1/completions
  std::string api_key;     // sent as a bearer token when non-empty
  std::string model = "generic-completion";
  int max_tokens = 512;
  int max_concurrent_requests = 4;

  /// Endpoint and credential come from the environment by default.
  static HttpLlmConfig from_env() {
    HttpLlmConfig cfg;
    if (const char* url = std::getenv("DUET_LLM_ENDPOINT")) cfg.endpoint = url;
    if (const char* key = std::getenv("DUET_LLM_API_KEY")) cfg.api_key = key;
    if (const char* model = std::getenv("DUET_LLM_MODEL")) cfg.model = model;
    return cfg;
  }
};

/// Bounds in-flight requests to a fixed cap.
class ConcurrencyGate {
 public:
  explicit ConcurrencyGate(int limit) : slots_(limit) {
    require<BadArgument>(limit >= 1, "concurrency cap must be positive");
  }
  void acquire() {
    std::unique_lock<std::mutex> lock(mu_);
    cv_.wait(lock, [&] { return slots_ > 0; });
    --slots_;
  }
  void release() {
    {
      std::lock_guard<std::mutex> lock(mu_);
      ++slots_;
    }
    cv_.notify_one();
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  int slots_;
};

/// POSTs {model, prompt, max_tokens} as JSON and reads back either
/// {"text": ...} or an OpenAI-style {"choices": [{"text": ...}]}.
/// The HTTP transport is injectable so tests can run without sockets.
class HttpLlmClient : public LlmClient {
 public:
  using Transport =
      std::function<std::pair<int, std::string>(const std::string& endpoint,
                                                const std::string& api_key,
                                                const std::string& body)>;

  explicit HttpLlmClient(HttpLlmConfig cfg, Transport transport = {})
      : cfg_(std::move(cfg)),
        transport_(std::move(transport)),
        gate_(cfg_.max_concurrent_requests) {
    require<BackendUnavailable>(!cfg_.endpoint.empty(),
                                "no completion endpoint configured "
                                "(set DUET_LLM_ENDPOINT)");
  }

  std::string complete(const std::string& prompt) override {
    nlohmann::json body = {{"model", cfg_.model},
                           {"prompt", prompt},
                           {"max_tokens", cfg_.max_tokens}};
    gate_.acquire();
    std::pair<int, std::string> reply;
    try {
      reply = post(body.dump());
    } catch (...) {
      gate_.release();
      throw;
    }
    gate_.release();
    require<BackendUnavailable>(reply.first == 200,
                                "completion request failed with status " +
                                    std::to_string(reply.first));
    nlohmann::json j = nlohmann::json::parse(reply.second, nullptr, false);
    require<MalformedResponse>(!j.is_discarded(), "completion reply is not JSON");
    if (j.contains("text") && j.at("text").is_string())
      return j.at("text").get<std::string>();
    if (j.contains("choices") && j.at("choices").is_array() &&
        !j.at("choices").empty() && j.at("choices")[0].contains("text"))
      return j.at("choices")[0].at("text").get<std::string>();
    throw MalformedResponse("completion reply carries no text field");
  }

 private:
  std::pair<int, std::string> post(const std::string& body);

  HttpLlmConfig cfg_;
  Transport transport_;
  ConcurrencyGate gate_;
};

/// Wraps another client and appends every exchange to a fixture file, so
/// live sessions can be replayed offline later.
class RecordingLlmClient : public LlmClient {
 public:
  RecordingLlmClient(std::unique_ptr<LlmClient> inner, std::string fixture_path)
      : inner_(std::move(inner)), path_(std::move(fixture_path)) {}

  std::string complete(const std::string& prompt) override {
    std::string response = inner_->complete(prompt);
    std::lock_guard<std::mutex> lock(mu_);
    append_fixture(path_, {prompt, response, iso8601_now()});
    return response;
  }

 private:
  std::unique_ptr<LlmClient> inner_;
  std::string path_;
  std::mutex mu_;
};

}  // namespace duet

// The default transport lives apart so the heavy HTTP header is only
// parsed where it is needed.
#ifdef DUET_ENABLE_HTTP
#include "httplib.h"
// <resolv.h> (pulled in by the HTTP header) leaks this macro, which
// collides with parameter names in unrelated template code.
#ifdef _res
#undef _res
#endif

namespace duet {

inline std::pair<int, std::string> HttpLlmClient::post(const std::string& body) {
  if (transport_) return transport_(cfg_.endpoint, cfg_.api_key, body);
  auto split = cfg_.endpoint.find('/', cfg_.endpoint.find("//") + 2);
  std::string host = split == std::string::npos ? cfg_.endpoint
                                                : cfg_.endpoint.substr(0, split);
  std::string path = split == std::string::npos ? "/"
                                                : cfg_.endpoint.substr(split);
  httplib::Client client(host);
  httplib::Headers headers;
  if (!cfg_.api_key.empty())
    headers.emplace("Authorization", "Bearer " + cfg_.api_key);
  auto res = client.Post(path, headers, body, "application/json");
  require<BackendUnavailable>(bool(res), "completion endpoint unreachable: " +
                                             cfg_.endpoint);
  return {res->status, res->body};
}

}  // namespace duet
#else
namespace duet {

inline std::pair<int, std::string> HttpLlmClient::post(const std::string& body) {
  require<BackendUnavailable>(bool(transport_),
                              "built without HTTP support; inject a transport "
                              "or use the offline fixture client");
  return transport_(cfg_.endpoint, cfg_.api_key, body);
}

}  // namespace duet
#endif
