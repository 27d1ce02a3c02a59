// Copyright 2026 The adaudit Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef ADAUDIT_LLM_CLIENT_HPP_
#define ADAUDIT_LLM_CLIENT_HPP_

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "adaudit/demographics.hpp"

namespace adaudit {

struct SamplingSettings {
  double temperature = 0.0;
  int max_output_tokens = 1024;
};

struct BackendRequest {
  // Routing key: which prompt family this request belongs to
  // ("feature_extraction", "session_reconstruction", "user_reconstruction",
  // "user_reconstruction_au", "user_reconstruction_shuffled").
  std::string template_id;
  std::string prompt;
  // Paths to creative images; file bytes enter the fingerprint when the
  // file is readable, otherwise the reference string stands in.
  std::vector<std::string> image_refs;
  SamplingSettings settings;
  // Identity hint consumed only by the mock backend's bias table. Not part
  // of the fingerprint, so it never affects caching or the HTTP wire call.
  std::string subject_ref;
};

// Content hash of everything that determines a response: template id,
// prompt text, image bytes, and sampling settings.
std::string request_fingerprint(const BackendRequest& request);

class LlmBackend {
 public:
  virtual ~LlmBackend() = default;
  virtual std::string name() const = 0;
  // Returns the raw model text. Throws TransportError for retryable
  // failures (connect errors, 5xx, timeouts).
  virtual std::string complete(const BackendRequest& request) = 0;
};

// Content-addressed response store: <root>/<hh>/<rest-of-hash>.json.
// Writes go to a temp file then rename, so concurrent writers are safe.
// Unreadable or mismatched entries are moved aside to "<file>.quarantine"
// and treated as misses.
class ResponseCache {
 public:
  explicit ResponseCache(std::string root_dir);

  std::optional<std::string> lookup(const std::string& fingerprint);
  void store(const std::string& fingerprint, const std::string& template_id,
             const std::string& backend_name, const std::string& response);

  const std::string& root() const { return root_; }
  std::size_t quarantined_count() const;

 private:
  std::string entry_path(const std::string& fingerprint) const;

  std::string root_;
  mutable std::mutex mu_;
  std::size_t quarantined_ = 0;
};

struct RetryPolicy {
  int max_attempts = 5;
  int initial_backoff_ms = 100;
  double backoff_multiplier = 2.0;
  int max_backoff_ms = 5000;
};

// Token bucket. requests_per_minute <= 0 disables limiting.
class RateLimiter {
 public:
  explicit RateLimiter(double requests_per_minute);
  void acquire();

 private:
  std::mutex mu_;
  double per_second_;
  double burst_;
  double tokens_;
  std::uint64_t last_ns_;
};

struct BackendResponse {
  std::string text;
  std::string fingerprint;
  bool from_cache = false;
};

struct CallStats {
  std::size_t requests = 0;
  std::size_t cache_hits = 0;
  std::size_t backend_calls = 0;
  std::size_t retries = 0;
};

// Cache-first client: identical requests are served from the cache without
// touching the backend; misses go through the rate limiter and retry loop.
class LlmClient {
 public:
  LlmClient(std::shared_ptr<LlmBackend> backend, std::string cache_dir,
            RetryPolicy retry = {}, double requests_per_minute = 0.0);

  BackendResponse call(const BackendRequest& request);
  CallStats stats() const;
  ResponseCache& cache() { return cache_; }

 private:
  std::shared_ptr<LlmBackend> backend_;
  ResponseCache cache_;
  RetryPolicy retry_;
  RateLimiter limiter_;
  mutable std::mutex stats_mu_;
  CallStats stats_;
};

// JSON-over-HTTP backend. POSTs to <base_url>/v1/complete with a bearer
// key. Base URL and key default to the AD_AUDIT_BACKEND_URL and
// AD_AUDIT_BACKEND_KEY environment variables.
class HttpBackend : public LlmBackend {
 public:
  HttpBackend(std::string base_url = {}, std::string api_key = {},
              int timeout_seconds = 60);
  std::string name() const override { return "http"; }
  std::string complete(const BackendRequest& request) override;

 private:
  std::string base_url_;
  std::string api_key_;
  int timeout_seconds_;
};

// Offline stand-in for the model. Every response is a pure function of
// (seed, request fingerprint), so runs are reproducible and identical
// requests always produce identical text.
struct MockBias {
  enum class Mode {
    kUniform,  // demographic answers drawn uniformly over the scored set
    kTruth,    // answers equal the subject's survey answer w.p. truth_p
  };
  Mode mode = Mode::kUniform;
  double truth_p = 1.0;
};

class MockBackend : public LlmBackend {
 public:
  MockBackend(std::uint64_t seed, MockBias bias,
              std::shared_ptr<const std::map<std::string, DemographicProfile>>
                  subjects,
              std::vector<std::string> taxonomy_entries);

  std::string name() const override { return "mock"; }
  std::string complete(const BackendRequest& request) override;

 private:
  std::uint64_t seed_;
  MockBias bias_;
  std::shared_ptr<const std::map<std::string, DemographicProfile>> subjects_;
  std::vector<std::string> taxonomy_;
};

}  // namespace adaudit

#endif  // ADAUDIT_LLM_CLIENT_HPP_
