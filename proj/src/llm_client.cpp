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

#include "adaudit/llm_client.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string_view>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "adaudit/util.hpp"

namespace adaudit {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

std::optional<std::string> read_file_if_exists(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string env_or(const char* name, std::string fallback) {
  const char* v = std::getenv(name);
  return v != nullptr && *v != '\0' ? std::string(v) : std::move(fallback);
}

// Deterministic uniform stream (splitmix64 core).
class DetRng {
 public:
  explicit DetRng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    state_ += 0x9E3779B97F4A7C15ull;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  double uniform() {
    return static_cast<double>(next() >> 11) * 0x1.0p-53;
  }

  std::size_t pick(std::size_t n) { return n == 0 ? 0 : next() % n; }

 private:
  std::uint64_t state_;
};

const std::vector<std::string>& caption_bank() {
  static const std::vector<std::string> kBank = {
      "A storefront banner promoting seasonal discounts",
      "A smiling family unpacking boxes in a bright living room",
      "A close-up of a product held against a plain background",
      "A woman standing next to a home battery unit",
      "A crowd cheering at a stadium under floodlights",
      "A delivery rider cycling through a city street at dusk",
      "A laptop on a desk with a sign-up form on screen",
      "A plate of fresh food photographed from above",
      "A row of houses with an auction sign out front",
      "A person comparing plans on a phone screen",
      "A gym interior with equipment and a membership offer",
      "A politician speaking at a podium with supporters behind",
  };
  return kBank;
}

const std::vector<std::string>& descriptive_bank() {
  static const std::vector<std::string> kBank = {
      "discount promotion", "brand awareness",      "event announcement",
      "app install",        "political fundraising", "charity appeal",
      "product launch",     "subscription offer",    "store opening",
      "limited-time sale",
  };
  return kBank;
}

const std::vector<std::string>& entity_bank() {
  static const std::vector<std::string> kBank = {
      "Coles",      "Woolworths", "Qantas",        "Telstra",
      "Bunnings",   "Sportsbet",  "TAB",           "Medibank",
      "ANZ",        "Tesla Powerwall", "Ray-Ban",  "The Iconic",
      "50% OFF",    "JOIN NOW",   "FINAL DAYS",    "VOTE",
  };
  return kBank;
}

}  // namespace

std::string request_fingerprint(const BackendRequest& request) {
  json j;
  j["template_id"] = request.template_id;
  j["prompt"] = request.prompt;
  json images = json::array();
  for (const std::string& ref : request.image_refs) {
    if (auto bytes = read_file_if_exists(ref)) {
      images.push_back(sha256_hex(*bytes));
    } else {
      images.push_back(ref);
    }
  }
  j["images"] = images;
  j["temperature"] = format_fixed(request.settings.temperature, 6);
  j["max_output_tokens"] = request.settings.max_output_tokens;
  return sha256_hex(j.dump());
}

ResponseCache::ResponseCache(std::string root_dir)
    : root_(std::move(root_dir)) {
  fs::create_directories(root_);
}

std::string ResponseCache::entry_path(const std::string& fingerprint) const {
  return root_ + "/" + fingerprint.substr(0, 2) + "/" +
         fingerprint.substr(2) + ".json";
}

std::optional<std::string> ResponseCache::lookup(
    const std::string& fingerprint) {
  std::lock_guard<std::mutex> lock(mu_);
  std::string path = entry_path(fingerprint);
  auto raw = read_file_if_exists(path);
  if (!raw) return std::nullopt;
  try {
    json j = json::parse(*raw);
    if (j.at("fingerprint").get<std::string>() == fingerprint) {
      return j.at("response").get<std::string>();
    }
  } catch (const json::exception&) {
    // fall through to quarantine
  }
  std::error_code ec;
  fs::rename(path, path + ".quarantine", ec);
  if (ec) fs::remove(path, ec);
  ++quarantined_;
  return std::nullopt;
}

void ResponseCache::store(const std::string& fingerprint,
                          const std::string& template_id,
                          const std::string& backend_name,
                          const std::string& response) {
  static std::atomic<std::uint64_t> counter{0};
  json j;
  j["fingerprint"] = fingerprint;
  j["template_id"] = template_id;
  j["backend"] = backend_name;
  j["response"] = response;
  std::string payload = j.dump(2);

  std::lock_guard<std::mutex> lock(mu_);
  std::string path = entry_path(fingerprint);
  fs::create_directories(fs::path(path).parent_path());
  std::string tmp =
      path + ".tmp" + std::to_string(counter.fetch_add(1) + 1);
  write_text_file(tmp, payload);
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw PipelineError("cache write failed: " + path);
  }
}

std::size_t ResponseCache::quarantined_count() const {
  std::lock_guard<std::mutex> lock(mu_);
  return quarantined_;
}

RateLimiter::RateLimiter(double requests_per_minute)
    : per_second_(requests_per_minute / 60.0),
      burst_(std::max(1.0, per_second_)),
      tokens_(burst_),
      last_ns_(0) {}

void RateLimiter::acquire() {
  if (per_second_ <= 0.0) return;
  using Clock = std::chrono::steady_clock;
  while (true) {
    std::unique_lock<std::mutex> lock(mu_);
    std::uint64_t now = static_cast<std::uint64_t>(
        std::chrono::duration_cast<std::chrono::nanoseconds>(
            Clock::now().time_since_epoch())
            .count());
    if (last_ns_ == 0) last_ns_ = now;
    double elapsed = static_cast<double>(now - last_ns_) * 1e-9;
    tokens_ = std::min(burst_, tokens_ + elapsed * per_second_);
    last_ns_ = now;
    if (tokens_ >= 1.0) {
      tokens_ -= 1.0;
      return;
    }
    double wait_s = (1.0 - tokens_) / per_second_;
    lock.unlock();
    std::this_thread::sleep_for(std::chrono::duration<double>(wait_s));
  }
}

LlmClient::LlmClient(std::shared_ptr<LlmBackend> backend,
                     std::string cache_dir, RetryPolicy retry,
                     double requests_per_minute)
    : backend_(std::move(backend)),
      cache_(std::move(cache_dir)),
      retry_(retry),
      limiter_(requests_per_minute) {}

BackendResponse LlmClient::call(const BackendRequest& request) {
  BackendResponse resp;
  resp.fingerprint = request_fingerprint(request);
  {
    std::lock_guard<std::mutex> lock(stats_mu_);
    ++stats_.requests;
  }
  if (auto cached = cache_.lookup(resp.fingerprint)) {
    std::lock_guard<std::mutex> lock(stats_mu_);
    ++stats_.cache_hits;
    resp.text = *cached;
    resp.from_cache = true;
    return resp;
  }

  int backoff_ms = retry_.initial_backoff_ms;
  for (int attempt = 1;; ++attempt) {
    try {
      {
        std::lock_guard<std::mutex> lock(stats_mu_);
        ++stats_.backend_calls;
      }
      limiter_.acquire();
      resp.text = backend_->complete(request);
      break;
    } catch (const TransportError&) {
      if (attempt >= retry_.max_attempts) throw;
      {
        std::lock_guard<std::mutex> lock(stats_mu_);
        ++stats_.retries;
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(backoff_ms));
      backoff_ms = std::min(
          retry_.max_backoff_ms,
          static_cast<int>(backoff_ms * retry_.backoff_multiplier));
    }
  }
  cache_.store(resp.fingerprint, request.template_id, backend_->name(),
               resp.text);
  return resp;
}

CallStats LlmClient::stats() const {
  std::lock_guard<std::mutex> lock(stats_mu_);
  return stats_;
}

HttpBackend::HttpBackend(std::string base_url, std::string api_key,
                         int timeout_seconds)
    : base_url_(base_url.empty() ? env_or("AD_AUDIT_BACKEND_URL", "")
                                 : std::move(base_url)),
      api_key_(api_key.empty() ? env_or("AD_AUDIT_BACKEND_KEY", "")
                               : std::move(api_key)),
      timeout_seconds_(timeout_seconds) {
  if (base_url_.empty()) {
    throw PipelineError(
        "no backend URL configured; set AD_AUDIT_BACKEND_URL or pass "
        "--mock-backend");
  }
}

std::string HttpBackend::complete(const BackendRequest& request) {
  httplib::Client client(base_url_);
  client.set_connection_timeout(timeout_seconds_, 0);
  client.set_read_timeout(timeout_seconds_, 0);

  json body;
  body["template_id"] = request.template_id;
  body["prompt"] = request.prompt;
  body["image_refs"] = request.image_refs;
  body["temperature"] = request.settings.temperature;
  body["max_output_tokens"] = request.settings.max_output_tokens;

  httplib::Headers headers;
  if (!api_key_.empty()) {
    headers.emplace("Authorization", "Bearer " + api_key_);
  }
  auto res = client.Post("/v1/complete", headers, body.dump(),
                         "application/json");
  if (!res) {
    throw TransportError("backend unreachable: " +
                         httplib::to_string(res.error()));
  }
  if (res->status >= 500) {
    throw TransportError("backend error " + std::to_string(res->status));
  }
  if (res->status != 200) {
    throw ValidationError("backend rejected request, status " +
                          std::to_string(res->status) + ": " + res->body);
  }
  try {
    json j = json::parse(res->body);
    return j.at("text").get<std::string>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed backend response: ") +
                          e.what());
  }
}

MockBackend::MockBackend(
    std::uint64_t seed, MockBias bias,
    std::shared_ptr<const std::map<std::string, DemographicProfile>> subjects,
    std::vector<std::string> taxonomy_entries)
    : seed_(seed),
      bias_(bias),
      subjects_(std::move(subjects)),
      taxonomy_(std::move(taxonomy_entries)) {}

std::string MockBackend::complete(const BackendRequest& request) {
  const std::string fp = request_fingerprint(request);
  const std::uint64_t base = mix_seed(seed_, fp);

  if (request.template_id == "feature_extraction") {
    DetRng rng(base);
    json j;
    j["caption"] = caption_bank()[rng.pick(caption_bank().size())];
    json desc = json::array();
    desc.push_back(descriptive_bank()[rng.pick(descriptive_bank().size())]);
    if (rng.uniform() < 0.3) {
      desc.push_back(descriptive_bank()[rng.pick(descriptive_bank().size())]);
    }
    j["descriptive_category"] = desc;
    json iab = json::array();
    // Honor obviously themed creative text before falling back to a hash
    // pick, so category rates on mock runs reflect ad content instead of
    // fingerprint noise.
    struct ContentHint {
      std::string_view token;
      std::string_view category;
    };
    static constexpr ContentHint kContentHints[] = {
        {"pokies", "Gambling"},
        {"jackpot", "Gambling"},
        {"casino", "Gambling"},
        {"betting", "Gambling"},
        {"vote", "Politics"},
        {"election", "Politics"},
        {"senate", "Politics"},
        {"authorised by", "Politics"},
        {"beer", "Alcohol"},
        {"shiraz", "Alcohol"},
        {"whisky", "Alcohol"},
        {"brewery", "Alcohol"},
        {"university", "Education and Careers"},
        {"tafe", "Education and Careers"},
        {"diploma", "Education and Careers"},
        {"enrol", "Education and Careers"},
    };
    const std::string lowered = to_lower(request.prompt);
    std::string hinted;
    for (const ContentHint& hint : kContentHints) {
      if (lowered.find(hint.token) == std::string::npos) continue;
      bool known = std::any_of(
          taxonomy_.begin(), taxonomy_.end(), [&](const std::string& e) {
            return std::string_view(e) == hint.category;
          });
      if (!known) continue;
      hinted = std::string(hint.category);
      break;
    }
    iab.push_back(hinted.empty() ? taxonomy_[rng.pick(taxonomy_.size())]
                                 : hinted);
    if (rng.uniform() < 0.25) {
      iab.push_back(taxonomy_[rng.pick(taxonomy_.size())]);
    }
    j["iab_category_tier_1"] = iab;
    json ents = json::array();
    std::size_t n_ents = 1 + rng.pick(3);
    for (std::size_t i = 0; i < n_ents; ++i) {
      ents.push_back(entity_bank()[rng.pick(entity_bank().size())]);
    }
    j["key_entities_in_images_and_slogan"] = ents;
    return j.dump();
  }

  // Demographic assessment templates. Each attribute gets an independent
  // deterministic draw; in truth mode the subject's survey answer is
  // returned with probability truth_p when it is a scoreable category.
  json j;
  const DemographicProfile* subject = nullptr;
  if (subjects_) {
    auto it = subjects_->find(request.subject_ref);
    if (it != subjects_->end()) subject = &it->second;
  }
  for (Attribute a : kAllAttributes) {
    DetRng rng(mix_seed(base, attribute_key(a)));
    const auto& eval = evaluation_levels(a);
    std::string answer;
    if (bias_.mode == MockBias::Mode::kTruth && subject != nullptr &&
        rng.uniform() < bias_.truth_p) {
      const std::string& truth = subject->level(a);
      bool scoreable =
          std::find(eval.begin(), eval.end(), truth) != eval.end();
      answer = scoreable ? truth : eval[rng.pick(eval.size())];
    } else {
      answer = eval[rng.pick(eval.size())];
    }
    j[std::string(attribute_key(a))] = answer;
  }
  if (request.template_id == "session_reconstruction") {
    DetRng rng(mix_seed(base, "summary"));
    const std::string& t1 = taxonomy_[rng.pick(taxonomy_.size())];
    const std::string& t2 = taxonomy_[rng.pick(taxonomy_.size())];
    j["summary"] =
        "In this session the user saw sponsored posts mostly about " + t1 +
        " and " + t2 +
        ", with creatives suggesting routine consumer browsing.";
  }
  return j.dump();
}

}  // namespace adaudit
