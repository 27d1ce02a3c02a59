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

#include "adaudit/reconstruct.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "adaudit/util.hpp"

namespace adaudit {

namespace {

using nlohmann::json;

std::string join(const std::vector<std::string>& items,
                 const char* sep = ", ") {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i > 0) out += sep;
    out += items[i];
  }
  return out;
}

void replace_all(std::string& text, const std::string& needle,
                 const std::string& value) {
  std::size_t pos = 0;
  while ((pos = text.find(needle, pos)) != std::string::npos) {
    text.replace(pos, needle.size(), value);
    pos += value.size();
  }
}

void check_no_placeholders(const std::string& text) {
  for (std::size_t i = 0; i + 1 < text.size(); ++i) {
    if (text[i] != '{') continue;
    std::size_t j = i + 1;
    while (j < text.size() &&
           ((text[j] >= 'a' && text[j] <= 'z') || text[j] == '_' ||
            text[j] == 'i')) {
      ++j;
    }
    if (j > i + 1 && j < text.size() && text[j] == '}') {
      throw ValidationError("unresolved placeholder '" +
                            text.substr(i, j - i + 1) + "' in template");
    }
  }
}

// Splits a template into the leading text and the per-item block. The
// block starts at the first line containing "{i}".
std::pair<std::string, std::string> split_item_block(
    const std::string& template_text) {
  std::size_t pos = 0;
  while (pos < template_text.size()) {
    std::size_t eol = template_text.find('\n', pos);
    if (eol == std::string::npos) eol = template_text.size();
    std::string_view line(template_text.data() + pos, eol - pos);
    if (line.find("{i}") != std::string_view::npos) {
      return {template_text.substr(0, pos), template_text.substr(pos)};
    }
    pos = eol + 1;
  }
  throw ValidationError("template lacks a '{i}' item block");
}

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

 private:
  std::uint64_t state_;
};

// Parses one demographic-assessment response. Returns canonical answers;
// attributes whose text maps to no category are reported in `bad`.
std::map<Attribute, std::string> parse_answers(
    const std::string& raw, std::vector<Attribute>& bad,
    std::string* summary_out) {
  std::map<Attribute, std::string> answers;
  bad.clear();
  json j;
  try {
    j = json::parse(raw);
  } catch (const json::parse_error&) {
    bad.assign(kAllAttributes.begin(), kAllAttributes.end());
    return answers;
  }
  if (!j.is_object()) {
    bad.assign(kAllAttributes.begin(), kAllAttributes.end());
    return answers;
  }
  for (Attribute a : kAllAttributes) {
    std::string key(attribute_key(a));
    if (j.contains(key) && j.at(key).is_string()) {
      auto canonical = normalize_prediction(a, j.at(key).get<std::string>());
      if (canonical) {
        answers[a] = *canonical;
        continue;
      }
    }
    bad.push_back(a);
  }
  if (summary_out != nullptr && j.contains("summary") &&
      j.at("summary").is_string()) {
    *summary_out = collapse_whitespace(j.at("summary").get<std::string>());
  }
  return answers;
}

std::string correction_suffix(const std::vector<Attribute>& bad,
                              bool want_summary) {
  std::string s =
      "\n\nYour previous answer could not be parsed for: ";
  for (std::size_t i = 0; i < bad.size(); ++i) {
    if (i > 0) s += ", ";
    s += std::string(attribute_key(bad[i]));
  }
  s += ". Answer again with exactly one JSON object whose values are the "
       "listed category strings";
  if (want_summary) s += ", including the summary field";
  s += ".";
  return s;
}

// Shared call-validate-reask loop for the demographic templates.
std::map<Attribute, std::string> ask_with_retry(
    LlmClient& client, BackendRequest request, bool want_summary,
    std::string* summary_out) {
  BackendResponse first = client.call(request);
  std::vector<Attribute> bad;
  std::string summary;
  std::map<Attribute, std::string> answers =
      parse_answers(first.text, bad, &summary);

  if (!bad.empty() || (want_summary && summary.empty())) {
    BackendRequest retry = request;
    std::vector<Attribute> ask_again =
        bad.empty() ? std::vector<Attribute>(kAllAttributes.begin(),
                                             kAllAttributes.end())
                    : bad;
    retry.prompt += correction_suffix(ask_again, want_summary);
    BackendResponse second = client.call(retry);
    std::vector<Attribute> bad2;
    std::string summary2;
    std::map<Attribute, std::string> answers2 =
        parse_answers(second.text, bad2, &summary2);
    for (const auto& [a, v] : answers2) answers[a] = v;
    if (summary.empty()) summary = summary2;
  }

  for (Attribute a : kAllAttributes) {
    if (answers.find(a) == answers.end()) {
      answers[a] = std::string(kAbstainMarker);
    }
  }
  if (want_summary && summary.empty()) {
    summary = "No summary was provided for this session.";
  }
  if (summary_out != nullptr) *summary_out = summary;
  return answers;
}

}  // namespace

std::string_view condition_name(Condition c) {
  switch (c) {
    case Condition::kSequential:
      return "sequential";
    case Condition::kShuffled:
      return "shuffled";
    case Condition::kSequentialAu:
      return "sequential_au";
  }
  throw std::invalid_argument("bad condition");
}

std::optional<Condition> condition_from_name(std::string_view name) {
  std::string n = to_lower(trim(name));
  if (n == "sequential") return Condition::kSequential;
  if (n == "shuffled") return Condition::kShuffled;
  if (n == "sequential_au") return Condition::kSequentialAu;
  return std::nullopt;
}

PromptTemplates PromptTemplates::load(const std::string& dir) {
  PromptTemplates t;
  t.session = read_text_file(dir + "/session_reconstruction.txt");
  t.user_sequential = read_text_file(dir + "/user_reconstruction.txt");
  t.user_au = read_text_file(dir + "/user_reconstruction_au.txt");
  t.user_shuffled = read_text_file(dir + "/user_reconstruction_shuffled.txt");
  return t;
}

const std::string& PromptTemplates::user_template(Condition c) const {
  switch (c) {
    case Condition::kSequential:
      return user_sequential;
    case Condition::kShuffled:
      return user_shuffled;
    case Condition::kSequentialAu:
      return user_au;
  }
  throw std::invalid_argument("bad condition");
}

std::vector<std::size_t> presentation_order(std::size_t n, Condition c,
                                            std::uint64_t seed,
                                            std::string_view key) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  if (c != Condition::kShuffled || n < 2) return order;
  DetRng rng(mix_seed(seed, key));
  for (std::size_t i = n - 1; i > 0; --i) {
    std::size_t j = rng.next() % (i + 1);
    std::swap(order[i], order[j]);
  }
  return order;
}

std::string render_session_prompt(
    const Session& session, const std::map<std::string, AdFeatures>& features,
    const std::string& template_text, const std::vector<std::size_t>& order) {
  if (order.size() != session.impressions.size()) {
    throw std::invalid_argument("order must index every impression");
  }
  auto [head, block] = split_item_block(template_text);
  std::string out = head;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const AdImpression& imp = session.impressions[order[k]];
    auto fit = features.find(imp.ad_id);
    if (fit == features.end()) {
      throw SchemaError("no features for ad '" + imp.ad_id + "' in session " +
                        session.session_id);
    }
    const AdFeatures& f = fit->second;
    std::string item = block;
    replace_all(item, "{i}", std::to_string(k + 1));
    replace_all(item, "{caption}", f.caption);
    replace_all(item, "{iab_category_tier_1}", join(f.iab_categories));
    replace_all(item, "{descriptive_category}",
                join(f.descriptive_categories));
    replace_all(item, "{key_entities_in_images_and_slogan}",
                join(f.key_entities));
    out += item;
    if (!item.empty() && item.back() != '\n') out += '\n';
  }
  check_no_placeholders(out);
  return out;
}

std::string render_user_prompt(const std::vector<std::string>& summaries,
                               const std::string& template_text,
                               const std::vector<std::size_t>& order) {
  if (order.size() != summaries.size()) {
    throw std::invalid_argument("order must index every summary");
  }
  auto [head, block] = split_item_block(template_text);
  std::string out = head;
  for (std::size_t k = 0; k < order.size(); ++k) {
    std::string item = block;
    replace_all(item, "{i}", std::to_string(k + 1));
    replace_all(item, "{summary}", summaries[order[k]]);
    out += item;
    if (!item.empty() && item.back() != '\n') out += '\n';
  }
  check_no_placeholders(out);
  return out;
}

SessionPrediction predict_session(
    const Session& session, const std::map<std::string, AdFeatures>& features,
    LlmClient& client, const PromptTemplates& templates, Condition condition,
    std::uint64_t seed, const SamplingSettings& settings) {
  std::vector<std::size_t> order = presentation_order(
      session.impressions.size(), condition, seed, session.session_id);

  BackendRequest req;
  req.template_id = "session_reconstruction";
  req.prompt =
      render_session_prompt(session, features, templates.session, order);
  req.settings = settings;
  req.subject_ref = session.user_id;

  SessionPrediction pred;
  pred.session_id = session.session_id;
  pred.user_id = session.user_id;
  pred.start_time = session.start_time();
  pred.condition = condition;
  pred.answers =
      ask_with_retry(client, std::move(req), /*want_summary=*/true,
                     &pred.summary);
  return pred;
}

UserPrediction predict_user(const std::string& user_id,
                            const std::vector<SessionPrediction>& sessions,
                            LlmClient& client,
                            const PromptTemplates& templates,
                            Condition condition, std::uint64_t seed,
                            const SamplingSettings& settings) {
  if (sessions.empty()) {
    throw std::invalid_argument("user has no session predictions");
  }
  std::vector<const SessionPrediction*> chron;
  chron.reserve(sessions.size());
  for (const SessionPrediction& s : sessions) {
    if (s.user_id != user_id) {
      throw std::invalid_argument("session " + s.session_id +
                                  " belongs to another user");
    }
    chron.push_back(&s);
  }
  std::sort(chron.begin(), chron.end(),
            [](const SessionPrediction* a, const SessionPrediction* b) {
              if (a->start_time != b->start_time) {
                return a->start_time < b->start_time;
              }
              return a->session_id < b->session_id;
            });
  std::vector<std::string> summaries;
  summaries.reserve(chron.size());
  for (const SessionPrediction* s : chron) summaries.push_back(s->summary);

  std::vector<std::size_t> order =
      presentation_order(summaries.size(), condition, seed, user_id);

  std::string template_id;
  switch (condition) {
    case Condition::kSequential:
      template_id = "user_reconstruction";
      break;
    case Condition::kShuffled:
      template_id = "user_reconstruction_shuffled";
      break;
    case Condition::kSequentialAu:
      template_id = "user_reconstruction_au";
      break;
  }

  BackendRequest req;
  req.template_id = template_id;
  req.prompt = render_user_prompt(summaries,
                                  templates.user_template(condition), order);
  req.settings = settings;
  req.subject_ref = user_id;

  UserPrediction pred;
  pred.user_id = user_id;
  pred.condition = condition;
  pred.n_sessions_used = static_cast<int>(summaries.size());
  pred.answers = ask_with_retry(client, std::move(req),
                                /*want_summary=*/false, nullptr);
  return pred;
}

std::vector<SessionPrediction> predict_sessions(
    const std::vector<Session>& sessions,
    const std::map<std::string, AdFeatures>& features, LlmClient& client,
    const PromptTemplates& templates, Condition condition, std::uint64_t seed,
    const SamplingSettings& settings, int jobs) {
  if (jobs < 1) jobs = 1;
  std::vector<const Session*> order;
  order.reserve(sessions.size());
  for (const Session& s : sessions) order.push_back(&s);
  std::sort(order.begin(), order.end(), [](const Session* a, const Session* b) {
    return a->session_id < b->session_id;
  });

  std::vector<SessionPrediction> out(order.size());
  auto run_one = [&](std::size_t i) {
    out[i] = predict_session(*order[i], features, client, templates,
                             condition, seed, settings);
  };

  if (jobs == 1 || order.size() < 2) {
    for (std::size_t i = 0; i < order.size(); ++i) run_one(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mu;
    std::vector<std::thread> pool;
    int n_threads = std::min<int>(jobs, static_cast<int>(order.size()));
    for (int t = 0; t < n_threads; ++t) {
      pool.emplace_back([&] {
        while (true) {
          std::size_t i = next.fetch_add(1);
          if (i >= order.size()) return;
          try {
            run_one(i);
          } catch (...) {
            std::lock_guard<std::mutex> lock(failure_mu);
            if (!failure) failure = std::current_exception();
          }
        }
      });
    }
    for (auto& th : pool) th.join();
    if (failure) std::rethrow_exception(failure);
  }
  return out;
}

std::vector<UserPrediction> predict_users(
    const std::vector<SessionPrediction>& session_predictions,
    LlmClient& client, const PromptTemplates& templates, Condition condition,
    std::uint64_t seed, const SamplingSettings& settings, int jobs) {
  if (jobs < 1) jobs = 1;
  std::map<std::string, std::vector<SessionPrediction>> by_user;
  for (const SessionPrediction& s : session_predictions) {
    by_user[s.user_id].push_back(s);
  }
  std::vector<std::string> users;
  users.reserve(by_user.size());
  for (const auto& [user, preds] : by_user) users.push_back(user);

  std::vector<UserPrediction> out(users.size());
  auto run_one = [&](std::size_t i) {
    out[i] = predict_user(users[i], by_user[users[i]], client, templates,
                          condition, seed, settings);
  };

  if (jobs == 1 || users.size() < 2) {
    for (std::size_t i = 0; i < users.size(); ++i) run_one(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mu;
    std::vector<std::thread> pool;
    int n_threads = std::min<int>(jobs, static_cast<int>(users.size()));
    for (int t = 0; t < n_threads; ++t) {
      pool.emplace_back([&] {
        while (true) {
          std::size_t i = next.fetch_add(1);
          if (i >= users.size()) return;
          try {
            run_one(i);
          } catch (...) {
            std::lock_guard<std::mutex> lock(failure_mu);
            if (!failure) failure = std::current_exception();
          }
        }
      });
    }
    for (auto& th : pool) th.join();
    if (failure) std::rethrow_exception(failure);
  }
  return out;
}

void write_session_predictions_jsonl(
    const std::string& path, const std::vector<SessionPrediction>& preds) {
  std::ostringstream out;
  for (const SessionPrediction& p : preds) {
    json answers;
    for (const auto& [a, v] : p.answers) {
      answers[std::string(attribute_key(a))] = v;
    }
    json j;
    j["session_id"] = p.session_id;
    j["user_id"] = p.user_id;
    j["start"] = p.start_time;
    j["condition"] = std::string(condition_name(p.condition));
    j["answers"] = answers;
    j["summary"] = p.summary;
    out << j.dump() << '\n';
  }
  write_text_file(path, out.str());
}

std::vector<SessionPrediction> read_session_predictions_jsonl(
    const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PipelineError("cannot open file: " + path);
  std::vector<SessionPrediction> out;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    std::string t = trim(line);
    if (t.empty()) continue;
    json j;
    try {
      j = json::parse(t);
    } catch (const json::parse_error& e) {
      throw ParseError(std::string("invalid JSON: ") + e.what(), row);
    }
    SessionPrediction p;
    p.session_id = j.at("session_id").get<std::string>();
    p.user_id = j.at("user_id").get<std::string>();
    p.start_time = j.at("start").get<std::int64_t>();
    auto cond = condition_from_name(j.at("condition").get<std::string>());
    if (!cond) {
      throw SchemaError("row " + std::to_string(row) + ": bad condition");
    }
    p.condition = *cond;
    for (Attribute a : kAllAttributes) {
      p.answers[a] =
          j.at("answers").at(std::string(attribute_key(a))).get<std::string>();
    }
    p.summary = j.value("summary", std::string());
    out.push_back(std::move(p));
  }
  return out;
}

void write_user_predictions_jsonl(const std::string& path,
                                  const std::vector<UserPrediction>& preds) {
  std::ostringstream out;
  for (const UserPrediction& p : preds) {
    json answers;
    for (const auto& [a, v] : p.answers) {
      answers[std::string(attribute_key(a))] = v;
    }
    json j;
    j["user_id"] = p.user_id;
    j["condition"] = std::string(condition_name(p.condition));
    j["answers"] = answers;
    j["n_sessions_used"] = p.n_sessions_used;
    out << j.dump() << '\n';
  }
  write_text_file(path, out.str());
}

std::vector<UserPrediction> read_user_predictions_jsonl(
    const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PipelineError("cannot open file: " + path);
  std::vector<UserPrediction> out;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    std::string t = trim(line);
    if (t.empty()) continue;
    json j;
    try {
      j = json::parse(t);
    } catch (const json::parse_error& e) {
      throw ParseError(std::string("invalid JSON: ") + e.what(), row);
    }
    UserPrediction p;
    p.user_id = j.at("user_id").get<std::string>();
    auto cond = condition_from_name(j.at("condition").get<std::string>());
    if (!cond) {
      throw SchemaError("row " + std::to_string(row) + ": bad condition");
    }
    p.condition = *cond;
    for (Attribute a : kAllAttributes) {
      p.answers[a] =
          j.at("answers").at(std::string(attribute_key(a))).get<std::string>();
    }
    p.n_sessions_used = j.value("n_sessions_used", 0);
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace adaudit
