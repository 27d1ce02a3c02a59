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

#ifndef ADAUDIT_RECONSTRUCT_HPP_
#define ADAUDIT_RECONSTRUCT_HPP_

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "adaudit/evaluate.hpp"
#include "adaudit/features.hpp"
#include "adaudit/llm_client.hpp"
#include "adaudit/sessionize.hpp"

namespace adaudit {

// Presentation conditions for reconstruction prompts. kShuffled is the
// order-ablation control; kSequentialAu adds country context and a fixed
// party answer set.
enum class Condition { kSequential, kShuffled, kSequentialAu };

std::string_view condition_name(Condition c);
std::optional<Condition> condition_from_name(std::string_view name);

// Plain-text templates with {placeholder} substitution. The repeated
// per-item block starts at the first line containing "{i}" and runs to the
// end of the template, so item lists always close the prompt.
struct PromptTemplates {
  std::string session;
  std::string user_sequential;
  std::string user_au;
  std::string user_shuffled;

  // Loads session_reconstruction.txt, user_reconstruction.txt,
  // user_reconstruction_au.txt, user_reconstruction_shuffled.txt.
  static PromptTemplates load(const std::string& dir);

  const std::string& user_template(Condition c) const;
};

// Seeded permutation of [0, n). Identity for the sequential conditions;
// the shuffle is keyed by (seed, key) so reruns reproduce it exactly.
std::vector<std::size_t> presentation_order(std::size_t n, Condition c,
                                            std::uint64_t seed,
                                            std::string_view key);

// Fills the per-ad block with each impression's extracted features, in the
// given order. Throws SchemaError when an ad lacks features and
// ValidationError when a placeholder survives substitution.
std::string render_session_prompt(
    const Session& session,
    const std::map<std::string, AdFeatures>& features,
    const std::string& template_text,
    const std::vector<std::size_t>& order);

// Fills the per-session block with summaries, in the given order.
std::string render_user_prompt(const std::vector<std::string>& summaries,
                               const std::string& template_text,
                               const std::vector<std::size_t>& order);

struct SessionPrediction {
  std::string session_id;
  std::string user_id;
  std::int64_t start_time = 0;
  Condition condition = Condition::kSequential;
  // Canonical survey literal per attribute, or kAbstainMarker when the
  // model's text mapped to no category after one corrective re-ask.
  std::map<Attribute, std::string> answers;
  std::string summary;
};

struct UserPrediction {
  std::string user_id;
  Condition condition = Condition::kSequential;
  std::map<Attribute, std::string> answers;
  int n_sessions_used = 0;
};

// One reconstruction call over a session's ad features. Unparseable or
// unmappable answers trigger a single corrective re-ask; whatever is still
// unmappable afterwards becomes an abstention.
SessionPrediction predict_session(
    const Session& session, const std::map<std::string, AdFeatures>& features,
    LlmClient& client, const PromptTemplates& templates, Condition condition,
    std::uint64_t seed, const SamplingSettings& settings);

// One reconstruction call over a user's session summaries, presented
// chronologically (or shuffled under the control condition). Requires the
// summaries to belong to the same user.
UserPrediction predict_user(const std::string& user_id,
                            const std::vector<SessionPrediction>& sessions,
                            LlmClient& client,
                            const PromptTemplates& templates,
                            Condition condition, std::uint64_t seed,
                            const SamplingSettings& settings);

// Corpus drivers; parallel across sessions/users when jobs > 1, output
// independent of jobs. Sessions are processed in session-id order, users
// in user-id order.
std::vector<SessionPrediction> predict_sessions(
    const std::vector<Session>& sessions,
    const std::map<std::string, AdFeatures>& features, LlmClient& client,
    const PromptTemplates& templates, Condition condition, std::uint64_t seed,
    const SamplingSettings& settings, int jobs = 1);

std::vector<UserPrediction> predict_users(
    const std::vector<SessionPrediction>& session_predictions,
    LlmClient& client, const PromptTemplates& templates, Condition condition,
    std::uint64_t seed, const SamplingSettings& settings, int jobs = 1);

void write_session_predictions_jsonl(
    const std::string& path, const std::vector<SessionPrediction>& preds);
std::vector<SessionPrediction> read_session_predictions_jsonl(
    const std::string& path);
void write_user_predictions_jsonl(const std::string& path,
                                  const std::vector<UserPrediction>& preds);
std::vector<UserPrediction> read_user_predictions_jsonl(
    const std::string& path);

}  // namespace adaudit

#endif  // ADAUDIT_RECONSTRUCT_HPP_
