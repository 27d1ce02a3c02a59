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
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "adaudit/util.hpp"
#include "doctest.h"
#include "support/synthetic.hpp"

using namespace adaudit;
using adaudit::testing::TempDir;
using adaudit::testing::make_impression;
using adaudit::testing::make_profile;

namespace {

// Replays canned responses and records the prompts it was asked.
class ScriptedBackend : public LlmBackend {
 public:
  explicit ScriptedBackend(std::vector<std::string> replies)
      : replies_(std::move(replies)) {}

  std::string name() const override { return "scripted"; }
  std::string complete(const BackendRequest& request) override {
    prompts.push_back(request.prompt);
    template_ids.push_back(request.template_id);
    subject_refs.push_back(request.subject_ref);
    return replies_.at(prompts.size() - 1);
  }

  std::vector<std::string> prompts;
  std::vector<std::string> template_ids;
  std::vector<std::string> subject_refs;

 private:
  std::vector<std::string> replies_;
};

LlmClient scripted_client(std::shared_ptr<ScriptedBackend> backend,
                          const TempDir& dir) {
  return LlmClient(backend, dir.file("cache"));
}

std::shared_ptr<LlmBackend> truth_mock(std::uint64_t seed) {
  auto subjects =
      std::make_shared<std::map<std::string, DemographicProfile>>();
  (*subjects)["u01"] = make_profile("u01");
  (*subjects)["u02"] = make_profile("u02", "Male", "55-64");
  MockBias bias;
  bias.mode = MockBias::Mode::kTruth;
  bias.truth_p = 1.0;
  return std::make_shared<MockBackend>(seed, bias, subjects,
                                       std::vector<std::string>{"Retail"});
}

Session two_ad_session(const std::string& session_id = "u01-s0001",
                       const std::string& user_id = "u01",
                       std::int64_t start = 1000) {
  Session s;
  s.session_id = session_id;
  s.user_id = user_id;
  s.impressions = {make_impression(user_id, start, "adA"),
                   make_impression(user_id, start + 30, "adB"),
                   make_impression(user_id, start + 55, "adA")};
  return s;
}

std::map<std::string, AdFeatures> two_ad_features() {
  std::map<std::string, AdFeatures> f;
  f["adA"] = {"adA",
              "Sneaker sale banner",
              {"Bold", "Urgent"},
              {"Retail"},
              {"FastKicks"}};
  f["adB"] = {"adB",
              "Island getaway promo",
              {"Serene"},
              {"Travel", "Retail"},
              {"LagoonAir", "Beach"}};
  return f;
}

const char* kSessionTemplate =
    "Infer the user.\n"
    "Ads shown:\n"
    "{i}. Caption: \"{caption}\"\n"
    "    Category: {iab_category_tier_1}\n"
    "    Style: {descriptive_category}\n"
    "    Key Entities: {key_entities_in_images_and_slogan}\n";

const char* kUserTemplate =
    "Combine the sessions.\n"
    "Session {i} Summary: {summary}\n";

std::string full_answer_json(const std::string& summary) {
  return std::string(
             "{\"gender\":\"Male\",\"age\":\"35-44\","
             "\"income\":\"$52,000-$64,999\","
             "\"education\":\"Bachelor degree level\","
             "\"employment\":\"Employed full time\",\"party\":\"Labor\"") +
         (summary.empty() ? "}" : ",\"summary\":\"" + summary + "\"}");
}

}  // namespace

TEST_CASE("condition names round trip") {
  CHECK(condition_name(Condition::kSequential) == "sequential");
  CHECK(condition_name(Condition::kShuffled) == "shuffled");
  CHECK(condition_name(Condition::kSequentialAu) == "sequential_au");
  for (Condition c : {Condition::kSequential, Condition::kShuffled,
                      Condition::kSequentialAu}) {
    CHECK(condition_from_name(condition_name(c)) == c);
  }
  CHECK(condition_from_name("  Shuffled \n") == Condition::kShuffled);
  CHECK_FALSE(condition_from_name("random").has_value());
  CHECK_FALSE(condition_from_name("").has_value());
}

TEST_CASE("shipped prompt templates load and route by condition") {
  PromptTemplates t = PromptTemplates::load(std::string(ADAUDIT_DATA_DIR) +
                                            "/prompts");
  CHECK(t.session.find("{caption}") != std::string::npos);
  CHECK(t.session.find("{i}. Caption") != std::string::npos);
  CHECK(t.user_sequential.find("Session {i} Summary:") != std::string::npos);
  CHECK(t.user_au.find("Australian") != std::string::npos);
  CHECK(t.user_shuffled.find("random order") != std::string::npos);
  CHECK(&t.user_template(Condition::kSequential) == &t.user_sequential);
  CHECK(&t.user_template(Condition::kShuffled) == &t.user_shuffled);
  CHECK(&t.user_template(Condition::kSequentialAu) == &t.user_au);
}

TEST_CASE("presentation order is identity unless shuffled") {
  std::vector<std::size_t> identity = {0, 1, 2, 3, 4};
  CHECK(presentation_order(5, Condition::kSequential, 7, "k") == identity);
  CHECK(presentation_order(5, Condition::kSequentialAu, 7, "k") == identity);
  CHECK(presentation_order(1, Condition::kShuffled, 7, "k") ==
        std::vector<std::size_t>{0});
  CHECK(presentation_order(0, Condition::kShuffled, 7, "k").empty());

  SUBCASE("the shuffle is a seeded permutation") {
    auto order = presentation_order(20, Condition::kShuffled, 123, "user42");
    auto again = presentation_order(20, Condition::kShuffled, 123, "user42");
    CHECK(order == again);

    std::vector<std::size_t> sorted = order;
    std::sort(sorted.begin(), sorted.end());
    std::vector<std::size_t> expected(20);
    for (std::size_t i = 0; i < 20; ++i) expected[i] = i;
    CHECK(sorted == expected);
    CHECK(order != expected);  // 20 items virtually never shuffle to identity

    auto other_key = presentation_order(20, Condition::kShuffled, 123, "u2");
    auto other_seed =
        presentation_order(20, Condition::kShuffled, 124, "user42");
    CHECK(order != other_key);
    CHECK(order != other_seed);
  }
}

TEST_CASE("session prompts render items in the given order") {
  Session s = two_ad_session();
  auto features = two_ad_features();

  std::string prompt =
      render_session_prompt(s, features, kSessionTemplate, {0, 1, 2});
  CHECK(prompt ==
        "Infer the user.\n"
        "Ads shown:\n"
        "1. Caption: \"Sneaker sale banner\"\n"
        "    Category: Retail\n"
        "    Style: Bold, Urgent\n"
        "    Key Entities: FastKicks\n"
        "2. Caption: \"Island getaway promo\"\n"
        "    Category: Travel, Retail\n"
        "    Style: Serene\n"
        "    Key Entities: LagoonAir, Beach\n"
        "3. Caption: \"Sneaker sale banner\"\n"
        "    Category: Retail\n"
        "    Style: Bold, Urgent\n"
        "    Key Entities: FastKicks\n");

  SUBCASE("reordering permutes content but keeps 1-based numbering") {
    std::string swapped =
        render_session_prompt(s, features, kSessionTemplate, {1, 0, 2});
    CHECK(swapped.find("1. Caption: \"Island getaway promo\"") !=
          std::string::npos);
    CHECK(swapped.find("2. Caption: \"Sneaker sale banner\"") !=
          std::string::npos);
  }

  SUBCASE("defects are loud") {
    CHECK_THROWS_AS(render_session_prompt(s, features, kSessionTemplate, {0}),
                    std::invalid_argument);
    auto missing = features;
    missing.erase("adB");
    CHECK_THROWS_WITH_AS(
        render_session_prompt(s, missing, kSessionTemplate, {0, 1, 2}),
        doctest::Contains("no features for ad 'adB'"), SchemaError);
    CHECK_THROWS_AS(
        render_session_prompt(s, features, "no item block here\n", {0, 1, 2}),
        ValidationError);
    CHECK_THROWS_WITH_AS(
        render_session_prompt(
            s, features, "Head\n{i}. {caption} {mood_of_user}\n", {0, 1, 2}),
        doctest::Contains("unresolved placeholder '{mood_of_user}'"),
        ValidationError);
  }
}

TEST_CASE("user prompts list summaries under the permutation") {
  std::vector<std::string> summaries = {"First.", "Second.", "Third."};
  CHECK(render_user_prompt(summaries, kUserTemplate, {0, 1, 2}) ==
        "Combine the sessions.\n"
        "Session 1 Summary: First.\n"
        "Session 2 Summary: Second.\n"
        "Session 3 Summary: Third.\n");
  CHECK(render_user_prompt(summaries, kUserTemplate, {2, 0, 1}) ==
        "Combine the sessions.\n"
        "Session 1 Summary: Third.\n"
        "Session 2 Summary: First.\n"
        "Session 3 Summary: Second.\n");
  CHECK_THROWS_AS(render_user_prompt(summaries, kUserTemplate, {0, 1}),
                  std::invalid_argument);
}

TEST_CASE("session prediction returns canonical answers and a summary") {
  TempDir dir("reconstruct");
  LlmClient client(truth_mock(99), dir.file("cache"));
  PromptTemplates templates = PromptTemplates::load(
      std::string(ADAUDIT_DATA_DIR) + "/prompts");
  Session s = two_ad_session();
  auto features = two_ad_features();

  SessionPrediction pred =
      predict_session(s, features, client, templates, Condition::kSequential,
                      7, SamplingSettings{});
  CHECK(pred.session_id == "u01-s0001");
  CHECK(pred.user_id == "u01");
  CHECK(pred.start_time == 1000);
  CHECK(pred.condition == Condition::kSequential);
  CHECK(pred.summary.find("sponsored posts") != std::string::npos);

  // The mock's truth bias reproduces the subject's survey answers.
  DemographicProfile truth = make_profile("u01");
  for (Attribute a : kAllAttributes) {
    CHECK(pred.answers.at(a) == truth.level(a));
  }

  SUBCASE("a repeat of the same session is answered from the cache") {
    CallStats before = client.stats();
    SessionPrediction again =
        predict_session(s, features, client, templates,
                        Condition::kSequential, 7, SamplingSettings{});
    CallStats after = client.stats();
    CHECK(again.answers == pred.answers);
    CHECK(again.summary == pred.summary);
    CHECK(after.backend_calls == before.backend_calls);
    CHECK(after.cache_hits == before.cache_hits + before.requests);
  }
}

TEST_CASE("unparseable replies abstain after one corrective re-ask") {
  TempDir dir("reconstruct");
  PromptTemplates templates;
  templates.session = kSessionTemplate;
  Session s = two_ad_session();
  auto features = two_ad_features();

  SUBCASE("garbage twice abstains on every attribute") {
    auto backend = std::make_shared<ScriptedBackend>(
        std::vector<std::string>{"not json", "still not json"});
    LlmClient client = scripted_client(backend, dir);
    SessionPrediction pred =
        predict_session(s, features, client, templates,
                        Condition::kSequential, 7, SamplingSettings{});
    REQUIRE(backend->prompts.size() == 2);
    CHECK(backend->prompts[1].find("could not be parsed for: gender, age, "
                                   "income, education, employment, party") !=
          std::string::npos);
    CHECK(backend->prompts[1].find("including the summary field") !=
          std::string::npos);
    CHECK(backend->subject_refs[0] == "u01");
    CHECK(backend->template_ids[0] == "session_reconstruction");
    for (Attribute a : kAllAttributes) {
      CHECK(pred.answers.at(a) == std::string(kAbstainMarker));
    }
    CHECK(pred.summary == "No summary was provided for this session.");
  }

  SUBCASE("parsed attributes survive a partially bad first reply") {
    auto backend = std::make_shared<ScriptedBackend>(std::vector<std::string>{
        "{\"gender\":\"male\",\"summary\":\"Two retail ads.\"}",
        "not json either"});
    LlmClient client = scripted_client(backend, dir);
    SessionPrediction pred =
        predict_session(s, features, client, templates,
                        Condition::kSequential, 7, SamplingSettings{});
    REQUIRE(backend->prompts.size() == 2);
    // Loose matching canonicalizes "male"; gender is not re-asked.
    CHECK(backend->prompts[1].find("could not be parsed for: age, income, "
                                   "education, employment, party") !=
          std::string::npos);
    CHECK(pred.answers.at(Attribute::kGender) == "Male");
    CHECK(pred.answers.at(Attribute::kAge) == std::string(kAbstainMarker));
    CHECK(pred.summary == "Two retail ads.");
  }

  SUBCASE("a missing summary alone triggers the re-ask") {
    auto backend = std::make_shared<ScriptedBackend>(std::vector<std::string>{
        full_answer_json(""), "{\"summary\":\"A fine session.\"}"});
    LlmClient client = scripted_client(backend, dir);
    SessionPrediction pred =
        predict_session(s, features, client, templates,
                        Condition::kSequential, 7, SamplingSettings{});
    REQUIRE(backend->prompts.size() == 2);
    CHECK(pred.answers.at(Attribute::kGender) == "Male");
    CHECK(pred.answers.at(Attribute::kParty) == "Labor");
    CHECK(pred.summary == "A fine session.");
  }
}

TEST_CASE("user prediction presents summaries chronologically") {
  TempDir dir("reconstruct");
  PromptTemplates templates = PromptTemplates::load(
      std::string(ADAUDIT_DATA_DIR) + "/prompts");

  SessionPrediction late;
  late.session_id = "u01-s0002";
  late.user_id = "u01";
  late.start_time = 5000;
  late.summary = "Late session about travel.";
  SessionPrediction early;
  early.session_id = "u01-s0001";
  early.user_id = "u01";
  early.start_time = 1000;
  early.summary = "Early session about retail.";

  auto backend = std::make_shared<ScriptedBackend>(
      std::vector<std::string>{full_answer_json("")});
  LlmClient client = scripted_client(backend, dir);
  UserPrediction pred =
      predict_user("u01", {late, early}, client, templates,
                   Condition::kSequential, 7, SamplingSettings{});
  CHECK(pred.user_id == "u01");
  CHECK(pred.n_sessions_used == 2);
  CHECK(pred.answers.at(Attribute::kAge) == "35-44");
  REQUIRE(backend->prompts.size() == 1);
  CHECK(backend->template_ids[0] == "user_reconstruction");
  CHECK(backend->subject_refs[0] == "u01");
  const std::string& prompt = backend->prompts[0];
  std::size_t first = prompt.find("Session 1 Summary: Early session");
  std::size_t second = prompt.find("Session 2 Summary: Late session");
  CHECK(first != std::string::npos);
  CHECK(second != std::string::npos);
  CHECK(first < second);

  SUBCASE("the country-context condition routes to its template") {
    auto au_backend = std::make_shared<ScriptedBackend>(
        std::vector<std::string>{full_answer_json("")});
    LlmClient au_client(au_backend, dir.file("cache_au"));
    predict_user("u01", {late, early}, au_client, templates,
                 Condition::kSequentialAu, 7, SamplingSettings{});
    REQUIRE(au_backend->prompts.size() == 1);
    CHECK(au_backend->template_ids[0] == "user_reconstruction_au");
    CHECK(au_backend->prompts[0].find("Australian") != std::string::npos);
  }

  SUBCASE("foreign or empty session lists are rejected") {
    SessionPrediction stranger = early;
    stranger.user_id = "u02";
    auto b2 = std::make_shared<ScriptedBackend>(std::vector<std::string>{});
    LlmClient c2(b2, dir.file("cache2"));
    CHECK_THROWS_AS(predict_user("u01", {stranger}, c2, templates,
                                 Condition::kSequential, 7,
                                 SamplingSettings{}),
                    std::invalid_argument);
    CHECK_THROWS_AS(predict_user("u01", {}, c2, templates,
                                 Condition::kSequential, 7,
                                 SamplingSettings{}),
                    std::invalid_argument);
  }
}

TEST_CASE("corpus drivers are ordered and independent of jobs") {
  TempDir dir("reconstruct");
  PromptTemplates templates = PromptTemplates::load(
      std::string(ADAUDIT_DATA_DIR) + "/prompts");
  auto features = two_ad_features();
  std::vector<Session> sessions = {
      two_ad_session("u01-s0002", "u01", 9000),
      two_ad_session("u02-s0001", "u02", 4000),
      two_ad_session("u01-s0001", "u01", 1000),
  };

  LlmClient serial(truth_mock(5), dir.file("cache_serial"));
  auto preds = predict_sessions(sessions, features, serial, templates,
                                Condition::kSequential, 7, SamplingSettings{},
                                1);
  REQUIRE(preds.size() == 3);
  CHECK(preds[0].session_id == "u01-s0001");
  CHECK(preds[1].session_id == "u01-s0002");
  CHECK(preds[2].session_id == "u02-s0001");

  LlmClient parallel(truth_mock(5), dir.file("cache_parallel"));
  auto preds4 = predict_sessions(sessions, features, parallel, templates,
                                 Condition::kSequential, 7, SamplingSettings{},
                                 4);
  write_session_predictions_jsonl(dir.file("serial.jsonl"), preds);
  write_session_predictions_jsonl(dir.file("parallel.jsonl"), preds4);
  CHECK(read_text_file(dir.file("serial.jsonl")) ==
        read_text_file(dir.file("parallel.jsonl")));

  SUBCASE("user-level predictions group by user in id order") {
    LlmClient users_client(truth_mock(5), dir.file("cache_users"));
    auto users = predict_users(preds, users_client, templates,
                               Condition::kSequential, 7, SamplingSettings{},
                               1);
    REQUIRE(users.size() == 2);
    CHECK(users[0].user_id == "u01");
    CHECK(users[0].n_sessions_used == 2);
    CHECK(users[1].user_id == "u02");
    CHECK(users[1].n_sessions_used == 1);
    CHECK(users[0].answers.at(Attribute::kGender) == "Female");
    CHECK(users[1].answers.at(Attribute::kGender) == "Male");

    LlmClient users4_client(truth_mock(5), dir.file("cache_users4"));
    auto users4 = predict_users(preds, users4_client, templates,
                                Condition::kSequential, 7, SamplingSettings{},
                                4);
    write_user_predictions_jsonl(dir.file("users1.jsonl"), users);
    write_user_predictions_jsonl(dir.file("users4.jsonl"), users4);
    CHECK(read_text_file(dir.file("users1.jsonl")) ==
          read_text_file(dir.file("users4.jsonl")));
  }
}

TEST_CASE("prediction files round trip") {
  TempDir dir("reconstruct");
  SessionPrediction p;
  p.session_id = "u01-s0001";
  p.user_id = "u01";
  p.start_time = 1234;
  p.condition = Condition::kShuffled;
  for (Attribute a : kAllAttributes) p.answers[a] = std::string(kAbstainMarker);
  p.answers[Attribute::kGender] = "Female";
  p.summary = "Three ads about homewares.";

  write_session_predictions_jsonl(dir.file("sessions.jsonl"), {p});
  auto back = read_session_predictions_jsonl(dir.file("sessions.jsonl"));
  REQUIRE(back.size() == 1);
  CHECK(back[0].session_id == p.session_id);
  CHECK(back[0].user_id == p.user_id);
  CHECK(back[0].start_time == p.start_time);
  CHECK(back[0].condition == p.condition);
  CHECK(back[0].answers == p.answers);
  CHECK(back[0].summary == p.summary);

  UserPrediction u;
  u.user_id = "u01";
  u.condition = Condition::kSequentialAu;
  for (Attribute a : kAllAttributes) u.answers[a] = "ABSTAIN";
  u.answers[Attribute::kParty] = "Greens";
  u.n_sessions_used = 4;
  write_user_predictions_jsonl(dir.file("users.jsonl"), {u});
  auto users = read_user_predictions_jsonl(dir.file("users.jsonl"));
  REQUIRE(users.size() == 1);
  CHECK(users[0].user_id == u.user_id);
  CHECK(users[0].condition == u.condition);
  CHECK(users[0].answers == u.answers);
  CHECK(users[0].n_sessions_used == 4);

  SUBCASE("defective rows are loud") {
    write_text_file(dir.file("bad.jsonl"), "{not json}\n");
    CHECK_THROWS_AS(read_session_predictions_jsonl(dir.file("bad.jsonl")),
                    ParseError);
    write_text_file(
        dir.file("badcond.jsonl"),
        "{\"user_id\":\"u01\",\"condition\":\"upside_down\",\"answers\":{}}\n");
    CHECK_THROWS_AS(read_user_predictions_jsonl(dir.file("badcond.jsonl")),
                    SchemaError);
    CHECK_THROWS_AS(read_user_predictions_jsonl(dir.file("absent.jsonl")),
                    PipelineError);
  }
}
