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

#include "adaudit/evaluate.hpp"

#include <cmath>
#include <string>
#include <vector>

#include "adaudit/util.hpp"
#include "doctest.h"
#include "support/synthetic.hpp"

using namespace adaudit;
using adaudit::testing::TempDir;

namespace {

const HarmonizationRules& rules() { return HarmonizationRules::defaults(); }

std::string prior_csv(const std::string& body) {
  return "attribute,category,probability\n" + body;
}

CensusPrior load_prior_text(const std::string& body) {
  TempDir dir("prior");
  write_text_file(dir.file("prior.csv"), prior_csv(body));
  return CensusPrior::load(dir.file("prior.csv"));
}

}  // namespace

TEST_CASE("harmonize_value merges, excludes, and stays idempotent") {
  CHECK(harmonize_value(Attribute::kEducation, "Bachelor degree level",
                        rules()) == std::string("Bachelor degree"));
  CHECK(harmonize_value(Attribute::kEducation, "Bachelor degree", rules()) ==
        std::string("Bachelor degree"));
  CHECK(harmonize_value(Attribute::kEducation, "Year 12 or equivalent",
                        rules()) == std::string("No degree"));
  CHECK(harmonize_value(Attribute::kEducation,
                        "Less than year 12 or equivalent", rules()) ==
        std::string("No degree"));
  CHECK(harmonize_value(Attribute::kEmployment,
                        "Unemployed and looking for work", rules()) ==
        std::string("Unemployed"));
  CHECK(harmonize_value(Attribute::kEmployment,
                        "Unemployed and not looking for work", rules()) ==
        std::string("Unemployed"));

  // Attributes without merges pass through.
  CHECK(harmonize_value(Attribute::kAge, "25-34", rules()) ==
        std::string("25-34"));
  CHECK(harmonize_value(Attribute::kParty, "Greens", rules()) ==
        std::string("Greens"));
  // Unicode dash folding happens before lookup.
  CHECK(harmonize_value(Attribute::kAge, "18–24", rules()) ==
        std::string("18-24"));

  SUBCASE("excluded categories compare to nothing") {
    CHECK_FALSE(harmonize_value(Attribute::kGender, "Prefer not to say",
                                rules())
                    .has_value());
    CHECK_FALSE(harmonize_value(Attribute::kGender, "Other", rules())
                    .has_value());
    CHECK_FALSE(harmonize_value(Attribute::kEmployment, "Retired", rules())
                    .has_value());
    // "Other" is excluded for gender only.
    CHECK(harmonize_value(Attribute::kParty, "Other", rules()) ==
          std::string("Other"));
  }

  SUBCASE("unknown literals are loud errors") {
    CHECK_THROWS_AS(
        harmonize_value(Attribute::kEducation, "Doctorate", rules()),
        std::invalid_argument);
    CHECK_THROWS_AS(harmonize_value(Attribute::kGender, "Nonbinary", rules()),
                    std::invalid_argument);
    CHECK_THROWS_AS(harmonize_value(Attribute::kAge, "95-99", rules()),
                    std::invalid_argument);
  }
}

TEST_CASE("harmonized level sets have the register cardinalities") {
  CHECK(harmonized_levels(Attribute::kGender, rules()).size() == 2);
  CHECK(harmonized_levels(Attribute::kAge, rules()).size() == 7);
  CHECK(harmonized_levels(Attribute::kIncome, rules()).size() == 12);
  CHECK(harmonized_levels(Attribute::kEducation, rules()) ==
        std::vector<std::string>{"Postgraduate degree", "Bachelor degree",
                                 "No degree"});
  CHECK(harmonized_levels(Attribute::kEmployment, rules()) ==
        std::vector<std::string>{"Employed full time", "Employed part time",
                                 "Unemployed"});
  CHECK(harmonized_levels(Attribute::kParty, rules()).size() == 5);
}

TEST_CASE("score_exact computes accuracy and truth-class macro F1") {
  std::vector<std::string> truths = {"A", "A", "B", "C"};
  std::vector<std::string> preds = {"A", "B", "B", "ABSTAIN"};
  Scores s = score_exact(preds, truths);
  CHECK(s.n == 4);
  CHECK(s.accuracy == 50.0);
  // Per class: A 2/3, B 2/3, C 0; macro = 4/9.
  CHECK(s.macro_f1 == doctest::Approx(100.0 * 4.0 / 9.0).epsilon(1e-12));

  SUBCASE("stray prediction labels add false negatives only") {
    Scores stray = score_exact({"D", "B"}, {"A", "B"});
    CHECK(stray.accuracy == 50.0);
    CHECK(stray.macro_f1 == 50.0);  // A scores 0, B scores 1
  }

  SUBCASE("perfect predictions score 100/100") {
    Scores perfect = score_exact(truths, truths);
    CHECK(perfect.accuracy == 100.0);
    CHECK(perfect.macro_f1 == 100.0);
  }

  SUBCASE("defective inputs are rejected") {
    CHECK_THROWS_AS(score_exact({}, {}), std::invalid_argument);
    CHECK_THROWS_AS(score_exact({"A"}, {"A", "B"}), std::invalid_argument);
  }
}

TEST_CASE("score_lenient credits adjacent brackets") {
  SUBCASE("one-off brackets count, two-off do not") {
    Scores one_off = score_lenient(Attribute::kAge, {"18-24"}, {"25-34"});
    CHECK(one_off.accuracy == 100.0);
    CHECK(one_off.macro_f1 == 100.0);
    Scores two_off = score_lenient(Attribute::kAge, {"45-54"}, {"25-34"});
    CHECK(two_off.accuracy == 0.0);
  }

  SUBCASE("credited predictions are relabeled before the F1 pass") {
    std::vector<std::string> truths = {"18-24", "35-44"};
    std::vector<std::string> preds = {"25-34", "25-34"};
    Scores s = score_lenient(Attribute::kAge, preds, truths);
    CHECK(s.accuracy == 100.0);
    CHECK(s.macro_f1 == 100.0);
  }

  SUBCASE("abstentions and junk stay wrong") {
    Scores s = score_lenient(Attribute::kIncome,
                             {"ABSTAIN", "$1-$15,599"},
                             {"$1-$15,599", "$15,600-$20,799"});
    CHECK(s.accuracy == 50.0);  // second prediction is one bracket off
  }

  SUBCASE("lenient never scores below exact") {
    std::vector<std::string> truths = {"18-24", "25-34", "55-64", "75 and over",
                                       "35-44"};
    std::vector<std::string> preds = {"25-34", "25-34", "18-24", "65-74",
                                      "ABSTAIN"};
    Scores exact = score_exact(preds, truths);
    Scores lenient = score_lenient(Attribute::kAge, preds, truths);
    CHECK(lenient.accuracy >= exact.accuracy);
    CHECK(lenient.macro_f1 >= exact.macro_f1);
  }

  SUBCASE("nominal attributes and foreign truths are rejected") {
    CHECK_THROWS_AS(score_lenient(Attribute::kGender, {"Male"}, {"Male"}),
                    std::invalid_argument);
    CHECK_THROWS_AS(score_lenient(Attribute::kAge, {"25-34"},
                                  {"Prefer not to say"}),
                    std::invalid_argument);
  }
}

TEST_CASE("census prior loads validated marginals") {
  CensusPrior shipped = CensusPrior::load(std::string(ADAUDIT_DATA_DIR) +
                                          "/census_prior_au.csv");
  for (Attribute a : kAllAttributes) {
    CHECK(shipped.has(a));
  }
  CHECK(shipped.distribution(Attribute::kGender).size() == 2);
  CHECK(shipped.distribution(Attribute::kIncome).size() == 12);

  CensusPrior small = load_prior_text("gender,Male,0.3\ngender,Female,0.7\n");
  CHECK(small.has(Attribute::kGender));
  CHECK_FALSE(small.has(Attribute::kAge));
  CHECK_THROWS_AS(small.distribution(Attribute::kAge), std::invalid_argument);
  const auto& dist = small.distribution(Attribute::kGender);
  REQUIRE(dist.size() == 2);
  CHECK(dist[0].first == "Male");
  CHECK(dist[0].second == 0.3);

  SUBCASE("malformed priors are rejected") {
    CHECK_THROWS_AS(load_prior_text("gender,Male,0.3\ngender,Female,0.6\n"),
                    SchemaError);  // sums to 0.9
    CHECK_THROWS_AS(load_prior_text("employment,Retired,1.0\n"),
                    SchemaError);  // not a harmonized level
    CHECK_THROWS_AS(
        load_prior_text("gender,Male,0.5\ngender,Male,0.5\n"),
        SchemaError);  // duplicate category
    CHECK_THROWS_AS(load_prior_text("gender,Male,oops\ngender,Female,1\n"),
                    SchemaError);
    CHECK_THROWS_AS(load_prior_text("gender,Male,1.5\ngender,Female,-0.5\n"),
                    SchemaError);
    CHECK_THROWS_AS(load_prior_text("species,Cat,1.0\n"), SchemaError);
  }
}

TEST_CASE("uniform random baseline accuracy is exactly 100 over K") {
  std::vector<std::string> truths = {"Male", "Female", "Female", "Male",
                                     "Female"};
  RandomBaseline b = baseline_random(Attribute::kGender, truths, 32, 42);
  CHECK(b.accuracy == 50.0);
  CHECK(b.runs == 32);
  CHECK(b.f1_mean > 0.0);
  CHECK(b.f1_std > 0.0);

  CHECK(baseline_random(Attribute::kAge, {"25-34"}, 1, 1).accuracy ==
        100.0 / 7.0);
  CHECK(baseline_random(Attribute::kIncome, {"$1-$15,599"}, 1, 1).accuracy ==
        100.0 / 12.0);
  CHECK(format_fixed(
            baseline_random(Attribute::kAge, {"25-34"}, 1, 1).accuracy, 2) ==
        "14.29");

  SUBCASE("seeded runs replay exactly") {
    RandomBaseline again = baseline_random(Attribute::kGender, truths, 32, 42);
    CHECK(again.f1_mean == b.f1_mean);
    CHECK(again.f1_std == b.f1_std);
  }

  SUBCASE("a single run has no spread") {
    RandomBaseline one = baseline_random(Attribute::kGender, truths, 1, 42);
    CHECK(one.f1_std == 0.0);
  }

  SUBCASE("invalid inputs are rejected") {
    CHECK_THROWS_AS(baseline_random(Attribute::kGender, {}, 10, 42),
                    std::invalid_argument);
    CHECK_THROWS_AS(baseline_random(Attribute::kGender, truths, 0, 42),
                    std::invalid_argument);
  }
}

TEST_CASE("prior mode predicts the most probable register category") {
  CensusPrior prior = load_prior_text("gender,Male,0.3\ngender,Female,0.7\n");
  std::vector<std::string> truths = {"Female", "Male", "Female", "Female"};
  PriorModeBaseline mode = baseline_prior_mode(prior, Attribute::kGender,
                                               truths);
  CHECK(mode.level == "Female");
  CHECK_FALSE(mode.tie);
  CHECK(mode.scores.accuracy == 75.0);

  SUBCASE("ties resolve lexicographically and are flagged") {
    CensusPrior even = load_prior_text("gender,Male,0.5\ngender,Female,0.5\n");
    PriorModeBaseline tied =
        baseline_prior_mode(even, Attribute::kGender, truths);
    CHECK(tied.tie);
    CHECK(tied.level == "Female");
  }

  SUBCASE("the shipped register favors Female for gender") {
    CensusPrior shipped = CensusPrior::load(std::string(ADAUDIT_DATA_DIR) +
                                            "/census_prior_au.csv");
    PriorModeBaseline g =
        baseline_prior_mode(shipped, Attribute::kGender, truths);
    CHECK(g.level == "Female");
    CHECK_FALSE(g.tie);
  }
}

TEST_CASE("prior sampling converges on the closed-form accuracy") {
  CensusPrior prior = load_prior_text("gender,Male,0.3\ngender,Female,0.7\n");
  std::vector<std::string> truths;
  for (int i = 0; i < 60; ++i) {
    truths.push_back(i % 4 == 0 ? "Male" : "Female");
  }
  // q_F = 3/4, q_M = 1/4; expectation 0.7*0.75 + 0.3*0.25 = 60%.
  double expected = expected_prior_accuracy(prior, Attribute::kGender, truths);
  CHECK(expected == doctest::Approx(60.0).epsilon(1e-12));

  const int runs = 500;
  SamplingBaseline s = baseline_prior_sampling(prior, Attribute::kGender,
                                               truths, runs, 4242);
  CHECK(s.runs == runs);
  CHECK_FALSE(s.degenerate);
  CHECK(s.accuracy_std > 0.0);
  double se = s.accuracy_std / std::sqrt(static_cast<double>(runs));
  CHECK(std::abs(s.accuracy_mean - expected) < 3.0 * se + 1e-9);

  SUBCASE("identical seeds replay the draw") {
    SamplingBaseline again = baseline_prior_sampling(
        prior, Attribute::kGender, truths, runs, 4242);
    CHECK(again.accuracy_mean == s.accuracy_mean);
    CHECK(again.f1_mean == s.f1_mean);
  }

  SUBCASE("single runs and concentrated priors are degenerate") {
    SamplingBaseline single = baseline_prior_sampling(
        prior, Attribute::kGender, truths, 1, 4242);
    CHECK(single.degenerate);
    CHECK(single.accuracy_std == 0.0);

    CensusPrior point =
        load_prior_text("gender,Male,1.0\ngender,Female,0.0\n");
    SamplingBaseline conc = baseline_prior_sampling(
        point, Attribute::kGender, truths, 10, 4242);
    CHECK(conc.degenerate);
    CHECK(conc.accuracy_mean == 25.0);  // always predicts Male
  }
}
