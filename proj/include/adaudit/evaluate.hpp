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

#ifndef ADAUDIT_EVALUATE_HPP_
#define ADAUDIT_EVALUATE_HPP_

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "adaudit/demographics.hpp"

namespace adaudit {

// Sentinel prediction for "the model declined to answer". Counts as wrong
// and belongs to no class.
inline constexpr std::string_view kAbstainMarker = "ABSTAIN";

// Maps survey categories onto population-register categories so predictor
// scores are comparable against register-based priors.
struct HarmonizationRules {
  bool exclude_prefer_not_to_say = true;
  bool exclude_gender_other = true;
  bool exclude_retired = true;
  // Survey income brackets are weekly personal income times this factor;
  // the register reports the same 12 annualized brackets, so the bracket
  // mapping is the identity.
  int income_annualization_factor = 52;
  std::map<std::string, std::string> education_merge;
  std::map<std::string, std::string> employment_merge;

  static const HarmonizationRules& defaults();
};

// Canonical register-comparable category, or nullopt when the literal is
// excluded from comparison (declined answers, gender "Other", "Retired").
// Accepts survey literals and already-harmonized literals; the mapping is
// idempotent. Throws std::invalid_argument for unknown text.
std::optional<std::string> harmonize_value(Attribute a,
                                           const std::string& literal,
                                           const HarmonizationRules& rules);

// Harmonized category set in survey order.
std::vector<std::string> harmonized_levels(Attribute a,
                                           const HarmonizationRules& rules);

// Percentages in [0, 100].
struct Scores {
  double accuracy = 0;
  double macro_f1 = 0;
  int n = 0;
};

// Exact-match accuracy and macro-F1. The macro average runs over the
// classes present in the truth vector; predictions outside that set
// (including abstentions) add false negatives only. Throws
// std::invalid_argument on empty or mismatched inputs.
Scores score_exact(const std::vector<std::string>& predictions,
                   const std::vector<std::string>& truths);

// Ordinal scoring for age and income: a prediction is credited when it
// equals the truth or sits in an adjacent bracket. Macro-F1 is computed
// after relabeling credited predictions to the true bracket. Throws
// std::invalid_argument for non-ordinal attributes or out-of-universe
// truth values.
Scores score_lenient(Attribute a, const std::vector<std::string>& predictions,
                     const std::vector<std::string>& truths);

// Register-derived marginal distribution per attribute, loaded from a CSV
// with columns attribute,category,probability. Each present attribute must
// cover harmonized categories only and sum to 1 within 1e-9.
class CensusPrior {
 public:
  static CensusPrior load(const std::string& path);

  bool has(Attribute a) const;
  const std::vector<std::pair<std::string, double>>& distribution(
      Attribute a) const;

 private:
  std::map<Attribute, std::vector<std::pair<std::string, double>>> dist_;
};

struct RandomBaseline {
  // Exactly 100/K where K is the size of the scored category set.
  double accuracy = 0;
  // Macro-F1 under uniform guessing has no closed form on a finite truth
  // sample, so it is estimated by seeded Monte Carlo.
  double f1_mean = 0;
  double f1_std = 0;
  int runs = 0;
};

RandomBaseline baseline_random(Attribute a,
                               const std::vector<std::string>& truths,
                               int runs, std::uint64_t seed);

struct PriorModeBaseline {
  std::string level;  // the always-predicted category
  bool tie = false;   // several categories shared the maximum probability
  Scores scores;
};

// Predicts the register's most probable category for every case. Ties
// resolve lexicographically and are flagged.
PriorModeBaseline baseline_prior_mode(const CensusPrior& prior, Attribute a,
                                      const std::vector<std::string>& truths);

struct SamplingBaseline {
  double accuracy_mean = 0;
  double accuracy_std = 0;
  double f1_mean = 0;
  double f1_std = 0;
  int runs = 0;
  // Set when the spread collapses: a single run, or a degenerate prior
  // that concentrates all mass on one category.
  bool degenerate = false;
};

// Draws predictions from the register distribution; reports mean and
// sample standard deviation over `runs` repetitions.
SamplingBaseline baseline_prior_sampling(const CensusPrior& prior,
                                         Attribute a,
                                         const std::vector<std::string>& truths,
                                         int runs, std::uint64_t seed);

// Closed-form expectation of sampling accuracy: sum_k p_k * q_k where q is
// the empirical truth distribution. Percent.
double expected_prior_accuracy(const CensusPrior& prior, Attribute a,
                               const std::vector<std::string>& truths);

}  // namespace adaudit

#endif  // ADAUDIT_EVALUATE_HPP_
