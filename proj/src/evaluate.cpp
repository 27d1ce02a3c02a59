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

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <stdexcept>

#include "adaudit/csv.hpp"
#include "adaudit/util.hpp"

namespace adaudit {

namespace {

// Deterministic uniforms for the seeded baselines.
class BaselineRng {
 public:
  explicit BaselineRng(std::uint64_t seed) : state_(seed) {}
  double uniform() {
    state_ += 0x9E3779B97F4A7C15ull;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    z ^= z >> 31;
    return static_cast<double>(z >> 11) * 0x1.0p-53;
  }
  std::size_t pick(std::size_t n) {
    return static_cast<std::size_t>(uniform() * static_cast<double>(n)) %
           std::max<std::size_t>(n, 1);
  }

 private:
  std::uint64_t state_;
};

void check_nonempty(const std::vector<std::string>& predictions,
                    const std::vector<std::string>& truths) {
  if (truths.empty()) {
    throw std::invalid_argument("cannot score an empty truth set");
  }
  if (predictions.size() != truths.size()) {
    throw std::invalid_argument("predictions and truths differ in length");
  }
}

struct RunningStats {
  double sum = 0;
  double sum_sq = 0;
  int n = 0;
  void add(double v) {
    sum += v;
    sum_sq += v * v;
    ++n;
  }
  double mean() const { return n == 0 ? 0.0 : sum / n; }
  double stddev() const {
    if (n < 2) return 0.0;
    double m = mean();
    double var = (sum_sq - n * m * m) / (n - 1);
    return var > 0.0 ? std::sqrt(var) : 0.0;
  }
};

}  // namespace

const HarmonizationRules& HarmonizationRules::defaults() {
  static const HarmonizationRules kRules = [] {
    HarmonizationRules r;
    r.education_merge = {
        {"Postgraduate degree level", "Postgraduate degree"},
        {"Bachelor degree level", "Bachelor degree"},
        {"Year 12 or equivalent", "No degree"},
        {"Less than year 12 or equivalent", "No degree"},
        // Identity entries keep the mapping idempotent.
        {"Postgraduate degree", "Postgraduate degree"},
        {"Bachelor degree", "Bachelor degree"},
        {"No degree", "No degree"},
    };
    r.employment_merge = {
        {"Employed full time", "Employed full time"},
        {"Employed part time", "Employed part time"},
        {"Unemployed and looking for work", "Unemployed"},
        {"Unemployed and not looking for work", "Unemployed"},
        {"Unemployed", "Unemployed"},
    };
    return r;
  }();
  return kRules;
}

std::optional<std::string> harmonize_value(Attribute a,
                                           const std::string& literal,
                                           const HarmonizationRules& rules) {
  std::string v = normalize_literal(literal);
  if (rules.exclude_prefer_not_to_say && v == kPreferNotToSay) {
    return std::nullopt;
  }
  if (a == Attribute::kGender && rules.exclude_gender_other && v == "Other") {
    return std::nullopt;
  }
  if (a == Attribute::kEmployment && rules.exclude_retired && v == "Retired") {
    return std::nullopt;
  }
  if (a == Attribute::kEducation) {
    auto it = rules.education_merge.find(v);
    if (it != rules.education_merge.end()) return it->second;
    throw std::invalid_argument("unknown education literal: " + v);
  }
  if (a == Attribute::kEmployment) {
    auto it = rules.employment_merge.find(v);
    if (it != rules.employment_merge.end()) return it->second;
    throw std::invalid_argument("unknown employment literal: " + v);
  }
  const auto& levels = attribute_levels(a);
  if (std::find(levels.begin(), levels.end(), v) == levels.end()) {
    throw std::invalid_argument("unknown " + std::string(attribute_key(a)) +
                                " literal: " + v);
  }
  return v;
}

std::vector<std::string> harmonized_levels(Attribute a,
                                           const HarmonizationRules& rules) {
  std::vector<std::string> out;
  for (const std::string& level : attribute_levels(a)) {
    std::optional<std::string> h;
    try {
      h = harmonize_value(a, level, rules);
    } catch (const std::invalid_argument&) {
      continue;
    }
    if (h && std::find(out.begin(), out.end(), *h) == out.end()) {
      out.push_back(*h);
    }
  }
  return out;
}

Scores score_exact(const std::vector<std::string>& predictions,
                   const std::vector<std::string>& truths) {
  check_nonempty(predictions, truths);
  const std::size_t n = truths.size();

  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (predictions[i] == truths[i]) ++correct;
  }

  // Macro-F1 over classes present in the truth set, in sorted order.
  std::set<std::string> classes(truths.begin(), truths.end());
  double f1_sum = 0.0;
  for (const std::string& c : classes) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < n; ++i) {
      bool p = predictions[i] == c;
      bool t = truths[i] == c;
      if (p && t) ++tp;
      if (p && !t) ++fp;
      if (!p && t) ++fn;
    }
    double denom = static_cast<double>(2 * tp + fp + fn);
    f1_sum += denom > 0.0 ? 2.0 * static_cast<double>(tp) / denom : 0.0;
  }

  Scores s;
  s.n = static_cast<int>(n);
  s.accuracy = 100.0 * static_cast<double>(correct) / static_cast<double>(n);
  s.macro_f1 = 100.0 * f1_sum / static_cast<double>(classes.size());
  return s;
}

Scores score_lenient(Attribute a, const std::vector<std::string>& predictions,
                     const std::vector<std::string>& truths) {
  if (!is_ordinal(a)) {
    throw std::invalid_argument(
        "lenient scoring applies only to ordered bracket attributes");
  }
  check_nonempty(predictions, truths);
  const auto& brackets = evaluation_levels(a);
  auto bracket_index = [&](const std::string& v) -> int {
    for (std::size_t i = 0; i < brackets.size(); ++i) {
      if (brackets[i] == v) return static_cast<int>(i);
    }
    return -1;
  };

  std::vector<std::string> relabeled;
  relabeled.reserve(predictions.size());
  for (std::size_t i = 0; i < truths.size(); ++i) {
    int t = bracket_index(truths[i]);
    if (t < 0) {
      throw std::invalid_argument("truth outside the bracket universe: " +
                                  truths[i]);
    }
    int p = bracket_index(predictions[i]);
    bool credited = p >= 0 && std::abs(p - t) <= 1;
    relabeled.push_back(credited ? truths[i] : predictions[i]);
  }
  return score_exact(relabeled, truths);
}

CensusPrior CensusPrior::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PipelineError("cannot open census prior: " + path);
  CsvReader reader(in);
  std::vector<std::string> fields;
  if (!reader.read_row(fields) || fields.size() < 3) {
    throw SchemaError(path + ": expected header attribute,category,probability");
  }

  CensusPrior prior;
  while (reader.read_row(fields)) {
    if (fields.size() == 1 && trim(fields[0]).empty()) continue;
    if (fields.size() < 3) {
      throw SchemaError("row " + std::to_string(reader.row_number()) +
                        ": expected 3 columns");
    }
    auto attr = attribute_from_key(fields[0]);
    if (!attr) {
      throw SchemaError("row " + std::to_string(reader.row_number()) +
                        ": unknown attribute '" + fields[0] + "'");
    }
    std::string category = normalize_literal(fields[1]);
    double prob;
    try {
      prob = std::stod(trim(fields[2]));
    } catch (const std::exception&) {
      throw SchemaError("row " + std::to_string(reader.row_number()) +
                        ": bad probability '" + fields[2] + "'");
    }
    if (prob < 0.0 || prob > 1.0) {
      throw SchemaError("row " + std::to_string(reader.row_number()) +
                        ": probability out of [0,1]");
    }
    prior.dist_[*attr].emplace_back(category, prob);
  }

  for (auto& [attr, dist] : prior.dist_) {
    std::vector<std::string> allowed =
        harmonized_levels(attr, HarmonizationRules::defaults());
    double sum = 0.0;
    std::set<std::string> seen;
    for (const auto& [category, prob] : dist) {
      if (std::find(allowed.begin(), allowed.end(), category) ==
          allowed.end()) {
        throw SchemaError("census category '" + category +
                          "' is not a harmonized " +
                          std::string(attribute_key(attr)) + " level");
      }
      if (!seen.insert(category).second) {
        throw SchemaError("duplicate census category '" + category + "'");
      }
      sum += prob;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
      throw SchemaError(std::string(attribute_key(attr)) +
                        " census probabilities sum to " +
                        format_fixed(sum, 12) + ", expected 1");
    }
  }
  return prior;
}

bool CensusPrior::has(Attribute a) const { return dist_.count(a) > 0; }

const std::vector<std::pair<std::string, double>>& CensusPrior::distribution(
    Attribute a) const {
  auto it = dist_.find(a);
  if (it == dist_.end()) {
    throw std::invalid_argument("census prior lacks attribute " +
                                std::string(attribute_key(a)));
  }
  return it->second;
}

RandomBaseline baseline_random(Attribute a,
                               const std::vector<std::string>& truths,
                               int runs, std::uint64_t seed) {
  if (truths.empty()) {
    throw std::invalid_argument("cannot score an empty truth set");
  }
  if (runs < 1) throw std::invalid_argument("runs must be >= 1");
  const auto& levels = evaluation_levels(a);

  RandomBaseline out;
  out.accuracy = 100.0 / static_cast<double>(levels.size());
  out.runs = runs;

  RunningStats f1;
  for (int run = 0; run < runs; ++run) {
    BaselineRng rng(mix_seed(seed, std::string(attribute_key(a)) + "#random#" +
                                       std::to_string(run)));
    std::vector<std::string> preds;
    preds.reserve(truths.size());
    for (std::size_t i = 0; i < truths.size(); ++i) {
      preds.push_back(levels[rng.pick(levels.size())]);
    }
    f1.add(score_exact(preds, truths).macro_f1);
  }
  out.f1_mean = f1.mean();
  out.f1_std = f1.stddev();
  return out;
}

PriorModeBaseline baseline_prior_mode(const CensusPrior& prior, Attribute a,
                                      const std::vector<std::string>& truths) {
  if (truths.empty()) {
    throw std::invalid_argument("cannot score an empty truth set");
  }
  const auto& dist = prior.distribution(a);
  double best = -1.0;
  std::string level;
  bool tie = false;
  for (const auto& [category, prob] : dist) {
    if (prob > best) {
      best = prob;
      level = category;
      tie = false;
    } else if (prob == best) {
      tie = true;
      if (category < level) level = category;
    }
  }

  PriorModeBaseline out;
  out.level = level;
  out.tie = tie;
  std::vector<std::string> preds(truths.size(), level);
  out.scores = score_exact(preds, truths);
  return out;
}

SamplingBaseline baseline_prior_sampling(
    const CensusPrior& prior, Attribute a,
    const std::vector<std::string>& truths, int runs, std::uint64_t seed) {
  if (truths.empty()) {
    throw std::invalid_argument("cannot score an empty truth set");
  }
  if (runs < 1) throw std::invalid_argument("runs must be >= 1");
  const auto& dist = prior.distribution(a);

  SamplingBaseline out;
  out.runs = runs;
  RunningStats acc, f1;
  for (int run = 0; run < runs; ++run) {
    BaselineRng rng(mix_seed(seed, std::string(attribute_key(a)) +
                                       "#sampling#" + std::to_string(run)));
    std::vector<std::string> preds;
    preds.reserve(truths.size());
    for (std::size_t i = 0; i < truths.size(); ++i) {
      double u = rng.uniform();
      double cum = 0.0;
      std::string pick = dist.back().first;
      for (const auto& [category, prob] : dist) {
        cum += prob;
        if (u < cum) {
          pick = category;
          break;
        }
      }
      preds.push_back(pick);
    }
    Scores s = score_exact(preds, truths);
    acc.add(s.accuracy);
    f1.add(s.macro_f1);
  }
  out.accuracy_mean = acc.mean();
  out.accuracy_std = acc.stddev();
  out.f1_mean = f1.mean();
  out.f1_std = f1.stddev();

  bool concentrated = std::any_of(
      dist.begin(), dist.end(),
      [](const auto& kv) { return kv.second >= 1.0 - 1e-12; });
  out.degenerate = runs < 2 || concentrated;
  return out;
}

double expected_prior_accuracy(const CensusPrior& prior, Attribute a,
                               const std::vector<std::string>& truths) {
  if (truths.empty()) {
    throw std::invalid_argument("cannot score an empty truth set");
  }
  const auto& dist = prior.distribution(a);
  double expected = 0.0;
  for (const auto& [category, prob] : dist) {
    std::size_t hits = 0;
    for (const std::string& t : truths) {
      if (t == category) ++hits;
    }
    expected +=
        prob * static_cast<double>(hits) / static_cast<double>(truths.size());
  }
  return 100.0 * expected;
}

}  // namespace adaudit
