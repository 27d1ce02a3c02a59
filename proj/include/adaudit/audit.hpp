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

#ifndef ADAUDIT_AUDIT_HPP_
#define ADAUDIT_AUDIT_HPP_

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "adaudit/features.hpp"
#include "adaudit/ingest.hpp"

namespace adaudit {

// A user-week is "active" (comparable across users) once it holds this
// many impressions.
inline constexpr int kActiveMinAds = 3;

inline constexpr std::int64_t kSecondsPerWeek = 604800;

// 0-based 7-day window index counted from the epoch. Throws
// std::invalid_argument when timestamp precedes the epoch.
std::int64_t week_index(std::int64_t timestamp, std::int64_t epoch);

// Midnight UTC of the earliest impression. Throws on an empty cohort.
std::int64_t default_epoch(const CohortDataset& cohort);

// Per user-week exposure counters. category_counts gains one count per
// listed category per impression, so multi-category ads contribute to
// several categories at once. Only user-weeks with impressions exist.
struct ExposureCell {
  std::string user_id;
  std::int64_t week = 0;
  int total_ads = 0;
  std::map<std::string, int> category_counts;

  bool active() const { return total_ads >= kActiveMinAds; }
};

// Requires features for every ad_id present; throws SchemaError otherwise.
// Output is sorted by (user_id, week).
std::vector<ExposureCell> build_cells(
    const CohortDataset& cohort,
    const std::map<std::string, AdFeatures>& features, std::int64_t epoch);

struct ExposureSummary {
  std::string attribute;  // display name, e.g. "Gender"
  std::string level;
  std::string category;
  // Share of the level's active user-weeks containing >= 1 category ad.
  double coverage = 0;
  // Mean category-ad count over the level's active user-weeks.
  double avg_intensity = 0;
  std::int64_t n_active_user_weeks = 0;
  // True when the level has no active user-weeks; the ratios are then 0
  // by convention and must not be interpreted.
  bool no_data = false;
};

// Counting uses integer accumulators throughout; the only floating point
// operation is the final division, so results are exactly reproducible.
ExposureSummary coverage_summary(
    const std::vector<ExposureCell>& cells,
    const std::map<std::string, DemographicProfile>& profiles, Attribute a,
    const std::string& level, const std::string& category);

// Every survey level of every attribute crossed with each target category.
std::vector<ExposureSummary> audit_report(
    const std::vector<ExposureCell>& cells,
    const std::map<std::string, DemographicProfile>& profiles,
    const std::vector<std::string>& target_categories);

void write_audit_csv(const std::string& path,
                     const std::vector<ExposureSummary>& rows);

}  // namespace adaudit

#endif  // ADAUDIT_AUDIT_HPP_
