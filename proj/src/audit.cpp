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

#include "adaudit/audit.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

#include "adaudit/csv.hpp"
#include "adaudit/util.hpp"

namespace adaudit {

std::int64_t week_index(std::int64_t timestamp, std::int64_t epoch) {
  if (timestamp < epoch) {
    throw std::invalid_argument("timestamp precedes the audit epoch");
  }
  return (timestamp - epoch) / kSecondsPerWeek;
}

std::int64_t default_epoch(const CohortDataset& cohort) {
  if (cohort.impressions.empty()) {
    throw std::invalid_argument("cohort has no impressions");
  }
  std::int64_t earliest = cohort.impressions.front().timestamp;
  for (const AdImpression& imp : cohort.impressions) {
    earliest = std::min(earliest, imp.timestamp);
  }
  return floor_to_utc_midnight(earliest);
}

std::vector<ExposureCell> build_cells(
    const CohortDataset& cohort,
    const std::map<std::string, AdFeatures>& features, std::int64_t epoch) {
  std::map<std::pair<std::string, std::int64_t>, ExposureCell> cells;
  for (const AdImpression& imp : cohort.impressions) {
    auto fit = features.find(imp.ad_id);
    if (fit == features.end()) {
      throw SchemaError("no features for ad '" + imp.ad_id +
                        "'; run feature extraction first");
    }
    std::int64_t week = week_index(imp.timestamp, epoch);
    ExposureCell& cell = cells[{imp.user_id, week}];
    if (cell.total_ads == 0) {
      cell.user_id = imp.user_id;
      cell.week = week;
    }
    cell.total_ads += 1;
    for (const std::string& cat : fit->second.iab_categories) {
      cell.category_counts[cat] += 1;
    }
  }
  std::vector<ExposureCell> out;
  out.reserve(cells.size());
  for (auto& [key, cell] : cells) out.push_back(std::move(cell));
  return out;
}

ExposureSummary coverage_summary(
    const std::vector<ExposureCell>& cells,
    const std::map<std::string, DemographicProfile>& profiles, Attribute a,
    const std::string& level, const std::string& category) {
  // Validates the level against the survey set up front.
  (void)level_index(a, level);

  std::int64_t active = 0;
  std::int64_t covered = 0;
  std::int64_t count_sum = 0;
  for (const ExposureCell& cell : cells) {
    if (!cell.active()) continue;
    auto pit = profiles.find(cell.user_id);
    if (pit == profiles.end()) {
      throw SchemaError("no profile for user '" + cell.user_id + "'");
    }
    if (pit->second.level(a) != level) continue;
    ++active;
    auto cit = cell.category_counts.find(category);
    int n = cit == cell.category_counts.end() ? 0 : cit->second;
    if (n > 0) ++covered;
    count_sum += n;
  }

  ExposureSummary s;
  s.attribute = std::string(attribute_display(a));
  s.level = level;
  s.category = category;
  s.n_active_user_weeks = active;
  if (active == 0) {
    s.no_data = true;
  } else {
    s.coverage = static_cast<double>(covered) / static_cast<double>(active);
    s.avg_intensity =
        static_cast<double>(count_sum) / static_cast<double>(active);
  }
  return s;
}

std::vector<ExposureSummary> audit_report(
    const std::vector<ExposureCell>& cells,
    const std::map<std::string, DemographicProfile>& profiles,
    const std::vector<std::string>& target_categories) {
  std::vector<ExposureSummary> out;
  for (const std::string& category : target_categories) {
    for (Attribute a : kAllAttributes) {
      for (const std::string& level : attribute_levels(a)) {
        out.push_back(coverage_summary(cells, profiles, a, level, category));
      }
    }
  }
  return out;
}

void write_audit_csv(const std::string& path,
                     const std::vector<ExposureSummary>& rows) {
  std::ostringstream buf;
  CsvWriter writer(buf);
  writer.write_row({"attribute", "level", "category", "coverage",
                    "avg_intensity", "n_active_user_weeks"});
  for (const ExposureSummary& r : rows) {
    writer.write_row({r.attribute, r.level, r.category,
                      r.no_data ? "" : format_fixed(r.coverage, 6),
                      r.no_data ? "" : format_fixed(r.avg_intensity, 6),
                      std::to_string(r.n_active_user_weeks)});
  }
  write_text_file(path, buf.str());
}

}  // namespace adaudit
