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

#ifndef ADAUDIT_INGEST_HPP_
#define ADAUDIT_INGEST_HPP_

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "adaudit/demographics.hpp"

namespace adaudit {

// One sponsored post seen by one panelist. Timestamps are epoch seconds UTC.
struct AdImpression {
  std::string user_id;
  std::int64_t timestamp = 0;
  std::string ad_id;
  std::string source;
  std::string title;
  std::string body;
  std::vector<std::string> image_refs;
};

enum class ImpressionFormat { kJsonl, kCsv };

ImpressionFormat impression_format_from_path(const std::string& path);

// Reads an impression log. JSONL: one object per line with keys user_id,
// timestamp, ad_id, source, title, body, image_refs. CSV: header row with
// the same names; image_refs is ';'-separated. Unknown keys are ignored.
// Missing required fields or malformed rows raise ParseError/SchemaError
// with the 1-based row number.
std::vector<AdImpression> parse_impressions(const std::string& path,
                                            ImpressionFormat format);
std::vector<AdImpression> parse_impressions(const std::string& path);

void write_impressions_jsonl(const std::string& path,
                             const std::vector<AdImpression>& impressions);

// Removes markup from ad text: strips tags, decodes the HTML entities that
// occur in feed exports (&amp; &lt; &gt; &quot; &#39; &nbsp; and numeric
// forms), and collapses whitespace. Idempotent: applying it to its own
// output is a no-op, even for nested escapes like "&amp;lt;b&amp;gt;".
std::string strip_html(std::string_view text);

// Keeps impressions whose source equals `keep` (case-insensitive).
// Preserves relative order.
std::vector<AdImpression> filter_source(std::vector<AdImpression> impressions,
                                        std::string_view keep);

// Profiles CSV: header user_id,gender,age,income,education,employment,party.
// Values must match the survey literals exactly (after whitespace and
// unicode-punctuation normalization); anything else raises SchemaError
// naming the row, field, and offending value. Duplicate user_id raises too.
std::map<std::string, DemographicProfile> load_profiles(
    const std::string& path);

void write_profiles_csv(
    const std::string& path,
    const std::map<std::string, DemographicProfile>& profiles);

// Impressions joined with their owners' profiles. Construction sorts
// impressions by (user_id, timestamp, ad_id) and drops impressions whose
// user has no profile, counting them in `dropped_without_profile`.
struct CohortDataset {
  std::vector<AdImpression> impressions;
  std::map<std::string, DemographicProfile> profiles;
  std::size_t dropped_without_profile = 0;
};

CohortDataset make_cohort(std::vector<AdImpression> impressions,
                          std::map<std::string, DemographicProfile> profiles);

}  // namespace adaudit

#endif  // ADAUDIT_INGEST_HPP_
