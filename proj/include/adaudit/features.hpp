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

#ifndef ADAUDIT_FEATURES_HPP_
#define ADAUDIT_FEATURES_HPP_

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "adaudit/ingest.hpp"
#include "adaudit/llm_client.hpp"

namespace adaudit {

// Closed tier-1 category list for ad classification. One entry per line in
// the data file; '#' lines are comments.
class IabTaxonomy {
 public:
  static IabTaxonomy load(const std::string& path);
  static IabTaxonomy from_entries(std::vector<std::string> entries);

  const std::vector<std::string>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  // Maps free text onto an entry: case-insensitive exact match first, then
  // a unique prefix relation in either direction ("Retailing" -> "Retail",
  // "Health" -> "Health and Medical Services"). Ambiguous or unknown text
  // maps to nothing.
  std::optional<std::string> match(std::string_view raw) const;

 private:
  std::vector<std::string> entries_;
};

// Model-extracted description of one ad creative.
struct AdFeatures {
  std::string ad_id;
  std::string caption;
  std::vector<std::string> descriptive_categories;
  // Canonical taxonomy entries, deduplicated, order of first mention.
  std::vector<std::string> iab_categories;
  std::vector<std::string> key_entities;
};

// Substitutes {title}, {upper_texts_str}, and {images} in the extraction
// template. Throws ValidationError if an unresolved {placeholder} remains.
std::string render_feature_prompt(const AdImpression& ad,
                                  const std::string& template_text);

// Parses and validates raw model output: object with a non-empty caption,
// non-empty key entities, and at least one category that maps onto the
// taxonomy (unmappable categories are dropped, lists are deduplicated).
// Throws ValidationError describing the first violation.
AdFeatures validate_features(std::string_view raw_json,
                             const IabTaxonomy& taxonomy,
                             const std::string& ad_id);

// One extraction call with a single corrective re-ask: if the first answer
// fails validation, the model is asked again with the violation appended;
// a second failure propagates ValidationError.
AdFeatures extract_features(const AdImpression& ad,
                            const IabTaxonomy& taxonomy, LlmClient& client,
                            const std::string& template_text,
                            const SamplingSettings& settings);

// Extracts every distinct ad_id in the corpus (first impression of each id
// supplies the creative). Parallel across ads when jobs > 1; the result is
// independent of jobs. Identical creatives are served from the client
// cache.
std::map<std::string, AdFeatures> extract_corpus(
    const std::vector<AdImpression>& impressions, const IabTaxonomy& taxonomy,
    LlmClient& client, const std::string& template_text,
    const SamplingSettings& settings, int jobs = 1);

void write_features_jsonl(const std::string& path,
                          const std::map<std::string, AdFeatures>& features);
std::map<std::string, AdFeatures> read_features_jsonl(
    const std::string& path, const IabTaxonomy& taxonomy);

}  // namespace adaudit

#endif  // ADAUDIT_FEATURES_HPP_
