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

#include "adaudit/features.hpp"

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

std::vector<std::string> string_list(const json& j, const char* field) {
  std::vector<std::string> out;
  if (!j.contains(field)) return out;
  const json& v = j.at(field);
  if (v.is_string()) {
    std::string s = trim(v.get<std::string>());
    if (!s.empty()) out.push_back(s);
  } else if (v.is_array()) {
    for (const auto& item : v) {
      if (!item.is_string()) {
        throw ValidationError(std::string(field) +
                              " must contain only strings");
      }
      std::string s = trim(item.get<std::string>());
      if (!s.empty()) out.push_back(s);
    }
  } else if (!v.is_null()) {
    throw ValidationError(std::string(field) + " must be a string or array");
  }
  return out;
}

void dedupe_in_order(std::vector<std::string>& items) {
  std::vector<std::string> seen;
  std::vector<std::string> out;
  for (std::string& s : items) {
    if (std::find(seen.begin(), seen.end(), s) != seen.end()) continue;
    seen.push_back(s);
    out.push_back(std::move(s));
  }
  items = std::move(out);
}

// Replaces {name} with value; returns true if at least one was found.
bool substitute(std::string& text, std::string_view name,
                const std::string& value) {
  std::string needle = "{" + std::string(name) + "}";
  bool any = false;
  std::size_t pos = 0;
  while ((pos = text.find(needle, pos)) != std::string::npos) {
    text.replace(pos, needle.size(), value);
    pos += value.size();
    any = true;
  }
  return any;
}

void check_no_placeholders(const std::string& text) {
  // Lowercase identifiers in braces are unfilled placeholders; JSON
  // examples inside prompts contain quotes or colons and never match.
  for (std::size_t i = 0; i + 1 < text.size(); ++i) {
    if (text[i] != '{') continue;
    std::size_t j = i + 1;
    while (j < text.size() &&
           ((text[j] >= 'a' && text[j] <= 'z') || text[j] == '_')) {
      ++j;
    }
    if (j > i + 1 && j < text.size() && text[j] == '}') {
      throw ValidationError("unresolved placeholder '" +
                            text.substr(i, j - i + 1) + "' in template");
    }
  }
}

}  // namespace

IabTaxonomy IabTaxonomy::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PipelineError("cannot open taxonomy: " + path);
  std::vector<std::string> entries;
  std::string line;
  while (std::getline(in, line)) {
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    entries.push_back(normalize_literal(t));
  }
  return from_entries(std::move(entries));
}

IabTaxonomy IabTaxonomy::from_entries(std::vector<std::string> entries) {
  if (entries.empty()) throw SchemaError("taxonomy has no entries");
  for (std::size_t i = 0; i < entries.size(); ++i) {
    for (std::size_t j = i + 1; j < entries.size(); ++j) {
      if (to_lower(entries[i]) == to_lower(entries[j])) {
        throw SchemaError("duplicate taxonomy entry: " + entries[i]);
      }
    }
  }
  IabTaxonomy t;
  t.entries_ = std::move(entries);
  return t;
}

std::optional<std::string> IabTaxonomy::match(std::string_view raw) const {
  std::string needle = normalize_literal(raw);
  if (needle.empty()) return std::nullopt;
  std::string lowered = to_lower(needle);
  for (const std::string& e : entries_) {
    if (to_lower(e) == lowered) return e;
  }
  const std::string* found = nullptr;
  for (const std::string& e : entries_) {
    if (starts_with_ci(e, needle) || starts_with_ci(needle, e)) {
      if (found != nullptr) return std::nullopt;  // ambiguous
      found = &e;
    }
  }
  if (found != nullptr) return *found;
  return std::nullopt;
}

std::string render_feature_prompt(const AdImpression& ad,
                                  const std::string& template_text) {
  std::string prompt = template_text;
  std::string images;
  if (ad.image_refs.empty()) {
    images = "(no images attached)";
  } else {
    for (std::size_t i = 0; i < ad.image_refs.size(); ++i) {
      if (i > 0) images += ", ";
      images += ad.image_refs[i];
    }
  }
  substitute(prompt, "images", images);
  if (!substitute(prompt, "title", ad.title)) {
    throw ValidationError("feature template lacks {title}");
  }
  if (!substitute(prompt, "upper_texts_str", ad.body)) {
    throw ValidationError("feature template lacks {upper_texts_str}");
  }
  check_no_placeholders(prompt);
  return prompt;
}

AdFeatures validate_features(std::string_view raw_json,
                             const IabTaxonomy& taxonomy,
                             const std::string& ad_id) {
  json j;
  try {
    j = json::parse(raw_json);
  } catch (const json::parse_error& e) {
    throw ValidationError("ad " + ad_id + ": output is not JSON: " +
                          e.what());
  }
  if (!j.is_object()) {
    throw ValidationError("ad " + ad_id + ": output is not a JSON object");
  }

  AdFeatures f;
  f.ad_id = ad_id;
  if (j.contains("caption") && j.at("caption").is_string()) {
    f.caption = collapse_whitespace(j.at("caption").get<std::string>());
  }
  if (f.caption.empty()) {
    throw ValidationError("ad " + ad_id + ": empty caption");
  }

  f.descriptive_categories = string_list(j, "descriptive_category");
  if (f.descriptive_categories.empty()) {
    f.descriptive_categories = string_list(j, "descriptive_categories");
  }
  dedupe_in_order(f.descriptive_categories);

  std::vector<std::string> raw_iab = string_list(j, "iab_category_tier_1");
  if (raw_iab.empty()) raw_iab = string_list(j, "iab_categories");
  for (const std::string& c : raw_iab) {
    if (auto canonical = taxonomy.match(c)) {
      f.iab_categories.push_back(*canonical);
    }
  }
  dedupe_in_order(f.iab_categories);
  if (f.iab_categories.empty()) {
    throw ValidationError("ad " + ad_id +
                          ": no category maps onto the taxonomy");
  }

  f.key_entities = string_list(j, "key_entities_in_images_and_slogan");
  if (f.key_entities.empty()) f.key_entities = string_list(j, "key_entities");
  dedupe_in_order(f.key_entities);
  if (f.key_entities.empty()) {
    throw ValidationError("ad " + ad_id + ": empty key entities");
  }
  return f;
}

AdFeatures extract_features(const AdImpression& ad,
                            const IabTaxonomy& taxonomy, LlmClient& client,
                            const std::string& template_text,
                            const SamplingSettings& settings) {
  BackendRequest req;
  req.template_id = "feature_extraction";
  req.prompt = render_feature_prompt(ad, template_text);
  req.image_refs = ad.image_refs;
  req.settings = settings;
  req.subject_ref = ad.user_id;

  BackendResponse first = client.call(req);
  try {
    return validate_features(first.text, taxonomy, ad.ad_id);
  } catch (const ValidationError& e) {
    BackendRequest retry = req;
    retry.prompt += "\n\nYour previous answer was rejected (";
    retry.prompt += e.what();
    retry.prompt +=
        "). Answer again with exactly one JSON object and no other text; "
        "caption and key_entities_in_images_and_slogan must be non-empty "
        "and iab_category_tier_1 must use the listed categories.";
    BackendResponse second = client.call(retry);
    return validate_features(second.text, taxonomy, ad.ad_id);
  }
}

std::map<std::string, AdFeatures> extract_corpus(
    const std::vector<AdImpression>& impressions, const IabTaxonomy& taxonomy,
    LlmClient& client, const std::string& template_text,
    const SamplingSettings& settings, int jobs) {
  if (jobs < 1) jobs = 1;

  // First impression of each ad_id supplies the creative content.
  std::map<std::string, const AdImpression*> ads;
  for (const AdImpression& imp : impressions) {
    ads.emplace(imp.ad_id, &imp);
  }
  std::vector<const AdImpression*> order;
  order.reserve(ads.size());
  for (const auto& [id, imp] : ads) order.push_back(imp);

  std::vector<AdFeatures> results(order.size());
  std::exception_ptr failure;
  std::mutex failure_mu;

  auto run_one = [&](std::size_t i) {
    results[i] = extract_features(*order[i], taxonomy, client, template_text,
                                  settings);
  };

  if (jobs == 1 || order.size() < 2) {
    for (std::size_t i = 0; i < order.size(); ++i) run_one(i);
  } else {
    std::atomic<std::size_t> next{0};
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

  std::map<std::string, AdFeatures> out;
  for (AdFeatures& f : results) {
    std::string key = f.ad_id;
    out.emplace(std::move(key), std::move(f));
  }
  return out;
}

void write_features_jsonl(const std::string& path,
                          const std::map<std::string, AdFeatures>& features) {
  std::ostringstream out;
  for (const auto& [ad_id, f] : features) {
    json j;
    j["ad_id"] = ad_id;
    j["caption"] = f.caption;
    j["descriptive_category"] = f.descriptive_categories;
    j["iab_category_tier_1"] = f.iab_categories;
    j["key_entities_in_images_and_slogan"] = f.key_entities;
    out << j.dump() << '\n';
  }
  write_text_file(path, out.str());
}

std::map<std::string, AdFeatures> read_features_jsonl(
    const std::string& path, const IabTaxonomy& taxonomy) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PipelineError("cannot open file: " + path);
  std::map<std::string, AdFeatures> out;
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
    std::string ad_id = j.at("ad_id").get<std::string>();
    AdFeatures f = validate_features(t, taxonomy, ad_id);
    if (!out.emplace(ad_id, std::move(f)).second) {
      throw SchemaError("row " + std::to_string(row) +
                        ": duplicate features for ad '" + ad_id + "'");
    }
  }
  return out;
}

}  // namespace adaudit
