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

#ifndef ADAUDIT_DEMOGRAPHICS_HPP_
#define ADAUDIT_DEMOGRAPHICS_HPP_

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace adaudit {

// The six self-reported attributes carried by every cohort profile.
enum class Attribute : std::uint8_t {
  kGender = 0,
  kAge,
  kIncome,
  kEducation,
  kEmployment,
  kParty,
};

inline constexpr std::array<Attribute, 6> kAllAttributes = {
    Attribute::kGender,     Attribute::kAge,        Attribute::kIncome,
    Attribute::kEducation,  Attribute::kEmployment, Attribute::kParty,
};

inline constexpr std::string_view kPreferNotToSay = "Prefer not to say";

// Machine name ("gender") and display name ("Gender").
std::string_view attribute_key(Attribute a);
std::string_view attribute_display(Attribute a);
std::optional<Attribute> attribute_from_key(std::string_view key);

// Closed survey category set, in reporting order. Includes the
// "Prefer not to say" level where the survey offered one.
const std::vector<std::string>& attribute_levels(Attribute a);

// Categories a predictor is scored against: the survey set minus
// "Prefer not to say", and minus "Other" for gender. Ordinal attributes
// (age, income) are in bracket order so adjacency is index distance 1.
const std::vector<std::string>& evaluation_levels(Attribute a);

// Age and income brackets have a natural order; the rest are nominal.
bool is_ordinal(Attribute a);

// Regression baseline level for each attribute.
const std::string& reference_level(Attribute a);

// Trims, collapses whitespace, and folds common unicode punctuation
// (en/em dashes to '-', curly quotes to straight) so visually identical
// survey exports compare equal.
std::string normalize_literal(std::string_view raw);

// Strict lookup used by profile loading: accepts the canonical literal and a
// small set of documented verbatim variants (e.g. "75+" for "75 and over",
// "Liberal (National Coalition)" for "Liberal"). No fuzzy matching.
std::optional<int> parse_profile_level(Attribute a, std::string_view raw);

// Lenient lookup used on model outputs: case-insensitive, ignores '$', ','
// and surrounding noise, and applies an alias table ("labour" -> "Labor",
// "National" -> "Liberal", "75+" -> "75 and over"). Returns the canonical
// survey literal, or nullopt when the text maps to no category.
std::optional<std::string> normalize_prediction(Attribute a,
                                                std::string_view raw);

int level_index(Attribute a, std::string_view canonical_literal);

struct DemographicProfile {
  std::string user_id;
  // Index into attribute_levels() per attribute.
  std::array<std::int8_t, 6> levels{};

  const std::string& level(Attribute a) const;
  bool is_prefer_not_to_say(Attribute a) const;
};

}  // namespace adaudit

#endif  // ADAUDIT_DEMOGRAPHICS_HPP_
