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

#include "adaudit/demographics.hpp"

#include <algorithm>
#include <stdexcept>
#include <unordered_map>

#include "adaudit/util.hpp"

namespace adaudit {

namespace {

const std::vector<std::string> kGenderLevels = {
    "Male", "Female", "Other", "Prefer not to say"};
const std::vector<std::string> kAgeLevels = {
    "18-24", "25-34", "35-44", "45-54", "55-64", "65-74", "75 and over",
    "Prefer not to say"};
const std::vector<std::string> kIncomeLevels = {
    "$1-$15,599",        "$15,600-$20,799",   "$20,800-$25,999",
    "$26,000-$33,799",   "$33,800-$41,599",   "$41,600-$51,999",
    "$52,000-$64,999",   "$65,000-$77,999",   "$78,000-$90,999",
    "$91,000-$103,999",  "$104,000-$155,999", "$156,000 or more",
    "Prefer not to say"};
const std::vector<std::string> kEducationLevels = {
    "Postgraduate degree level", "Bachelor degree level",
    "Year 12 or equivalent", "Less than year 12 or equivalent",
    "Prefer not to say"};
const std::vector<std::string> kEmploymentLevels = {
    "Employed full time", "Employed part time",
    "Unemployed and looking for work", "Unemployed and not looking for work",
    "Retired", "Prefer not to say"};
const std::vector<std::string> kPartyLevels = {"Labor", "Liberal", "Greens",
                                               "None", "Other"};

const std::vector<std::string> kGenderEval = {"Male", "Female"};
const std::vector<std::string> kAgeEval = {
    "18-24", "25-34", "35-44", "45-54", "55-64", "65-74", "75 and over"};
const std::vector<std::string> kIncomeEval = {
    "$1-$15,599",        "$15,600-$20,799",   "$20,800-$25,999",
    "$26,000-$33,799",   "$33,800-$41,599",   "$41,600-$51,999",
    "$52,000-$64,999",   "$65,000-$77,999",   "$78,000-$90,999",
    "$91,000-$103,999",  "$104,000-$155,999", "$156,000 or more"};
const std::vector<std::string> kEducationEval = {
    "Postgraduate degree level", "Bachelor degree level",
    "Year 12 or equivalent", "Less than year 12 or equivalent"};
const std::vector<std::string> kEmploymentEval = {
    "Employed full time", "Employed part time",
    "Unemployed and looking for work", "Unemployed and not looking for work",
    "Retired"};

const std::string kRefGender = "Female";
const std::string kRefAge = "25-34";
const std::string kRefIncome = "$156,000 or more";
const std::string kRefEducation = "Bachelor degree level";
const std::string kRefEmployment = "Employed full time";
const std::string kRefParty = "None";

int index_of(const std::vector<std::string>& levels, std::string_view value) {
  for (std::size_t i = 0; i < levels.size(); ++i) {
    if (levels[i] == value) return static_cast<int>(i);
  }
  return -1;
}

// Verbatim spellings that appear in survey exports alongside the canonical
// literal. Keyed per attribute.
const std::unordered_map<std::string, std::string>& profile_aliases(
    Attribute a) {
  static const std::unordered_map<std::string, std::string> kAge = {
      {"75+", "75 and over"},
      {"75 or over", "75 and over"},
      {"75 and above", "75 and over"},
  };
  static const std::unordered_map<std::string, std::string> kIncome = {
      {"$156,000+", "$156,000 or more"},
      {"$156,000 and over", "$156,000 or more"},
  };
  static const std::unordered_map<std::string, std::string> kParty = {
      {"Liberal (National Coalition)", "Liberal"},
      {"Liberal/National Coalition", "Liberal"},
      {"No party", "None"},
  };
  static const std::unordered_map<std::string, std::string> kEmpty = {};
  switch (a) {
    case Attribute::kAge:
      return kAge;
    case Attribute::kIncome:
      return kIncome;
    case Attribute::kParty:
      return kParty;
    default:
      return kEmpty;
  }
}

// Case-insensitive lookup key for lenient prediction matching: lower case,
// '$' and ',' and '.' stripped, whitespace collapsed.
std::string loose_key(std::string_view raw) {
  std::string folded = normalize_literal(raw);
  std::string out;
  out.reserve(folded.size());
  for (char c : folded) {
    if (c == '$' || c == ',' || c == '.' || c == '"' || c == '\'') continue;
    out.push_back(
        static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return collapse_whitespace(out);
}

const std::unordered_map<std::string, std::string>& prediction_aliases(
    Attribute a) {
  static const std::unordered_map<std::string, std::string> kGender = {
      {"m", "Male"},         {"man", "Male"},      {"f", "Female"},
      {"woman", "Female"},   {"non-binary", "Other"},
      {"nonbinary", "Other"},
  };
  static const std::unordered_map<std::string, std::string> kAge = {
      {"75+", "75 and over"},         {"75 or over", "75 and over"},
      {"75 or older", "75 and over"}, {"over 75", "75 and over"},
  };
  static const std::unordered_map<std::string, std::string> kIncome = {
      {"156000+", "$156,000 or more"},
      {"156000 and over", "$156,000 or more"},
      {"156000 or above", "$156,000 or more"},
  };
  static const std::unordered_map<std::string, std::string> kEducation = {
      {"postgraduate degree", "Postgraduate degree level"},
      {"postgraduate", "Postgraduate degree level"},
      {"bachelor degree", "Bachelor degree level"},
      {"bachelors degree", "Bachelor degree level"},
      {"bachelor", "Bachelor degree level"},
      {"year 12", "Year 12 or equivalent"},
      {"less than year 12", "Less than year 12 or equivalent"},
      {"no degree", "Year 12 or equivalent"},
  };
  static const std::unordered_map<std::string, std::string> kEmployment = {
      {"full time", "Employed full time"},
      {"full-time", "Employed full time"},
      {"employed full-time", "Employed full time"},
      {"fulltime", "Employed full time"},
      {"part time", "Employed part time"},
      {"part-time", "Employed part time"},
      {"employed part-time", "Employed part time"},
      {"parttime", "Employed part time"},
      {"unemployed", "Unemployed and looking for work"},
  };
  static const std::unordered_map<std::string, std::string> kParty = {
      {"labour", "Labor"},
      {"national", "Liberal"},
      {"liberal (national coalition)", "Liberal"},
      {"liberal/national coalition", "Liberal"},
      {"coalition", "Liberal"},
      {"the greens", "Greens"},
      {"no party", "None"},
      {"independent", "Other"},
  };
  static const std::unordered_map<std::string, std::string> kEmpty = {};
  switch (a) {
    case Attribute::kGender:
      return kGender;
    case Attribute::kAge:
      return kAge;
    case Attribute::kIncome:
      return kIncome;
    case Attribute::kEducation:
      return kEducation;
    case Attribute::kEmployment:
      return kEmployment;
    case Attribute::kParty:
      return kParty;
  }
  return kEmpty;
}

}  // namespace

std::string_view attribute_key(Attribute a) {
  switch (a) {
    case Attribute::kGender:
      return "gender";
    case Attribute::kAge:
      return "age";
    case Attribute::kIncome:
      return "income";
    case Attribute::kEducation:
      return "education";
    case Attribute::kEmployment:
      return "employment";
    case Attribute::kParty:
      return "party";
  }
  throw std::invalid_argument("bad attribute");
}

std::string_view attribute_display(Attribute a) {
  switch (a) {
    case Attribute::kGender:
      return "Gender";
    case Attribute::kAge:
      return "Age";
    case Attribute::kIncome:
      return "Income";
    case Attribute::kEducation:
      return "Education";
    case Attribute::kEmployment:
      return "Employment";
    case Attribute::kParty:
      return "Party";
  }
  throw std::invalid_argument("bad attribute");
}

std::optional<Attribute> attribute_from_key(std::string_view key) {
  std::string k = to_lower(trim(key));
  for (Attribute a : kAllAttributes) {
    if (k == attribute_key(a)) return a;
  }
  return std::nullopt;
}

const std::vector<std::string>& attribute_levels(Attribute a) {
  switch (a) {
    case Attribute::kGender:
      return kGenderLevels;
    case Attribute::kAge:
      return kAgeLevels;
    case Attribute::kIncome:
      return kIncomeLevels;
    case Attribute::kEducation:
      return kEducationLevels;
    case Attribute::kEmployment:
      return kEmploymentLevels;
    case Attribute::kParty:
      return kPartyLevels;
  }
  throw std::invalid_argument("bad attribute");
}

const std::vector<std::string>& evaluation_levels(Attribute a) {
  switch (a) {
    case Attribute::kGender:
      return kGenderEval;
    case Attribute::kAge:
      return kAgeEval;
    case Attribute::kIncome:
      return kIncomeEval;
    case Attribute::kEducation:
      return kEducationEval;
    case Attribute::kEmployment:
      return kEmploymentEval;
    case Attribute::kParty:
      return kPartyLevels;
  }
  throw std::invalid_argument("bad attribute");
}

bool is_ordinal(Attribute a) {
  return a == Attribute::kAge || a == Attribute::kIncome;
}

const std::string& reference_level(Attribute a) {
  switch (a) {
    case Attribute::kGender:
      return kRefGender;
    case Attribute::kAge:
      return kRefAge;
    case Attribute::kIncome:
      return kRefIncome;
    case Attribute::kEducation:
      return kRefEducation;
    case Attribute::kEmployment:
      return kRefEmployment;
    case Attribute::kParty:
      return kRefParty;
  }
  throw std::invalid_argument("bad attribute");
}

std::string normalize_literal(std::string_view raw) {
  std::string out;
  out.reserve(raw.size());
  for (std::size_t i = 0; i < raw.size();) {
    unsigned char c = static_cast<unsigned char>(raw[i]);
    // UTF-8 dash and quote folding: U+2010..U+2015 -> '-',
    // U+2018/U+2019 -> '\'', U+201C/U+201D -> '"', U+00A0 -> ' '.
    if (c == 0xE2 && i + 2 < raw.size()) {
      unsigned char c1 = static_cast<unsigned char>(raw[i + 1]);
      unsigned char c2 = static_cast<unsigned char>(raw[i + 2]);
      if (c1 == 0x80 && c2 >= 0x90 && c2 <= 0x95) {
        out.push_back('-');
        i += 3;
        continue;
      }
      if (c1 == 0x80 && (c2 == 0x98 || c2 == 0x99)) {
        out.push_back('\'');
        i += 3;
        continue;
      }
      if (c1 == 0x80 && (c2 == 0x9C || c2 == 0x9D)) {
        out.push_back('"');
        i += 3;
        continue;
      }
    }
    if (c == 0xC2 && i + 1 < raw.size() &&
        static_cast<unsigned char>(raw[i + 1]) == 0xA0) {
      out.push_back(' ');
      i += 2;
      continue;
    }
    out.push_back(static_cast<char>(c));
    ++i;
  }
  return collapse_whitespace(out);
}

std::optional<int> parse_profile_level(Attribute a, std::string_view raw) {
  std::string v = normalize_literal(raw);
  const auto& levels = attribute_levels(a);
  int idx = index_of(levels, v);
  if (idx >= 0) return idx;
  const auto& aliases = profile_aliases(a);
  auto it = aliases.find(v);
  if (it != aliases.end()) return index_of(levels, it->second);
  return std::nullopt;
}

std::optional<std::string> normalize_prediction(Attribute a,
                                                std::string_view raw) {
  std::string v = normalize_literal(raw);
  if (v.empty()) return std::nullopt;
  const auto& levels = attribute_levels(a);
  int idx = index_of(levels, v);
  if (idx >= 0) return levels[idx];

  std::string key = loose_key(v);
  for (const auto& level : levels) {
    if (loose_key(level) == key) return level;
  }
  const auto& aliases = prediction_aliases(a);
  auto it = aliases.find(key);
  if (it != aliases.end()) return it->second;
  return std::nullopt;
}

int level_index(Attribute a, std::string_view canonical_literal) {
  int idx = index_of(attribute_levels(a), canonical_literal);
  if (idx < 0) {
    throw std::invalid_argument("unknown " +
                                std::string(attribute_key(a)) + " level: " +
                                std::string(canonical_literal));
  }
  return idx;
}

const std::string& DemographicProfile::level(Attribute a) const {
  const auto& table = attribute_levels(a);
  int idx = levels[static_cast<std::size_t>(a)];
  if (idx < 0 || idx >= static_cast<int>(table.size())) {
    throw std::out_of_range("profile level index out of range");
  }
  return table[static_cast<std::size_t>(idx)];
}

bool DemographicProfile::is_prefer_not_to_say(Attribute a) const {
  return level(a) == kPreferNotToSay;
}

}  // namespace adaudit
