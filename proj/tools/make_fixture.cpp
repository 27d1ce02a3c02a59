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
//
// Generates the committed test fixtures: a small panel of synthetic users
// whose inter-impression gaps are bimodal on the log scale (within-session
// gaps near e^2 seconds, between-session gaps near e^8 seconds), so the
// session threshold lands near e^5 by construction. Ad creatives are themed
// so the mock feature extractor maps fixed slices of the pool to the audited
// categories, with per-user exposure mixes tilted by demographic. Includes
// users that exercise the edge paths: declined survey answers, gender
// "Other", "Retired", a user too sparse for a personal threshold, and a
// unimodal user.

#include <cstdint>
#include <cstdio>
#include <cmath>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "adaudit/demographics.hpp"
#include "adaudit/ingest.hpp"
#include "adaudit/util.hpp"

namespace {

using adaudit::AdImpression;
using adaudit::Attribute;
using adaudit::DemographicProfile;

// SplitMix64; good enough for fixture jitter and index picks.
struct Rng {
  std::uint64_t state;
  std::uint64_t next() {
    state += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }
  double uniform() { return (next() >> 11) * (1.0 / 9007199254740992.0); }
  std::uint64_t below(std::uint64_t n) { return next() % n; }
};

constexpr std::int64_t kBaseTime = 1614556800;  // 2021-03-01T00:00:00Z
constexpr std::int64_t kWeek = 604800;

// Creative banks. Themed titles carry tokens the mock feature extractor
// recognizes, so a fixed slice of the ad pool lands in each audited
// category; bodies stay neutral to keep one theme per creative.
const std::vector<std::string> kGamblingTitles = {
    "Spin the pokies jackpot tonight",
    "Casino weekend getaway packages",
    "Footy finals betting markets are open",
};

const std::vector<std::string> kPoliticsTitles = {
    "Vote for a stronger economy",
    "This election, put families first",
    "A senate voice for small business",
};

const std::vector<std::string> kAlcoholTitles = {
    "<b>Craft beer</b> delivered to your door",
    "Barossa shiraz cellar sale ends Sunday",
    "Single malt whisky tasting night",
};

const std::vector<std::string> kEducationTitles = {
    "Top university short courses &#8211; apply today",
    "TAFE diploma intakes now open",
    "Enrol in an online MBA this semester",
};

const std::vector<std::string> kNeutralTitles = {
    "Retire early &amp; travel the world",
    "New SUV range &#8212; test drive now",
    "Fresh groceries, free delivery",
    "Luxury apartments selling fast",
    "Switch &amp; save on your energy bill",
    "Designer frames, two for one",
    "Weekend flash sale on outdoor furniture",
    "Stream every match live this season",
};

const std::vector<std::string> kNeutralBodies = {
    "Sign up now &amp; get a bonus. T&amp;Cs apply.",
    "Limited offer for members. <a href=\"x\">Learn more</a>.",
    "Compare plans &#8211; no obligation quote.",
    "Join thousands of happy customers today.",
    "Free shipping on orders over $50.",
};

const std::vector<std::string> kPoliticsBodies = {
    "Authorised by the campaign office.",
    "Put your community first this year.",
};

std::string pad_id(const char* prefix, std::size_t n) {
  char buffer[32];
  std::snprintf(buffer, sizeof(buffer), "%s%04zu", prefix, n);
  return buffer;
}

DemographicProfile make_profile(
    const std::string& user_id,
    const std::map<Attribute, std::string>& values) {
  DemographicProfile profile;
  profile.user_id = user_id;
  for (Attribute a : adaudit::kAllAttributes) {
    profile.levels[static_cast<int>(a)] = static_cast<std::int8_t>(
        adaudit::level_index(a, values.at(a)));
  }
  return profile;
}

// Pool layout: ads 1-10 gambling, 11-20 politics, 21-28 alcohol, 29-36
// education, the rest general retail.
struct Theme {
  const std::vector<std::string>* titles;
  const std::vector<std::string>* bodies;
};

Theme theme_for(std::size_t ad_number) {
  if (ad_number <= 10) return {&kGamblingTitles, &kNeutralBodies};
  if (ad_number <= 20) return {&kPoliticsTitles, &kPoliticsBodies};
  if (ad_number <= 28) return {&kAlcoholTitles, &kNeutralBodies};
  if (ad_number <= 36) return {&kEducationTitles, &kNeutralBodies};
  return {&kNeutralTitles, &kNeutralBodies};
}

struct Generator {
  Rng rng;     // session timing stream
  Rng ad_rng;  // ad selection stream, kept separate so preference tweaks
               // cannot perturb the calibrated gap distribution
  std::vector<AdImpression> impressions;
  std::size_t ad_pool = 120;

  // Extra probability mass a user puts on each themed slice of the pool;
  // whatever is left draws uniformly. Varying the mix by demographic gives
  // the rate models real contrasts, and the per-user multipliers keep the
  // weekly counts overdispersed relative to Poisson.
  struct ThemeMix {
    double gambling = 0.0;
    double politics = 0.0;
    double alcohol = 0.0;
    double education = 0.0;
  };
  ThemeMix mix;

  std::string pick_ad() {
    double u = ad_rng.uniform();
    if ((u -= mix.gambling) < 0.0) return pad_id("ad", 1 + ad_rng.below(10));
    if ((u -= mix.politics) < 0.0) return pad_id("ad", 11 + ad_rng.below(10));
    if ((u -= mix.alcohol) < 0.0) return pad_id("ad", 21 + ad_rng.below(8));
    if ((u -= mix.education) < 0.0) return pad_id("ad", 29 + ad_rng.below(8));
    return pad_id("ad", 1 + ad_rng.below(ad_pool));
  }

  AdImpression make_ad(const std::string& user, std::int64_t when,
                       const std::string& source) {
    AdImpression ad;
    ad.user_id = user;
    ad.timestamp = when;
    ad.ad_id = source == "facebook" ? pick_ad()
                                    : pad_id("ig", 1 + ad_rng.below(40));
    ad.source = source;
    std::size_t pool_index = 0;
    std::size_t number = 0;
    for (char c : ad.ad_id) {
      pool_index = pool_index * 31 + static_cast<unsigned char>(c);
      if (c >= '0' && c <= '9') number = number * 10 + (c - '0');
    }
    Theme theme = source == "facebook" ? theme_for(number)
                                       : Theme{&kNeutralTitles,
                                               &kNeutralBodies};
    ad.title = (*theme.titles)[pool_index % theme.titles->size()];
    ad.body = (*theme.bodies)[pool_index % theme.bodies->size()];
    if (pool_index % 3 == 0) {
      ad.image_refs.push_back("images/" + ad.ad_id + ".jpg");
    }
    return ad;
  }

  // weeks x sessions-per-week activity with log-gaps near 2 within
  // sessions and near 8 between them. Sessions stay short (3-4 ads) so the
  // gap mixture is roughly 70% short: the quartiles then straddle both
  // clusters and Silverman's rule yields a bandwidth wide enough to smooth
  // over the 1 s timestamp quantization.
  void emit_user(const std::string& user, int weeks, int sessions_per_week) {
    std::int64_t user_offset = static_cast<std::int64_t>(rng.below(3600));
    for (int w = 0; w < weeks; ++w) {
      std::int64_t t = kBaseTime + w * kWeek + user_offset;
      int sessions = sessions_per_week + static_cast<int>(rng.below(2));
      for (int s = 0; s < sessions; ++s) {
        int ads = 3 + static_cast<int>(rng.below(2));
        for (int k = 0; k < ads; ++k) {
          impressions.push_back(make_ad(user, t, "facebook"));
          double jitter = (rng.uniform() * 2.0 - 1.0) * 0.4;
          t += std::llround(std::exp(2.0 + jitter));
        }
        double jitter = (rng.uniform() * 2.0 - 1.0) * 0.2;
        t += std::llround(std::exp(8.0 + jitter));
      }
    }
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"synthetic fixture generator"};
  std::string out_dir = "data/fixtures";
  std::uint64_t seed = 7;
  app.add_option("--out-dir", out_dir, "directory for generated files");
  app.add_option("--seed", seed, "generator seed");
  CLI11_PARSE(app, argc, argv);

  std::filesystem::create_directories(out_dir);

  const std::vector<std::string>& genders =
      adaudit::attribute_levels(Attribute::kGender);
  const std::vector<std::string>& ages =
      adaudit::evaluation_levels(Attribute::kAge);
  const std::vector<std::string>& incomes =
      adaudit::evaluation_levels(Attribute::kIncome);
  const std::vector<std::string>& educations =
      adaudit::evaluation_levels(Attribute::kEducation);
  const std::vector<std::string>& employments =
      adaudit::evaluation_levels(Attribute::kEmployment);
  const std::vector<std::string>& parties =
      adaudit::evaluation_levels(Attribute::kParty);

  // Full cohort: 20 complete profiles over a reduced level set, plus
  // edge-case users 21-26. Levels are assigned from hand-balanced tables so
  // every dummy level in the regression keeps 4-6 users and no pair of
  // attributes is perfectly confounded.
  {
    const std::vector<std::string> age_subset = {"18-24", "25-34", "35-44",
                                                 "55-64"};
    const std::vector<std::string> income_subset = {
        "$33,800-$41,599", "$65,000-$77,999", "$91,000-$103,999",
        "$156,000 or more"};
    constexpr int kAgePick[20] = {0, 1, 2, 3, 1, 0, 3, 2, 2, 3,
                                  0, 1, 3, 2, 1, 0, 0, 2, 1, 3};
    constexpr int kIncomePick[20] = {0, 1, 2, 3, 2, 3, 0, 1, 1, 0,
                                     3, 2, 3, 1, 2, 0, 2, 0, 3, 1};
    constexpr int kEducationPick[20] = {0, 1, 2, 3, 3, 2, 1, 0, 1, 3,
                                        0, 2, 2, 0, 3, 1, 0, 2, 1, 3};
    constexpr int kEmploymentPick[20] = {0, 1, 2, 3, 4, 4, 3, 2, 1, 0,
                                         2, 0, 4, 1, 3, 1, 4, 0, 3, 2};
    constexpr int kPartyPick[20] = {0, 1, 2, 3, 4, 2, 4, 0, 3, 1,
                                    4, 2, 3, 1, 0, 3, 0, 1, 4, 2};

    Generator generator{Rng{seed}, Rng{seed ^ 0xad5e1ec7ULL}};
    std::map<std::string, DemographicProfile> profiles;
    for (std::size_t i = 0; i < 20; ++i) {
      std::string user = pad_id("u", i + 1);
      profiles[user] = make_profile(
          user,
          {{Attribute::kGender, genders[i % 2]},
           {Attribute::kAge, age_subset[kAgePick[i]]},
           {Attribute::kIncome, income_subset[kIncomePick[i]]},
           {Attribute::kEducation, educations[kEducationPick[i]]},
           {Attribute::kEmployment, employments[kEmploymentPick[i]]},
           {Attribute::kParty, parties[kPartyPick[i]]}});
      // Mixes stay modest so the uniform remainder keeps every category
      // reachable for every user; a level whose users never see a category
      // at all would make its regression coefficient unidentifiable.
      bool male = i % 2 == 0;
      Generator::ThemeMix mix;
      mix.gambling = (male ? 0.12 : 0.02) * (kAgePick[i] <= 1 ? 1.25 : 0.75) *
                     (0.5 + 1.0 * generator.ad_rng.uniform());
      mix.politics = (0.02 + 0.025 * kAgePick[i]) *
                     (0.5 + 1.0 * generator.ad_rng.uniform());
      mix.alcohol = (0.025 + 0.012 * kIncomePick[i]) *
                    (0.5 + 1.0 * generator.ad_rng.uniform());
      mix.education = (kEducationPick[i] <= 1 ? 0.075 : 0.025) *
                      (0.5 + 1.0 * generator.ad_rng.uniform());
      generator.mix = mix;
      generator.emit_user(user, 12, 3);
    }
    generator.mix = Generator::ThemeMix{};

    auto special = [&](std::size_t n, Attribute a, const std::string& value) {
      std::string user = pad_id("u", n);
      profiles[user] = make_profile(
          user, {{Attribute::kGender, "Female"},
                 {Attribute::kAge, "35-44"},
                 {Attribute::kIncome, "$65,000-$77,999"},
                 {Attribute::kEducation, "Bachelor degree level"},
                 {Attribute::kEmployment, "Employed full time"},
                 {Attribute::kParty, "Labor"}});
      profiles[user].levels[static_cast<int>(a)] =
          static_cast<std::int8_t>(adaudit::level_index(a, value));
      return user;
    };

    generator.emit_user(special(21, Attribute::kGender, "Other"), 12, 2);
    generator.emit_user(
        special(22, Attribute::kIncome, std::string(adaudit::kPreferNotToSay)),
        12, 2);
    generator.emit_user(special(23, Attribute::kEmployment, "Retired"), 12, 2);
    std::string u24 =
        special(24, Attribute::kGender, std::string(adaudit::kPreferNotToSay));
    profiles[u24].levels[static_cast<int>(Attribute::kAge)] =
        static_cast<std::int8_t>(adaudit::level_index(
            Attribute::kAge, std::string(adaudit::kPreferNotToSay)));
    generator.emit_user(u24, 12, 2);

    // u0025: 6 impressions, 5 gaps, below the personal-threshold minimum.
    {
      std::string user = special(25, Attribute::kParty, "Greens");
      std::int64_t t = kBaseTime + 86400;
      for (int k = 0; k < 3; ++k) {
        generator.impressions.push_back(generator.make_ad(user, t, "facebook"));
        t += 7;
      }
      t += 3000;
      for (int k = 0; k < 3; ++k) {
        generator.impressions.push_back(generator.make_ad(user, t, "facebook"));
        t += 8;
      }
    }

    // u0026: one long burst whose gaps follow a peaked (triangular)
    // distribution, so the gap density is unimodal and no personal
    // threshold is found.
    {
      std::string user = special(26, Attribute::kParty, "Other");
      std::int64_t t = kBaseTime + 2 * 86400;
      for (int k = 0; k < 30; ++k) {
        generator.impressions.push_back(generator.make_ad(user, t, "facebook"));
        t += 15 + static_cast<std::int64_t>(generator.rng.below(10)) +
             static_cast<std::int64_t>(generator.rng.below(10));
      }
    }

    // Duplicate-timestamp pairs exercise the 1 s gap floor.
    {
      auto first = generator.impressions.front();
      auto clone = generator.make_ad(first.user_id, first.timestamp,
                                     "facebook");
      generator.impressions.push_back(clone);
    }

    // Off-platform rows that the source filter must drop.
    for (int k = 0; k < 30; ++k) {
      std::string user = pad_id("u", 1 + generator.rng.below(26));
      std::int64_t t = kBaseTime + static_cast<std::int64_t>(
                                       generator.rng.below(12 * kWeek));
      generator.impressions.push_back(generator.make_ad(user, t, "instagram"));
    }

    // A row from a user with no survey profile; the cohort join drops it.
    generator.impressions.push_back(
        generator.make_ad("u9999", kBaseTime + 500, "facebook"));

    adaudit::write_impressions_jsonl(
        (std::filesystem::path(out_dir) / "cohort_impressions.jsonl").string(),
        generator.impressions);
    adaudit::write_profiles_csv(
        (std::filesystem::path(out_dir) / "cohort_profiles.csv").string(),
        profiles);
    std::printf("cohort: %zu impressions, %zu profiles\n",
                generator.impressions.size(), profiles.size());
  }

  // Tiny cohort for quick smoke tests.
  {
    Generator generator{Rng{seed ^ 0xabcdefULL}, Rng{seed ^ 0xfedcbaULL}};
    std::map<std::string, DemographicProfile> profiles;
    for (std::size_t i = 0; i < 5; ++i) {
      std::string user = pad_id("t", i + 1);
      profiles[user] = make_profile(
          user, {{Attribute::kGender, genders[i % 2]},
                 {Attribute::kAge, ages[i % ages.size()]},
                 {Attribute::kIncome, incomes[i % incomes.size()]},
                 {Attribute::kEducation, educations[i % educations.size()]},
                 {Attribute::kEmployment,
                  employments[i % employments.size()]},
                 {Attribute::kParty, parties[i % parties.size()]}});
      generator.emit_user(user, 4, 2);
    }
    adaudit::write_impressions_jsonl(
        (std::filesystem::path(out_dir) / "tiny_impressions.jsonl").string(),
        generator.impressions);
    adaudit::write_profiles_csv(
        (std::filesystem::path(out_dir) / "tiny_profiles.csv").string(),
        profiles);
    std::printf("tiny: %zu impressions, %zu profiles\n",
                generator.impressions.size(), profiles.size());
  }

  return 0;
}
