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

#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "adaudit/util.hpp"
#include "doctest.h"
#include "support/synthetic.hpp"

using namespace adaudit;
using adaudit::testing::TempDir;
using adaudit::testing::make_impression;
using adaudit::testing::make_profile;
using doctest::Contains;

namespace {

const char* kValidReply =
    R"({"caption":"A plain ad","descriptive_category":["promo"],)"
    R"("iab_category_tier_1":["Retail"],)"
    R"("key_entities_in_images_and_slogan":["Coles"]})";

IabTaxonomy small_taxonomy() {
  return IabTaxonomy::from_entries(
      {"Retail", "Travel", "Health and Medical Services", "Real Estate"});
}

// Replays a fixed list of responses and records every prompt it saw.
class ScriptedBackend : public LlmBackend {
 public:
  explicit ScriptedBackend(std::vector<std::string> replies)
      : replies_(std::move(replies)) {}
  std::string name() const override { return "stub"; }
  std::string complete(const BackendRequest& request) override {
    prompts.push_back(request.prompt);
    if (next_ >= replies_.size()) {
      throw std::out_of_range("scripted backend exhausted");
    }
    return replies_[next_++];
  }
  std::vector<std::string> prompts;

 private:
  std::vector<std::string> replies_;
  std::size_t next_ = 0;
};

const std::string kTemplate =
    "Title: {title}\nBody: {upper_texts_str}\nImages: {images}\n";

}  // namespace

TEST_CASE("taxonomy loads from disk, skipping comments") {
  IabTaxonomy shipped = IabTaxonomy::load(
      std::string(ADAUDIT_DATA_DIR) + "/iab_taxonomy.txt");
  CHECK(shipped.size() >= 20);
  CHECK(shipped.match("gambling") == std::string("Gambling"));

  TempDir dir("taxonomy");
  write_text_file(dir.file("t.txt"),
                  "# comment\n\nRetail\n  Travel  \n# another\nGambling\n");
  IabTaxonomy t = IabTaxonomy::load(dir.file("t.txt"));
  REQUIRE(t.size() == 3);
  CHECK(t.entries()[0] == "Retail");
  CHECK(t.entries()[1] == "Travel");
  CHECK(t.entries()[2] == "Gambling");

  CHECK_THROWS_AS(IabTaxonomy::from_entries({}), SchemaError);
  CHECK_THROWS_AS(IabTaxonomy::from_entries({"Retail", "retail"}),
                  SchemaError);
}

TEST_CASE("taxonomy matching is exact first, then unique prefix") {
  IabTaxonomy t = small_taxonomy();
  CHECK(t.match("Retail") == std::string("Retail"));
  CHECK(t.match("retail") == std::string("Retail"));
  CHECK(t.match("  RETAIL ") == std::string("Retail"));
  // Needle extends an entry.
  CHECK(t.match("Retailing") == std::string("Retail"));
  // Needle is a prefix of exactly one entry.
  CHECK(t.match("Health") == std::string("Health and Medical Services"));
  CHECK(t.match("Travel and Tourism") == std::string("Travel"));
  // "Re" prefixes both Retail and Real Estate.
  CHECK_FALSE(t.match("Re").has_value());
  CHECK_FALSE(t.match("Quantum Chromodynamics").has_value());
  CHECK_FALSE(t.match("").has_value());
  CHECK_FALSE(t.match("   ").has_value());
}

TEST_CASE("feature prompts substitute creative fields") {
  AdImpression ad = make_impression("u01", 1000, "ad1", "facebook",
                                    "Big Sale", "Everything half price");

  SUBCASE("all placeholders are filled") {
    std::string prompt = render_feature_prompt(ad, kTemplate);
    CHECK(prompt ==
          "Title: Big Sale\nBody: Everything half price\n"
          "Images: (no images attached)\n");
  }

  SUBCASE("image references are joined") {
    ad.image_refs = {"img/a.png", "img/b.png"};
    std::string prompt = render_feature_prompt(ad, kTemplate);
    CHECK(prompt.find("Images: img/a.png, img/b.png") != std::string::npos);
  }

  SUBCASE("a template without the title slot is rejected") {
    CHECK_THROWS_WITH_AS(
        render_feature_prompt(ad, "Body: {upper_texts_str}\n"),
        Contains("{title}"), ValidationError);
  }

  SUBCASE("leftover placeholders are rejected") {
    CHECK_THROWS_WITH_AS(
        render_feature_prompt(
            ad, kTemplate + "Extra: {unknown_placeholder}\n"),
        Contains("unknown_placeholder"), ValidationError);
  }

  SUBCASE("JSON braces in the template are not placeholders") {
    std::string with_example =
        "Reply like {\"caption\": \"...\"}.\n" + kTemplate;
    CHECK_NOTHROW(render_feature_prompt(ad, with_example));
  }
}

TEST_CASE("feature validation cleans lists and rejects junk") {
  IabTaxonomy t = small_taxonomy();

  SUBCASE("well-formed output is normalized") {
    AdFeatures f = validate_features(
        R"({"caption":"  A   caption ",)"
        R"("descriptive_category":["promo","promo"," "],)"
        R"("iab_category_tier_1":["retail","Floristry","RETAIL","Travel"],)"
        R"("key_entities_in_images_and_slogan":["Coles","Coles","JOIN NOW"]})",
        t, "ad1");
    CHECK(f.ad_id == "ad1");
    CHECK(f.caption == "A caption");
    CHECK(f.descriptive_categories == std::vector<std::string>{"promo"});
    // Unmappable entries drop; mappable ones canonicalize and dedupe.
    CHECK(f.iab_categories ==
          std::vector<std::string>{"Retail", "Travel"});
    CHECK(f.key_entities ==
          std::vector<std::string>{"Coles", "JOIN NOW"});
  }

  SUBCASE("alternate field spellings are accepted") {
    AdFeatures f = validate_features(
        R"({"caption":"c","iab_categories":"Travel",)"
        R"("key_entities":["X"]})",
        t, "ad2");
    CHECK(f.iab_categories == std::vector<std::string>{"Travel"});
    CHECK(f.key_entities == std::vector<std::string>{"X"});
  }

  SUBCASE("violations raise descriptive errors") {
    CHECK_THROWS_WITH_AS(validate_features("not json", t, "ad1"),
                         Contains("not JSON"), ValidationError);
    CHECK_THROWS_WITH_AS(validate_features("[1,2]", t, "ad1"),
                         Contains("not a JSON object"), ValidationError);
    CHECK_THROWS_WITH_AS(
        validate_features(R"({"caption":"   "})", t, "ad1"),
        Contains("empty caption"), ValidationError);
    CHECK_THROWS_WITH_AS(
        validate_features(
            R"({"caption":"c","iab_category_tier_1":["Floristry"],)"
            R"("key_entities":["X"]})",
            t, "ad1"),
        Contains("no category maps"), ValidationError);
    CHECK_THROWS_WITH_AS(
        validate_features(
            R"({"caption":"c","iab_category_tier_1":["Retail"]})", t, "ad1"),
        Contains("empty key entities"), ValidationError);
  }
}

TEST_CASE("extraction re-asks once after a rejected answer") {
  IabTaxonomy t = small_taxonomy();
  AdImpression ad = make_impression("u01", 1000, "ad1");
  SamplingSettings settings;

  SUBCASE("second answer can rescue the call") {
    TempDir dir("rescue");
    auto script = std::make_shared<ScriptedBackend>(
        std::vector<std::string>{"garbage", kValidReply});
    LlmClient client(script, dir.file("cache"));
    AdFeatures f = extract_features(ad, t, client, kTemplate, settings);
    CHECK(f.caption == "A plain ad");
    REQUIRE(script->prompts.size() == 2);
    CHECK(script->prompts[1].find("previous answer was rejected") !=
          std::string::npos);
    CHECK(script->prompts[1].find(script->prompts[0]) != std::string::npos);
  }

  SUBCASE("two rejected answers propagate the validation error") {
    TempDir dir("fail");
    auto script = std::make_shared<ScriptedBackend>(
        std::vector<std::string>{"garbage", "more garbage"});
    LlmClient client(script, dir.file("cache"));
    CHECK_THROWS_AS(extract_features(ad, t, client, kTemplate, settings),
                    ValidationError);
    CHECK(script->prompts.size() == 2);
  }
}

TEST_CASE("corpus extraction is per-ad, cached, and jobs-independent") {
  IabTaxonomy t = small_taxonomy();
  SamplingSettings settings;

  std::vector<AdImpression> impressions = {
      make_impression("u01", 1000, "ad1", "facebook", "First ad", "Body 1"),
      make_impression("u02", 1100, "ad1", "facebook", "First ad", "Body 1"),
      make_impression("u01", 1200, "ad2", "facebook", "Twin ad", "Same copy"),
      make_impression("u02", 1300, "ad3", "facebook", "Twin ad", "Same copy"),
  };

  auto subjects =
      std::make_shared<std::map<std::string, DemographicProfile>>();
  (*subjects)["u01"] = make_profile("u01");
  auto backend = std::make_shared<MockBackend>(11, MockBias{}, subjects,
                                               t.entries());

  TempDir serial_dir("corpus1");
  LlmClient serial(backend, serial_dir.file("cache"));
  auto features =
      extract_corpus(impressions, t, serial, kTemplate, settings, 1);
  REQUIRE(features.size() == 3);
  CHECK(features.count("ad1") == 1);
  CHECK(features.count("ad2") == 1);
  CHECK(features.count("ad3") == 1);

  // ad2 and ad3 share creative text, so one of them is a pure cache hit.
  CallStats stats = serial.stats();
  CHECK(stats.requests == 3);
  CHECK(stats.cache_hits == 1);
  CHECK(stats.backend_calls == 2);

  SUBCASE("identical creatives get identical features") {
    CHECK(features.at("ad2").caption == features.at("ad3").caption);
    CHECK(features.at("ad2").iab_categories ==
          features.at("ad3").iab_categories);
    CHECK(features.at("ad2").key_entities == features.at("ad3").key_entities);
  }

  SUBCASE("parallel extraction matches the serial result byte for byte") {
    TempDir parallel_dir("corpus4");
    LlmClient parallel(backend, parallel_dir.file("cache"));
    auto features4 =
        extract_corpus(impressions, t, parallel, kTemplate, settings, 4);
    TempDir out("compare");
    write_features_jsonl(out.file("serial.jsonl"), features);
    write_features_jsonl(out.file("parallel.jsonl"), features4);
    CHECK(read_text_file(out.file("serial.jsonl")) ==
          read_text_file(out.file("parallel.jsonl")));
  }
}

TEST_CASE("features round trip through jsonl") {
  IabTaxonomy t = small_taxonomy();
  std::map<std::string, AdFeatures> features;
  AdFeatures f;
  f.ad_id = "ad1";
  f.caption = "A caption";
  f.descriptive_categories = {"promo"};
  f.iab_categories = {"Retail", "Travel"};
  f.key_entities = {"Coles"};
  features["ad1"] = f;

  TempDir dir("roundtrip");
  write_features_jsonl(dir.file("features.jsonl"), features);
  auto back = read_features_jsonl(dir.file("features.jsonl"), t);
  REQUIRE(back.size() == 1);
  CHECK(back.at("ad1").caption == "A caption");
  CHECK(back.at("ad1").iab_categories == f.iab_categories);
  CHECK(back.at("ad1").key_entities == f.key_entities);

  SUBCASE("duplicate rows are rejected") {
    std::string one = read_text_file(dir.file("features.jsonl"));
    write_text_file(dir.file("dup.jsonl"), one + one);
    CHECK_THROWS_AS(read_features_jsonl(dir.file("dup.jsonl"), t),
                    SchemaError);
  }
}
