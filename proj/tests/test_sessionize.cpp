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

#include "adaudit/sessionize.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "adaudit/util.hpp"
#include "doctest.h"
#include "support/synthetic.hpp"

using namespace adaudit;
using adaudit::testing::TempDir;
using adaudit::testing::bimodal_timestamps;
using adaudit::testing::make_impression;
using adaudit::testing::make_profile;
using adaudit::testing::split_by_gap;

namespace {

// Two tight spikes in log-gap space, far enough apart that any reasonable
// bandwidth resolves both modes.
std::vector<double> spiky_bimodal_deltas() {
  std::vector<double> deltas;
  for (int i = 0; i < 30; ++i) {
    deltas.push_back(2.0 + 0.05 * (i % 5 - 2));
    deltas.push_back(8.0 + 0.05 * (i % 5 - 2));
  }
  return deltas;
}

CohortDataset two_user_cohort(std::uint64_t seed) {
  testing::BimodalGapSpec spec;
  spec.users = 2;
  spec.sessions = 6;
  spec.ads = 5;
  auto per_user = bimodal_timestamps(spec, seed);

  std::vector<AdImpression> impressions;
  std::map<std::string, DemographicProfile> profiles;
  for (std::size_t u = 0; u < per_user.size(); ++u) {
    std::string user = "u0" + std::to_string(u + 1);
    profiles[user] = make_profile(user);
    for (std::size_t i = 0; i < per_user[u].size(); ++i) {
      impressions.push_back(make_impression(
          user, per_user[u][i], "ad" + std::to_string(i % 7)));
    }
  }
  return make_cohort(std::move(impressions), std::move(profiles));
}

}  // namespace

TEST_CASE("compute_gaps takes logs of clamped gaps") {
  std::vector<std::int64_t> ts = {100, 101, 101, 108};
  auto gaps = compute_gaps(ts);
  REQUIRE(gaps.size() == 3);
  CHECK(gaps[0] == std::log(1.0));
  CHECK(gaps[1] == std::log(1.0));  // zero gap clamps to the 1 s floor
  CHECK(gaps[2] == std::log(7.0));

  CHECK(compute_gaps({42}).empty());
  CHECK(compute_gaps({}).empty());
  CHECK_THROWS_AS(compute_gaps({10, 5}), std::invalid_argument);
}

TEST_CASE("silverman bandwidth follows the documented rule") {
  std::vector<double> deltas = {1.0, 2.0, 3.0, 4.0, 5.0};
  double sd = std::sqrt(2.5);
  double iqr = 4.0 - 2.0;  // linear-interpolated quartiles at rank (n-1)p
  double expected =
      0.9 * std::min(sd, iqr / 1.34) * std::pow(5.0, -0.2);
  CHECK(silverman_bandwidth(deltas) == doctest::Approx(expected).epsilon(1e-12));

  CHECK(silverman_bandwidth({3.0, 3.0, 3.0}) == 0.0);
  CHECK(silverman_bandwidth({1.0}) == 0.0);
}

TEST_CASE("kde_curve spans the padded range and integrates to one") {
  auto deltas = spiky_bimodal_deltas();
  double h = 0.3;
  auto curve = kde_curve(deltas, h, 512, 3.0);
  REQUIRE(curve.grid.size() == 512);
  REQUIRE(curve.density.size() == 512);
  double lo = *std::min_element(deltas.begin(), deltas.end()) - 3.0 * h;
  double hi = *std::max_element(deltas.begin(), deltas.end()) + 3.0 * h;
  CHECK(curve.grid.front() == doctest::Approx(lo).epsilon(1e-12));
  CHECK(curve.grid.back() == doctest::Approx(hi).epsilon(1e-12));

  double step = curve.grid[1] - curve.grid[0];
  double mass = 0.0;
  for (std::size_t i = 1; i < curve.density.size(); ++i) {
    mass += 0.5 * (curve.density[i - 1] + curve.density[i]) * step;
  }
  CHECK(mass == doctest::Approx(1.0).epsilon(1e-3));
}

TEST_CASE("kde_threshold returns the midpoint between the two modes") {
  SessionizerConfig config;
  config.fixed_bandwidth = 0.3;
  auto detail = kde_threshold(spiky_bimodal_deltas(), config);
  REQUIRE(detail.has_value());
  CHECK(detail->short_gap_mode < detail->long_gap_mode);
  CHECK(detail->short_gap_mode == doctest::Approx(2.0).epsilon(0.05));
  CHECK(detail->long_gap_mode == doctest::Approx(8.0).epsilon(0.05));
  // The threshold is exactly exp of the mode midpoint.
  CHECK(detail->theta ==
        std::exp(0.5 * (detail->short_gap_mode + detail->long_gap_mode)));

  SUBCASE("too-small samples yield nothing") {
    auto all = spiky_bimodal_deltas();
    std::vector<double> small(all.begin(), all.begin() + 9);
    CHECK_FALSE(kde_threshold(small, config).has_value());
  }

  SUBCASE("unimodal samples yield nothing") {
    std::vector<double> unimodal;
    for (int i = 0; i < 40; ++i) unimodal.push_back(5.0 + 0.01 * (i % 7));
    CHECK_FALSE(kde_threshold(unimodal, config).has_value());
  }

  SUBCASE("degenerate samples yield nothing") {
    SessionizerConfig silverman;  // zero spread gives zero bandwidth
    std::vector<double> flat(20, 4.0);
    CHECK_FALSE(kde_threshold(flat, silverman).has_value());
  }
}

TEST_CASE("global_threshold averages per-user thresholds") {
  CHECK(global_threshold({100.0, 200.0}) == 150.0);
  CHECK(global_threshold({389.0}) == 389.0);
  CHECK_THROWS_AS(global_threshold({}), std::invalid_argument);
}

TEST_CASE("segment splits on strictly greater gaps only") {
  using Ranges = std::vector<std::pair<std::size_t, std::size_t>>;
  // A gap equal to theta stays within the session.
  CHECK(segment({0, 100, 200}, 100.0) == Ranges{{0, 3}});
  CHECK(segment({0, 100, 201}, 100.0) == Ranges{{0, 2}, {2, 3}});
  CHECK(segment({0, 101}, 100.0) == Ranges{{0, 1}, {1, 2}});
  CHECK(segment({7}, 100.0) == Ranges{{0, 1}});
  CHECK(segment({}, 100.0).empty());
}

TEST_CASE("segment agrees with the naive splitter on rough data") {
  testing::BimodalGapSpec spec;
  spec.users = 4;
  auto per_user = bimodal_timestamps(spec, 99);
  for (const auto& ts : per_user) {
    for (double theta : {10.0, 148.4, 5000.0}) {
      auto ranges = segment(ts, theta);
      auto expected = split_by_gap(ts, theta);
      REQUIRE(ranges.size() == expected.size());
      for (std::size_t g = 0; g < ranges.size(); ++g) {
        REQUIRE(ranges[g].second - ranges[g].first == expected[g].size());
        for (std::size_t k = 0; k < expected[g].size(); ++k) {
          CHECK(ts[ranges[g].first + k] == expected[g][k]);
        }
      }
    }
  }
}

TEST_CASE("apply_filters drops short, long, and under-sessioned users") {
  SessionizerConfig config;
  config.min_session_len = 3;
  config.max_session_len = 50;
  config.min_sessions_per_user = 2;

  auto make_session = [](const std::string& user, int number, int length) {
    Session s;
    s.session_id = user + "-s" + std::to_string(number);
    s.user_id = user;
    for (int i = 0; i < length; ++i) {
      s.impressions.push_back(make_impression(user, 100 + i, "ad1"));
    }
    return s;
  };

  std::vector<Session> sessions = {
      make_session("a", 1, 2),   // dropped: short
      make_session("a", 2, 3),   // kept
      make_session("a", 3, 50),  // kept
      make_session("b", 1, 51),  // dropped: long
      make_session("b", 2, 3),   // user b then has one session: dropped
  };

  FilterCounts counts;
  auto kept = apply_filters(sessions, config, &counts);
  REQUIRE(kept.size() == 2);
  CHECK(kept[0].session_id == "a-s2");
  CHECK(kept[1].session_id == "a-s3");
  CHECK(counts.sessions_total == 5);
  CHECK(counts.sessions_dropped_short == 1);
  CHECK(counts.sessions_dropped_long == 1);
  CHECK(counts.users_total == 2);
  CHECK(counts.users_dropped_few_sessions == 1);
  CHECK(counts.sessions_dropped_with_user == 1);
  CHECK(counts.sessions_kept == 2);
  CHECK(counts.users_kept == 1);
}

TEST_CASE("sessionize_cohort ids, fallback, and jobs independence") {
  auto cohort = two_user_cohort(7);
  SessionizerConfig config;

  auto result = sessionize_cohort(cohort, config);
  CHECK_FALSE(result.used_fallback);
  CHECK(result.theta_global > 0.0);
  REQUIRE_FALSE(result.sessions.empty());
  // Ids are assigned before filtering, in chronological order per user.
  CHECK(result.sessions.front().session_id == "u01-s0001");
  for (const Session& s : result.sessions) {
    CHECK(s.impressions.size() >= 3);
    CHECK(s.impressions.size() <= 50);
  }

  SUBCASE("parallel run matches the serial one") {
    auto parallel = sessionize_cohort(cohort, config, 4);
    REQUIRE(parallel.sessions.size() == result.sessions.size());
    CHECK(parallel.theta_global == result.theta_global);
    for (std::size_t i = 0; i < result.sessions.size(); ++i) {
      CHECK(parallel.sessions[i].session_id == result.sessions[i].session_id);
      CHECK(parallel.sessions[i].impressions.size() ==
            result.sessions[i].impressions.size());
    }
  }

  SUBCASE("per-user report covers every cohort user") {
    REQUIRE(result.report.size() == 2);
    CHECK(result.report[0].user_id == "u01");
    CHECK(result.report[0].theta_user.has_value());
    CHECK(result.report[0].n_sessions_post_filter > 0);
  }

  SUBCASE("tiny cohorts fall back to the configured threshold") {
    std::vector<AdImpression> impressions;
    std::map<std::string, DemographicProfile> profiles;
    profiles["u01"] = make_profile("u01");
    for (int i = 0; i < 5; ++i) {
      impressions.push_back(make_impression("u01", 1000 + 10 * i, "ad1"));
    }
    auto tiny = make_cohort(std::move(impressions), std::move(profiles));
    auto fallback = sessionize_cohort(tiny, config);
    CHECK(fallback.used_fallback);
    CHECK(fallback.theta_global == config.fallback_theta_seconds);
  }
}

TEST_CASE("sessions round trip through jsonl") {
  auto cohort = two_user_cohort(11);
  SessionizerConfig config;
  auto result = sessionize_cohort(cohort, config);
  REQUIRE_FALSE(result.sessions.empty());

  TempDir dir("sessions");
  write_sessions_jsonl(dir.file("sessions.jsonl"), result.sessions);
  auto back = read_sessions_jsonl(dir.file("sessions.jsonl"), cohort);
  REQUIRE(back.size() == result.sessions.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].session_id == result.sessions[i].session_id);
    CHECK(back[i].user_id == result.sessions[i].user_id);
    REQUIRE(back[i].impressions.size() ==
            result.sessions[i].impressions.size());
    for (std::size_t k = 0; k < back[i].impressions.size(); ++k) {
      CHECK(back[i].impressions[k].ad_id ==
            result.sessions[i].impressions[k].ad_id);
      CHECK(back[i].impressions[k].timestamp ==
            result.sessions[i].impressions[k].timestamp);
    }
  }

  write_session_report_csv(dir.file("report.csv"), result.report);
  std::string report = read_text_file(dir.file("report.csv"));
  CHECK(report.find("user_id,n_impressions,n_gaps,theta_user") == 0);
  CHECK(report.find("u01,") != std::string::npos);
}
