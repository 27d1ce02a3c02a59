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

#ifndef ADAUDIT_TESTS_SUPPORT_SYNTHETIC_HPP_
#define ADAUDIT_TESTS_SUPPORT_SYNTHETIC_HPP_

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "adaudit/demographics.hpp"
#include "adaudit/ingest.hpp"

namespace adaudit::testing {

// Unique scratch directory under the system temp root, removed with its
// contents when the object goes out of scope.
class TempDir {
 public:
  explicit TempDir(const std::string& tag);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  // Joined path as a string; empty argument returns the root.
  std::string file(const std::string& relative = {}) const;

 private:
  std::filesystem::path path_;
};

DemographicProfile make_profile(
    const std::string& user_id, const std::string& gender = "Female",
    const std::string& age = "25-34",
    const std::string& income = "$156,000 or more",
    const std::string& education = "Bachelor degree level",
    const std::string& employment = "Employed full time",
    const std::string& party = "None");

AdImpression make_impression(const std::string& user_id,
                             std::int64_t timestamp, const std::string& ad_id,
                             const std::string& source = "facebook",
                             const std::string& title = "Plain headline",
                             const std::string& body = "Plain body text.");

// Per-user timestamp sequences whose log-gaps cluster around two modes:
// bursts of `ads` impressions spaced exp(N(short_mu, short_sd)) seconds
// apart, bursts separated by exp(N(long_mu, long_sd)) seconds.
struct BimodalGapSpec {
  int users = 30;
  int sessions = 12;
  int ads = 6;
  double short_mu = 2.0;
  double short_sd = 0.35;
  double long_mu = 8.0;
  double long_sd = 0.25;
};

std::vector<std::vector<std::int64_t>> bimodal_timestamps(
    const BimodalGapSpec& spec, std::uint64_t seed);

// Reference splitter: walks the non-decreasing timestamps and starts a new
// group whenever the gap strictly exceeds theta. Deliberately naive.
std::vector<std::vector<std::int64_t>> split_by_gap(
    const std::vector<std::int64_t>& timestamps, double theta);

// Textbook Poisson IRLS with log link and offset: working response
// z = eta - offset + (y - mu)/mu, weights mu, normal equations by LDLT.
// Shares no code with the production fitter.
Eigen::VectorXd poisson_irls_reference(const Eigen::MatrixXd& x,
                                       const Eigen::VectorXi& y,
                                       const Eigen::VectorXd& offset,
                                       int max_iter = 100, double tol = 1e-12);

// HC0 covariance from explicit per-observation loops: A is the observed
// information of the quadratic-variance count likelihood, B sums one score
// outer product per row. Never looks at cluster labels.
Eigen::MatrixXd hc0_reference(const Eigen::MatrixXd& x,
                              const Eigen::VectorXi& y,
                              const Eigen::VectorXd& offset,
                              const Eigen::VectorXd& beta, double alpha);

// Two-arm weekly panel for coverage experiments. Even-numbered users form
// the reference arm; odd-numbered users see `ratio` times the reference
// rate. A per-user gamma multiplier with mean 1 and variance `alpha` is
// shared across the user's weeks, inducing the quadratic marginal variance
// mu + alpha * mu^2 together with within-user correlation. alpha = 0
// disables the multiplier, leaving independent Poisson rows.
struct PanelDraw {
  Eigen::MatrixXd x;  // intercept + treatment dummy
  Eigen::VectorXi y;
  Eigen::VectorXd offset;
  std::vector<int> cluster;
};

PanelDraw draw_frailty_panel(int users, int weeks, double base_rate,
                             double ratio, double alpha, std::uint64_t seed);

// Raw-scan audit oracle. Rebuilds per user-week counters directly from the
// impression list with integer accumulators and performs one final
// division, mirroring the production arithmetic without sharing its cell
// structures. Row universe and order match audit_report.
struct OracleAuditRow {
  std::string attribute;
  std::string level;
  std::string category;
  double coverage = 0;
  double avg_intensity = 0;
  std::int64_t n_active_user_weeks = 0;
  bool no_data = false;
};

std::vector<OracleAuditRow> audit_oracle(
    const std::vector<AdImpression>& impressions,
    const std::map<std::string, DemographicProfile>& profiles,
    const std::map<std::string, std::vector<std::string>>& ad_categories,
    std::int64_t epoch, const std::vector<std::string>& target_categories);

}  // namespace adaudit::testing

#endif  // ADAUDIT_TESTS_SUPPORT_SYNTHETIC_HPP_
