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

#ifndef ADAUDIT_NBR_HPP_
#define ADAUDIT_NBR_HPP_

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "adaudit/audit.hpp"
#include "adaudit/demographics.hpp"

namespace adaudit {

// One active user-week, ready for modeling.
struct PanelRow {
  std::string user_id;
  std::int64_t week = 0;
  int y = 0;         // ads of the audited category seen this week
  int exposure = 0;  // all ads seen this week, >= kActiveMinAds
  std::array<std::int8_t, 6> levels{};
};

// Active cells only. Complete-case: rows are dropped when the user chose
// "Prefer not to say" on any modeled attribute, or "Other" gender when
// gender is modeled, since those levels are not reported as contrasts.
std::vector<PanelRow> build_panel(
    const std::vector<ExposureCell>& cells,
    const std::map<std::string, DemographicProfile>& profiles,
    const std::string& category, const std::vector<Attribute>& modeled);

struct ModelSpec {
  std::vector<Attribute> attributes{kAllAttributes.begin(),
                                    kAllAttributes.end()};
  // Attribute pairs whose products enter the design.
  std::vector<std::pair<Attribute, Attribute>> interactions;
};

struct DesignColumn {
  std::string label;              // "gender=Male", "gender=Male:age=18-24"
  std::string attribute_display;  // "Gender" or "Gender x Age"
  std::string target_display;     // "Male" or "Gender effect in 18-24"
  std::string reference_display;  // "Female" or "Gender effect in 25-34"
  bool is_interaction = false;
};

struct DesignMatrix {
  Eigen::MatrixXd x;       // column 0 is the intercept
  Eigen::VectorXi y;
  Eigen::VectorXd offset;  // ln(exposure)
  std::vector<int> cluster;             // user index per row
  std::vector<std::string> cluster_ids; // user id per cluster index
  std::vector<DesignColumn> columns;    // parallel to x's columns
  // Dummies observed for no row; they are removed from x and listed here.
  std::vector<std::string> dropped_empty_columns;
};

// Dummy coding against each attribute's reference level, levels in survey
// order, "Prefer not to say" never modeled. Interaction products follow
// the main effects.
DesignMatrix design_matrix(const std::vector<PanelRow>& panel,
                           const ModelSpec& spec);

struct FitOptions {
  double tol = 1e-8;      // joint score L2 norm
  int max_outer = 200;
  std::optional<double> fixed_alpha;  // skip dispersion estimation
};

struct FitResult {
  Eigen::VectorXd beta;
  double alpha = 0;  // Var(Y) = mu + alpha * mu^2
  double loglik = 0;
  bool converged = false;
  int iterations = 0;
  int n_obs = 0;
  std::vector<std::string> flags;

  bool flagged(std::string_view name) const;
};

// Log-link count regression with quadratic overdispersion, maximized by
// alternating weighted least squares on beta with Newton steps on alpha.
// The dispersion score at alpha -> 0+ decides the Poisson boundary: when
// it is <= 0 the MLE is alpha = 0 and the fit is flagged
// "alpha_boundary". An all-zero outcome yields "not_estimable"; absurd
// coefficient magnitudes yield "separation_suspected".
FitResult fit_nb2(const Eigen::MatrixXd& x, const Eigen::VectorXi& y,
                  const Eigen::VectorXd& offset, const FitOptions& opt = {});

// Log likelihood at given mean vector and dispersion (alpha = 0 is the
// Poisson limit). Exposed for grid cross-checks.
double nb2_loglik(const Eigen::VectorXd& mu, const Eigen::VectorXi& y,
                  double alpha);

// Score of beta: sum (y-mu)/(1+alpha*mu) * x.
Eigen::VectorXd nb2_score_beta(const Eigen::MatrixXd& x,
                               const Eigen::VectorXi& y,
                               const Eigen::VectorXd& mu, double alpha);

// Score of alpha, using finite-sum digamma differences (integer y).
double nb2_score_alpha(const Eigen::VectorXd& mu, const Eigen::VectorXi& y,
                       double alpha);

// CR0 sandwich A^-1 B A^-1 with per-cluster score sums; A is the observed
// information. One-observation clusters reproduce HC0 exactly. Throws
// std::invalid_argument with fewer than two distinct clusters.
Eigen::MatrixXd cluster_robust_cov(const Eigen::MatrixXd& x,
                                   const Eigen::VectorXi& y,
                                   const Eigen::VectorXd& offset,
                                   const Eigen::VectorXd& beta, double alpha,
                                   const std::vector<int>& cluster);

struct IrrRow {
  std::string attribute;
  std::string target;
  std::string reference;
  double beta = 0;
  double se = 0;
  double irr = 1;
  double ci_low = 1;
  double ci_high = 1;
  double p = 1;
};

// One row per non-intercept column: IRR = exp(beta), normal-theory 95%
// interval exp(beta -/+ 1.96 se), two-sided p from the Wald z statistic.
// Rows come back sorted by ascending p (ties keep design order).
std::vector<IrrRow> irr_table(const Eigen::VectorXd& beta,
                              const Eigen::MatrixXd& cov,
                              const std::vector<DesignColumn>& columns);

// Multiplies an interaction rate ratio into the conditional effect it
// modifies, giving the effect implied inside the modifier's bracket.
double implied_irr(double interaction_ratio, double conditional_irr);

// Keeps candidate pairs whose both parents already show at least one level
// with p below the threshold among the main-effect rows.
std::vector<std::pair<Attribute, Attribute>> screen_interactions(
    const std::vector<IrrRow>& main_effect_rows,
    const std::vector<std::pair<Attribute, Attribute>>& candidates,
    double p_threshold = 0.10);

void write_irr_csv(const std::string& path, const std::vector<IrrRow>& rows);

}  // namespace adaudit

#endif  // ADAUDIT_NBR_HPP_
