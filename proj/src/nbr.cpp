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

#include "adaudit/nbr.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include "adaudit/csv.hpp"
#include "adaudit/util.hpp"

namespace adaudit {

namespace {

constexpr double kSeparationBeta = 20.0;
constexpr double kMinAlpha = 1e-10;
// Below this, alpha * mu is lost in double rounding for any realistic mean,
// so the fit is numerically Poisson and collapses to the boundary.
constexpr double kBoundaryAlpha = 1e-8;

// Digamma difference psi(y+r) - psi(r) = sum_{k=0}^{y-1} 1/(k+r); valid
// because outcomes are integer counts. Avoids special functions entirely.
double digamma_diff(int y, double r) {
  double s = 0.0;
  for (int k = 0; k < y; ++k) s += 1.0 / (static_cast<double>(k) + r);
  return s;
}

// Trigamma difference psi'(y+r) - psi'(r) = -sum_{k=0}^{y-1} 1/(k+r)^2.
double trigamma_diff(int y, double r) {
  double s = 0.0;
  for (int k = 0; k < y; ++k) {
    double t = static_cast<double>(k) + r;
    s += 1.0 / (t * t);
  }
  return -s;
}

// ln Gamma(y+r) - ln Gamma(r) as a finite sum of logs; exact for integer y.
double lgamma_diff(int y, double r) {
  double s = 0.0;
  for (int k = 0; k < y; ++k) s += std::log(static_cast<double>(k) + r);
  return s;
}

Eigen::VectorXd mean_vector(const Eigen::MatrixXd& x,
                            const Eigen::VectorXd& beta,
                            const Eigen::VectorXd& offset) {
  Eigen::VectorXd eta = x * beta + offset;
  // exp() would overflow past ~709; linear predictors that large mean the
  // fit is diverging and will be flagged, but keep arithmetic finite.
  for (int i = 0; i < eta.size(); ++i) {
    eta(i) = std::clamp(eta(i), -300.0, 300.0);
  }
  return eta.array().exp();
}

// One weighted-least-squares pass for beta at fixed dispersion.
Eigen::VectorXd irls_step(const Eigen::MatrixXd& x, const Eigen::VectorXi& y,
                          const Eigen::VectorXd& offset,
                          const Eigen::VectorXd& beta, double alpha) {
  Eigen::VectorXd mu = mean_vector(x, beta, offset);
  Eigen::VectorXd eta = x * beta;  // offset-free part
  const int n = static_cast<int>(x.rows());
  Eigen::VectorXd w(n), z(n);
  for (int i = 0; i < n; ++i) {
    double m = mu(i);
    w(i) = m / (1.0 + alpha * m);
    z(i) = eta(i) + (static_cast<double>(y(i)) - m) / m;
  }
  Eigen::MatrixXd xtwx =
      x.transpose() * w.asDiagonal() * x;
  Eigen::VectorXd xtwz = x.transpose() * (w.array() * z.array()).matrix();
  return xtwx.ldlt().solve(xtwz);
}

Eigen::VectorXd fit_beta_irls(const Eigen::MatrixXd& x,
                              const Eigen::VectorXi& y,
                              const Eigen::VectorXd& offset, double alpha,
                              Eigen::VectorXd beta, int max_iter,
                              double tol) {
  // Damped Fisher scoring. The log-likelihood is concave in beta under the
  // log link, so a halved step always finds an ascent point; undamped
  // scoring oscillates on designs with sparse dummy levels.
  double ll = nb2_loglik(mean_vector(x, beta, offset), y, alpha);
  for (int it = 0; it < max_iter; ++it) {
    Eigen::VectorXd dir = irls_step(x, y, offset, beta, alpha) - beta;
    double delta = dir.cwiseAbs().maxCoeff();
    double t = 1.0;
    bool accepted = false;
    for (int half = 0; half < 40; ++half) {
      Eigen::VectorXd cand = beta + t * dir;
      double ll_new = nb2_loglik(mean_vector(x, cand, offset), y, alpha);
      if (std::isfinite(ll_new) && ll_new >= ll - 1e-12) {
        beta = std::move(cand);
        ll = ll_new;
        accepted = true;
        delta *= t;
        break;
      }
      t *= 0.5;
    }
    if (!accepted || delta < tol) break;
  }
  return beta;
}

// d log L / d r and d^2 log L / d r^2 in the r = 1/alpha parametrization.
void score_hessian_r(const Eigen::VectorXd& mu, const Eigen::VectorXi& y,
                     double r, double& g_r, double& h_r) {
  g_r = 0.0;
  h_r = 0.0;
  for (int i = 0; i < mu.size(); ++i) {
    double m = mu(i);
    int yi = y(i);
    g_r += digamma_diff(yi, r) + std::log(r / (r + m)) +
           (m - static_cast<double>(yi)) / (r + m);
    h_r += trigamma_diff(yi, r) + 1.0 / r - 1.0 / (r + m) -
           (m - static_cast<double>(yi)) / ((r + m) * (r + m));
  }
}

// Overdispersion score in the alpha -> 0+ limit (Poisson boundary test).
double boundary_score(const Eigen::VectorXd& mu, const Eigen::VectorXi& y) {
  double s = 0.0;
  for (int i = 0; i < mu.size(); ++i) {
    double resid = static_cast<double>(y(i)) - mu(i);
    s += resid * resid - static_cast<double>(y(i));
  }
  return 0.5 * s;
}

}  // namespace

std::vector<PanelRow> build_panel(
    const std::vector<ExposureCell>& cells,
    const std::map<std::string, DemographicProfile>& profiles,
    const std::string& category, const std::vector<Attribute>& modeled) {
  std::vector<PanelRow> panel;
  for (const ExposureCell& cell : cells) {
    if (!cell.active()) continue;
    auto pit = profiles.find(cell.user_id);
    if (pit == profiles.end()) {
      throw SchemaError("no profile for user '" + cell.user_id + "'");
    }
    const DemographicProfile& p = pit->second;
    bool droppable = false;
    for (Attribute a : modeled) {
      if (p.is_prefer_not_to_say(a) ||
          (a == Attribute::kGender && p.level(a) == "Other")) {
        droppable = true;
        break;
      }
    }
    if (droppable) continue;

    PanelRow row;
    row.user_id = cell.user_id;
    row.week = cell.week;
    auto cit = cell.category_counts.find(category);
    row.y = cit == cell.category_counts.end() ? 0 : cit->second;
    row.exposure = cell.total_ads;
    row.levels = p.levels;
    panel.push_back(std::move(row));
  }
  return panel;
}

DesignMatrix design_matrix(const std::vector<PanelRow>& panel,
                           const ModelSpec& spec) {
  if (panel.empty()) throw std::invalid_argument("empty panel");

  struct Dummy {
    Attribute attr;
    int level_idx;
    std::string level;
  };
  std::vector<Dummy> dummies;
  for (Attribute a : spec.attributes) {
    const auto& levels = attribute_levels(a);
    const std::string& ref = reference_level(a);
    for (std::size_t li = 0; li < levels.size(); ++li) {
      if (levels[li] == ref || levels[li] == kPreferNotToSay) continue;
      if (a == Attribute::kGender && levels[li] == "Other") continue;
      dummies.push_back({a, static_cast<int>(li), levels[li]});
    }
  }

  auto dummy_value = [](const PanelRow& row, const Dummy& d) -> double {
    return row.levels[static_cast<std::size_t>(d.attr)] == d.level_idx ? 1.0
                                                                       : 0.0;
  };

  struct Column {
    DesignColumn info;
    // Main effect: single dummy. Interaction: product of two dummies.
    std::vector<Dummy> terms;
  };
  std::vector<Column> cols;

  for (const Dummy& d : dummies) {
    Column c;
    c.info.label =
        std::string(attribute_key(d.attr)) + "=" + d.level;
    c.info.attribute_display = std::string(attribute_display(d.attr));
    c.info.target_display = d.level;
    c.info.reference_display = reference_level(d.attr);
    c.terms = {d};
    cols.push_back(std::move(c));
  }

  for (const auto& [a, b] : spec.interactions) {
    if (a == b) throw std::invalid_argument("interaction of an attribute with itself");
    std::vector<Dummy> da, db;
    for (const Dummy& d : dummies) {
      if (d.attr == a) da.push_back(d);
      if (d.attr == b) db.push_back(d);
    }
    if (da.empty() || db.empty()) {
      throw std::invalid_argument("interaction references unmodeled attribute");
    }
    for (const Dummy& x : da) {
      for (const Dummy& y : db) {
        Column c;
        c.info.label = std::string(attribute_key(a)) + "=" + x.level + ":" +
                       std::string(attribute_key(b)) + "=" + y.level;
        c.info.attribute_display = std::string(attribute_display(a)) +
                                   " x " + std::string(attribute_display(b));
        // With a single modeled contrast for the first attribute the
        // conventional reading is "<Attr> effect in <bracket>".
        std::string head = da.size() == 1
                               ? std::string(attribute_display(a))
                               : std::string(attribute_display(a)) + " (" +
                                     x.level + ")";
        c.info.target_display = head + " effect in " + y.level;
        c.info.reference_display =
            head + " effect in " + reference_level(b);
        c.info.is_interaction = true;
        c.terms = {x, y};
        cols.push_back(std::move(c));
      }
    }
  }

  const int n = static_cast<int>(panel.size());
  DesignMatrix dm;

  // Drop dummies with no observations up front; they would make the
  // normal equations singular.
  std::vector<Column> kept;
  for (Column& c : cols) {
    bool any = false;
    for (const PanelRow& row : panel) {
      double v = 1.0;
      for (const Dummy& d : c.terms) v *= dummy_value(row, d);
      if (v != 0.0) {
        any = true;
        break;
      }
    }
    if (any) {
      kept.push_back(std::move(c));
    } else {
      dm.dropped_empty_columns.push_back(c.info.label);
    }
  }

  dm.x.resize(n, static_cast<int>(kept.size()) + 1);
  dm.y.resize(n);
  dm.offset.resize(n);
  dm.cluster.resize(static_cast<std::size_t>(n));

  DesignColumn intercept;
  intercept.label = "(Intercept)";
  intercept.attribute_display = "(Intercept)";
  intercept.target_display = "(Intercept)";
  dm.columns.push_back(intercept);
  for (const Column& c : kept) dm.columns.push_back(c.info);

  std::map<std::string, int> cluster_index;
  for (int i = 0; i < n; ++i) {
    const PanelRow& row = panel[static_cast<std::size_t>(i)];
    dm.x(i, 0) = 1.0;
    for (std::size_t j = 0; j < kept.size(); ++j) {
      double v = 1.0;
      for (const Dummy& d : kept[j].terms) v *= dummy_value(row, d);
      dm.x(i, static_cast<int>(j) + 1) = v;
    }
    dm.y(i) = row.y;
    if (row.exposure < 1) {
      throw std::invalid_argument("exposure must be >= 1");
    }
    if (row.y > row.exposure) {
      throw std::invalid_argument(
          "category count exceeds total ads for user " + row.user_id);
    }
    dm.offset(i) = std::log(static_cast<double>(row.exposure));
    auto [it, inserted] =
        cluster_index.emplace(row.user_id, static_cast<int>(
                                               cluster_index.size()));
    if (inserted) dm.cluster_ids.push_back(row.user_id);
    dm.cluster[static_cast<std::size_t>(i)] = it->second;
  }
  return dm;
}

bool FitResult::flagged(std::string_view name) const {
  return std::find(flags.begin(), flags.end(), name) != flags.end();
}

double nb2_loglik(const Eigen::VectorXd& mu, const Eigen::VectorXi& y,
                  double alpha) {
  if (mu.size() != y.size()) throw std::invalid_argument("size mismatch");
  double ll = 0.0;
  if (alpha <= 0.0) {
    for (int i = 0; i < mu.size(); ++i) {
      double m = mu(i);
      ll += -m + static_cast<double>(y(i)) * std::log(m) -
            std::lgamma(static_cast<double>(y(i)) + 1.0);
    }
    return ll;
  }
  double r = 1.0 / alpha;
  for (int i = 0; i < mu.size(); ++i) {
    double m = mu(i);
    int yi = y(i);
    ll += lgamma_diff(yi, r) - std::lgamma(static_cast<double>(yi) + 1.0) +
          r * std::log(r / (r + m)) +
          static_cast<double>(yi) * std::log(m / (r + m));
  }
  return ll;
}

Eigen::VectorXd nb2_score_beta(const Eigen::MatrixXd& x,
                               const Eigen::VectorXi& y,
                               const Eigen::VectorXd& mu, double alpha) {
  Eigen::VectorXd s = Eigen::VectorXd::Zero(x.cols());
  for (int i = 0; i < x.rows(); ++i) {
    double m = mu(i);
    double w = (static_cast<double>(y(i)) - m) / (1.0 + alpha * m);
    s += w * x.row(i).transpose();
  }
  return s;
}

double nb2_score_alpha(const Eigen::VectorXd& mu, const Eigen::VectorXi& y,
                       double alpha) {
  if (alpha <= 0.0) return boundary_score(mu, y);
  double r = 1.0 / alpha;
  double g_r, h_r;
  score_hessian_r(mu, y, r, g_r, h_r);
  return -r * r * g_r;
}

FitResult fit_nb2(const Eigen::MatrixXd& x, const Eigen::VectorXi& y,
                  const Eigen::VectorXd& offset, const FitOptions& opt) {
  const int n = static_cast<int>(x.rows());
  const int p = static_cast<int>(x.cols());
  if (n == 0 || p == 0) throw std::invalid_argument("empty design");
  if (y.size() != n || offset.size() != n) {
    throw std::invalid_argument("design, outcome, offset sizes disagree");
  }
  for (int i = 0; i < n; ++i) {
    if (y(i) < 0) throw std::invalid_argument("negative count outcome");
  }

  FitResult res;
  res.n_obs = n;
  res.beta = Eigen::VectorXd::Zero(p);

  if (y.sum() == 0) {
    res.flags.push_back("not_estimable");
    res.alpha = opt.fixed_alpha.value_or(0.0);
    return res;
  }

  // Stage 1: Poisson fit, which is both the starting point and the
  // boundary candidate.
  Eigen::VectorXd beta =
      fit_beta_irls(x, y, offset, 0.0, res.beta, 100, 1e-12);
  Eigen::VectorXd mu = mean_vector(x, beta, offset);

  double alpha;
  bool estimate_alpha = !opt.fixed_alpha.has_value();
  if (!estimate_alpha) {
    alpha = *opt.fixed_alpha;
    if (alpha < 0.0) throw std::invalid_argument("alpha must be >= 0");
  } else if (boundary_score(mu, y) <= 0.0) {
    // No overdispersion signal: the likelihood decreases in alpha at 0,
    // so the MLE sits on the Poisson boundary.
    alpha = 0.0;
    estimate_alpha = false;
    res.flags.push_back("alpha_boundary");
  } else {
    // Method-of-moments start from Poisson residuals.
    double num = 0.0, den = 0.0;
    for (int i = 0; i < n; ++i) {
      double m = mu(i);
      double resid = static_cast<double>(y(i)) - m;
      num += resid * resid - m;
      den += m * m;
    }
    alpha = std::max(1e-6, num / den);
  }

  if (alpha == 0.0) {
    beta = fit_beta_irls(x, y, offset, 0.0, beta, 200, 1e-12);
    mu = mean_vector(x, beta, offset);
    res.beta = beta;
    res.alpha = 0.0;
    res.loglik = nb2_loglik(mu, y, 0.0);
    res.iterations = 1;
    res.converged = nb2_score_beta(x, y, mu, 0.0).norm() < 1e-4;
    if (beta.cwiseAbs().maxCoeff() > kSeparationBeta) {
      res.flags.push_back("separation_suspected");
    }
    return res;
  }

  // Stage 2: alternate beta-IRLS and alpha-Newton until the joint score
  // vanishes.
  int outer = 0;
  bool converged = false;
  Eigen::VectorXd beta_prev = beta;
  double alpha_prev = alpha;
  for (; outer < opt.max_outer; ++outer) {
    beta = fit_beta_irls(x, y, offset, alpha, beta, 50, 1e-12);
    mu = mean_vector(x, beta, offset);

    // alpha_settled: the dispersion score vanished, or the line search
    // could not improve the conditional likelihood at all (a numeric
    // optimum; near the boundary the score suffers r^2-amplified
    // cancellation and never reaches a small absolute tolerance).
    bool alpha_settled = !estimate_alpha;
    if (estimate_alpha) {
      double ll = nb2_loglik(mu, y, alpha);
      for (int newton = 0; newton < 50; ++newton) {
        double r = 1.0 / alpha;
        double g_r, h_r;
        score_hessian_r(mu, y, r, g_r, h_r);
        double g_a = -r * r * g_r;
        double h_a = r * r * r * r * h_r + 2.0 * r * r * r * g_r;
        if (std::abs(g_a) < 0.1 * opt.tol) {
          alpha_settled = true;
          break;
        }
        double step =
            h_a < 0.0 ? -g_a / h_a : (g_a > 0.0 ? alpha : -0.5 * alpha);
        // Step-halve into the admissible region and uphill.
        bool accepted = false;
        for (int half = 0; half < 60; ++half) {
          double proposal = alpha + step;
          if (proposal > kMinAlpha) {
            double ll_new = nb2_loglik(mu, y, proposal);
            if (ll_new >= ll - 1e-12) {
              alpha = proposal;
              ll = ll_new;
              accepted = true;
              break;
            }
          }
          step *= 0.5;
          if (std::abs(step) < 1e-18 * std::max(1.0, alpha)) break;
        }
        if (!accepted) {
          alpha_settled = true;
          break;
        }
      }
      // Boundary collapse: dispersion pinned at the numerically-Poisson
      // edge and the boundary score favors alpha = 0; refit as Poisson.
      if (alpha <= kBoundaryAlpha &&
          nb2_score_alpha(mean_vector(x, beta, offset), y, 0.0) <= 0.0) {
        res.flags.push_back("alpha_boundary");
        alpha = 0.0;
        beta = fit_beta_irls(x, y, offset, 0.0, beta, 200, 1e-12);
        mu = mean_vector(x, beta, offset);
        converged = true;
        break;
      }
    }

    mu = mean_vector(x, beta, offset);
    double score_norm = nb2_score_beta(x, y, mu, alpha).norm();
    double alpha_score =
        estimate_alpha ? std::abs(nb2_score_alpha(mu, y, alpha)) : 0.0;
    if (std::sqrt(score_norm * score_norm + alpha_score * alpha_score) <
        opt.tol) {
      converged = true;
      ++outer;
      break;
    }
    // Fixed point: neither block moved and the beta score is clean. The
    // raw alpha score may still be cancellation noise, so it is not
    // consulted here.
    if (outer > 0 && alpha_settled && score_norm < opt.tol &&
        (beta - beta_prev).norm() <= 1e-12 * (1.0 + beta.norm()) &&
        std::abs(alpha - alpha_prev) <= 1e-12 * (1.0 + alpha)) {
      converged = true;
      ++outer;
      break;
    }
    beta_prev = beta;
    alpha_prev = alpha;
  }

  res.beta = beta;
  res.alpha = alpha;
  res.loglik = nb2_loglik(mu, y, alpha);
  res.iterations = outer;
  res.converged = converged;
  if (!converged) res.flags.push_back("not_converged");
  if (beta.cwiseAbs().maxCoeff() > kSeparationBeta) {
    res.flags.push_back("separation_suspected");
  }
  return res;
}

Eigen::MatrixXd cluster_robust_cov(const Eigen::MatrixXd& x,
                                   const Eigen::VectorXi& y,
                                   const Eigen::VectorXd& offset,
                                   const Eigen::VectorXd& beta, double alpha,
                                   const std::vector<int>& cluster) {
  const int n = static_cast<int>(x.rows());
  const int p = static_cast<int>(x.cols());
  if (static_cast<int>(cluster.size()) != n) {
    throw std::invalid_argument("cluster labels must cover every row");
  }
  std::set<int> distinct(cluster.begin(), cluster.end());
  if (distinct.size() < 2) {
    throw std::invalid_argument(
        "cluster-robust covariance needs at least two clusters");
  }

  Eigen::VectorXd mu = mean_vector(x, beta, offset);
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(p, p);
  std::map<int, Eigen::VectorXd> cluster_scores;
  for (int i = 0; i < n; ++i) {
    double m = mu(i);
    double denom = 1.0 + alpha * m;
    double info_w =
        m * (1.0 + alpha * static_cast<double>(y(i))) / (denom * denom);
    a.noalias() += info_w * x.row(i).transpose() * x.row(i);
    double score_w = (static_cast<double>(y(i)) - m) / denom;
    auto [it, inserted] =
        cluster_scores.try_emplace(cluster[static_cast<std::size_t>(i)],
                                   Eigen::VectorXd::Zero(p));
    it->second += score_w * x.row(i).transpose();
  }
  Eigen::MatrixXd b = Eigen::MatrixXd::Zero(p, p);
  for (const auto& [g, s] : cluster_scores) {
    b.noalias() += s * s.transpose();
  }
  Eigen::MatrixXd a_inv = a.ldlt().solve(Eigen::MatrixXd::Identity(p, p));
  return a_inv * b * a_inv;
}

std::vector<IrrRow> irr_table(const Eigen::VectorXd& beta,
                              const Eigen::MatrixXd& cov,
                              const std::vector<DesignColumn>& columns) {
  if (beta.size() != static_cast<int>(columns.size()) ||
      cov.rows() != beta.size() || cov.cols() != beta.size()) {
    throw std::invalid_argument("beta, covariance, columns disagree");
  }
  std::vector<IrrRow> rows;
  for (int j = 0; j < beta.size(); ++j) {
    const DesignColumn& col = columns[static_cast<std::size_t>(j)];
    if (col.label == "(Intercept)") continue;
    IrrRow row;
    row.attribute = col.attribute_display;
    row.target = col.target_display;
    row.reference = col.reference_display;
    row.beta = beta(j);
    double var = cov(j, j);
    row.se = var > 0.0 ? std::sqrt(var) : 0.0;
    row.irr = std::exp(row.beta);
    row.ci_low = std::exp(row.beta - 1.96 * row.se);
    row.ci_high = std::exp(row.beta + 1.96 * row.se);
    if (row.se > 0.0) {
      double z = row.beta / row.se;
      row.p = std::erfc(std::abs(z) / std::sqrt(2.0));
    } else {
      row.p = row.beta == 0.0 ? 1.0 : 0.0;
    }
    rows.push_back(std::move(row));
  }
  std::stable_sort(rows.begin(), rows.end(),
                   [](const IrrRow& a, const IrrRow& b) { return a.p < b.p; });
  return rows;
}

double implied_irr(double interaction_ratio, double conditional_irr) {
  return interaction_ratio * conditional_irr;
}

std::vector<std::pair<Attribute, Attribute>> screen_interactions(
    const std::vector<IrrRow>& main_effect_rows,
    const std::vector<std::pair<Attribute, Attribute>>& candidates,
    double p_threshold) {
  auto qualifies = [&](Attribute a) {
    std::string display(attribute_display(a));
    for (const IrrRow& row : main_effect_rows) {
      if (row.attribute == display && row.p < p_threshold) return true;
    }
    return false;
  };
  std::vector<std::pair<Attribute, Attribute>> kept;
  for (const auto& pair : candidates) {
    if (qualifies(pair.first) && qualifies(pair.second)) kept.push_back(pair);
  }
  return kept;
}

void write_irr_csv(const std::string& path, const std::vector<IrrRow>& rows) {
  std::ostringstream buf;
  CsvWriter writer(buf);
  writer.write_row({"attribute", "target", "reference", "IRR", "CI_low",
                    "CI_high", "p"});
  for (const IrrRow& r : rows) {
    writer.write_row({r.attribute, r.target, r.reference,
                      format_fixed(r.irr, 2), format_fixed(r.ci_low, 2),
                      format_fixed(r.ci_high, 2), format_fixed(r.p, 3)});
  }
  write_text_file(path, buf.str());
}

}  // namespace adaudit
