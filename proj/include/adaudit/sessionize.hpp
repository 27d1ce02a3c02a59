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

#ifndef ADAUDIT_SESSIONIZE_HPP_
#define ADAUDIT_SESSIONIZE_HPP_

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "adaudit/ingest.hpp"

namespace adaudit {

struct SessionizerConfig {
  // Gaussian KDE over log inter-ad gaps.
  int grid_points = 512;
  double grid_pad_bandwidths = 3.0;
  // Silverman's rule unless a fixed bandwidth is supplied.
  std::optional<double> fixed_bandwidth;
  // Users contribute a personal threshold only with this many gaps.
  int min_gaps_for_kde = 10;
  // Used when no user yields a threshold (pooled estimate from prior runs).
  double fallback_theta_seconds = 389.0;
  // Session and user retention filters.
  int min_session_len = 3;
  int max_session_len = 50;
  int min_sessions_per_user = 3;
};

// Log inter-impression gaps: delta_i = ln(t_{i+1} - t_i), gaps clamped to a
// 1 s floor so simultaneous impressions contribute ln(1) = 0. Requires
// non-decreasing timestamps; throws std::invalid_argument otherwise.
// Fewer than two timestamps yield an empty vector.
std::vector<double> compute_gaps(const std::vector<std::int64_t>& timestamps);

// h = 0.9 * min(sd, IQR/1.34) * n^(-1/5); sd with ddof=1, quartiles by
// linear interpolation. Returns 0 for degenerate (zero-spread) samples.
double silverman_bandwidth(const std::vector<double>& deltas);

struct KdeCurve {
  std::vector<double> grid;
  std::vector<double> density;
};

// Density evaluated on an even grid spanning [min-pad*h, max+pad*h].
KdeCurve kde_curve(const std::vector<double>& deltas, double bandwidth,
                   int grid_points, double pad_bandwidths);

struct ThetaDetail {
  // Log-gap locations of the two dominant density modes: within-session
  // (short gaps) and between-session (long gaps). long_gap_mode is always
  // the greater of the two.
  double short_gap_mode = 0;
  double long_gap_mode = 0;
  // exp of the midpoint between the two modes, in seconds.
  double theta = 0;
};

// Personal threshold from the gap-density curve. Absent when the sample is
// too small (< min_gaps_for_kde), degenerate, or the density is unimodal.
std::optional<ThetaDetail> kde_threshold(const std::vector<double>& deltas,
                                         const SessionizerConfig& config);

// Mean of per-user thresholds. Callers must pass values in a fixed order
// (ascending user id) so the reduction is bit-reproducible. Throws
// std::invalid_argument when empty: the caller should then fall back to
// SessionizerConfig::fallback_theta_seconds.
double global_threshold(const std::vector<double>& user_thetas);

// Splits one user's non-decreasing timestamps into half-open index ranges.
// A new session starts when the gap strictly exceeds theta; a gap equal to
// theta stays within the session.
std::vector<std::pair<std::size_t, std::size_t>> segment(
    const std::vector<std::int64_t>& timestamps, double theta);

struct Session {
  std::string session_id;
  std::string user_id;
  std::vector<AdImpression> impressions;

  std::int64_t start_time() const { return impressions.front().timestamp; }
  std::int64_t end_time() const { return impressions.back().timestamp; }
};

struct FilterCounts {
  std::size_t sessions_total = 0;
  std::size_t sessions_dropped_short = 0;
  std::size_t sessions_dropped_long = 0;
  std::size_t users_total = 0;
  std::size_t users_dropped_few_sessions = 0;
  std::size_t sessions_dropped_with_user = 0;
  std::size_t sessions_kept = 0;
  std::size_t users_kept = 0;
};

// Length filter first, then the per-user session-count filter (counted
// after the length filter). Preserves order.
std::vector<Session> apply_filters(std::vector<Session> sessions,
                                   const SessionizerConfig& config,
                                   FilterCounts* counts);

struct UserSessionReport {
  std::string user_id;
  std::size_t n_impressions = 0;
  std::size_t n_gaps = 0;
  std::optional<double> theta_user;
  std::size_t n_sessions_pre_filter = 0;
  std::size_t n_sessions_post_filter = 0;
};

struct SessionizeResult {
  std::vector<Session> sessions;
  double theta_global = 0;
  bool used_fallback = false;
  FilterCounts counts;
  std::vector<UserSessionReport> report;
};

// Full per-cohort run: per-user thresholds (parallel across users when
// jobs > 1, output independent of jobs), global threshold, segmentation,
// retention filters. Session ids are "<user_id>-s<NNNN>" numbered before
// filtering so they are stable under filter changes.
SessionizeResult sessionize_cohort(const CohortDataset& cohort,
                                   const SessionizerConfig& config,
                                   int jobs = 1);

void write_sessions_jsonl(const std::string& path,
                          const std::vector<Session>& sessions);
std::vector<Session> read_sessions_jsonl(const std::string& path,
                                         const CohortDataset& cohort);
void write_session_report_csv(const std::string& path,
                              const std::vector<UserSessionReport>& report);

}  // namespace adaudit

#endif  // ADAUDIT_SESSIONIZE_HPP_
