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
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "adaudit/csv.hpp"
#include "adaudit/util.hpp"

namespace adaudit {

namespace {

using nlohmann::json;

double quantile_linear(std::vector<double> sorted, double p) {
  // Linear interpolation between order statistics at rank (n-1)*p.
  const std::size_t n = sorted.size();
  double pos = p * static_cast<double>(n - 1);
  std::size_t lo = static_cast<std::size_t>(pos);
  std::size_t hi = std::min(lo + 1, n - 1);
  double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

// Leftmost interior local maxima/minima of `f`. Plateaus count once, at
// their leftmost point; comparisons against the next differing value are
// strict.
std::vector<std::size_t> local_extrema(const std::vector<double>& f,
                                       bool maxima) {
  std::vector<std::size_t> out;
  const std::size_t n = f.size();
  for (std::size_t i = 1; i + 1 < n; ++i) {
    if (f[i] == f[i - 1]) continue;  // not leftmost of its plateau
    bool rising = f[i] > f[i - 1];
    std::size_t j = i;
    while (j + 1 < n && f[j + 1] == f[i]) ++j;
    if (j + 1 >= n) break;  // plateau runs to the boundary
    bool falling_after = f[j + 1] < f[i];
    if (maxima ? (rising && falling_after) : (!rising && !falling_after)) {
      out.push_back(i);
    }
  }
  return out;
}

}  // namespace

std::vector<double> compute_gaps(
    const std::vector<std::int64_t>& timestamps) {
  std::vector<double> deltas;
  if (timestamps.size() < 2) return deltas;
  deltas.reserve(timestamps.size() - 1);
  for (std::size_t i = 0; i + 1 < timestamps.size(); ++i) {
    std::int64_t gap = timestamps[i + 1] - timestamps[i];
    if (gap < 0) {
      throw std::invalid_argument(
          "timestamps must be non-decreasing (index " + std::to_string(i) +
          ")");
    }
    if (gap < 1) gap = 1;
    deltas.push_back(std::log(static_cast<double>(gap)));
  }
  return deltas;
}

double silverman_bandwidth(const std::vector<double>& deltas) {
  const std::size_t n = deltas.size();
  if (n < 2) return 0.0;
  double mean = 0.0;
  for (double d : deltas) mean += d;
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (double d : deltas) ss += (d - mean) * (d - mean);
  double sd = std::sqrt(ss / static_cast<double>(n - 1));

  std::vector<double> sorted(deltas);
  std::sort(sorted.begin(), sorted.end());
  double iqr =
      quantile_linear(sorted, 0.75) - quantile_linear(sorted, 0.25);

  double spread = sd;
  if (iqr > 0.0) spread = std::min(sd, iqr / 1.34);
  return 0.9 * spread * std::pow(static_cast<double>(n), -0.2);
}

KdeCurve kde_curve(const std::vector<double>& deltas, double bandwidth,
                   int grid_points, double pad_bandwidths) {
  if (deltas.empty()) throw std::invalid_argument("empty sample");
  if (bandwidth <= 0.0) throw std::invalid_argument("bandwidth must be > 0");
  if (grid_points < 2) throw std::invalid_argument("grid_points must be >= 2");

  auto [mn, mx] = std::minmax_element(deltas.begin(), deltas.end());
  double lo = *mn - pad_bandwidths * bandwidth;
  double hi = *mx + pad_bandwidths * bandwidth;

  KdeCurve curve;
  curve.grid.resize(static_cast<std::size_t>(grid_points));
  curve.density.resize(static_cast<std::size_t>(grid_points));
  double step = (hi - lo) / static_cast<double>(grid_points - 1);
  const double norm =
      1.0 / (static_cast<double>(deltas.size()) * bandwidth *
             std::sqrt(2.0 * M_PI));
  for (int i = 0; i < grid_points; ++i) {
    double x = lo + step * i;
    double acc = 0.0;
    for (double d : deltas) {
      double z = (x - d) / bandwidth;
      acc += std::exp(-0.5 * z * z);
    }
    curve.grid[static_cast<std::size_t>(i)] = x;
    curve.density[static_cast<std::size_t>(i)] = acc * norm;
  }
  return curve;
}

std::optional<ThetaDetail> kde_threshold(const std::vector<double>& deltas,
                                         const SessionizerConfig& config) {
  if (static_cast<int>(deltas.size()) < config.min_gaps_for_kde) {
    return std::nullopt;
  }
  double h = config.fixed_bandwidth ? *config.fixed_bandwidth
                                    : silverman_bandwidth(deltas);
  if (!(h > 0.0)) return std::nullopt;

  KdeCurve curve = kde_curve(deltas, h, config.grid_points,
                             config.grid_pad_bandwidths);
  std::vector<std::size_t> maxima = local_extrema(curve.density, true);
  std::vector<std::size_t> minima = local_extrema(curve.density, false);
  if (maxima.empty()) return std::nullopt;

  // Bimodal shape: first mode, then a valley, then a second mode. The
  // threshold sits at the geometric midpoint of the two modes.
  std::size_t first_mode = maxima.front();
  auto valley = std::find_if(minima.begin(), minima.end(),
                             [&](std::size_t i) { return i > first_mode; });
  if (valley == minima.end()) return std::nullopt;
  auto second_mode =
      std::find_if(maxima.begin(), maxima.end(),
                   [&](std::size_t i) { return i > *valley; });
  if (second_mode == maxima.end()) return std::nullopt;

  ThetaDetail detail;
  detail.short_gap_mode = curve.grid[first_mode];
  detail.long_gap_mode = curve.grid[*second_mode];
  detail.theta =
      std::exp(0.5 * (detail.short_gap_mode + detail.long_gap_mode));
  return detail;
}

double global_threshold(const std::vector<double>& user_thetas) {
  if (user_thetas.empty()) {
    throw std::invalid_argument(
        "no per-user thresholds available; use fallback_theta_seconds");
  }
  double sum = 0.0;
  for (double t : user_thetas) {
    if (!(t > 0.0)) throw std::invalid_argument("thresholds must be > 0");
    sum += t;
  }
  return sum / static_cast<double>(user_thetas.size());
}

std::vector<std::pair<std::size_t, std::size_t>> segment(
    const std::vector<std::int64_t>& timestamps, double theta) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  if (timestamps.empty()) return out;
  if (!(theta > 0.0)) throw std::invalid_argument("theta must be > 0");
  std::size_t start = 0;
  for (std::size_t i = 0; i + 1 < timestamps.size(); ++i) {
    std::int64_t gap = timestamps[i + 1] - timestamps[i];
    if (gap < 0) {
      throw std::invalid_argument(
          "timestamps must be non-decreasing (index " + std::to_string(i) +
          ")");
    }
    if (static_cast<double>(gap) > theta) {
      out.emplace_back(start, i + 1);
      start = i + 1;
    }
  }
  out.emplace_back(start, timestamps.size());
  return out;
}

std::vector<Session> apply_filters(std::vector<Session> sessions,
                                   const SessionizerConfig& config,
                                   FilterCounts* counts) {
  FilterCounts local;
  local.sessions_total = sessions.size();

  std::map<std::string, std::size_t> users;
  for (const Session& s : sessions) users[s.user_id] = 0;
  local.users_total = users.size();

  std::vector<Session> kept_len;
  kept_len.reserve(sessions.size());
  for (Session& s : sessions) {
    std::size_t len = s.impressions.size();
    if (len < static_cast<std::size_t>(config.min_session_len)) {
      ++local.sessions_dropped_short;
      continue;
    }
    if (len > static_cast<std::size_t>(config.max_session_len)) {
      ++local.sessions_dropped_long;
      continue;
    }
    users[s.user_id] += 1;
    kept_len.push_back(std::move(s));
  }

  std::vector<Session> kept;
  kept.reserve(kept_len.size());
  for (Session& s : kept_len) {
    if (users[s.user_id] <
        static_cast<std::size_t>(config.min_sessions_per_user)) {
      ++local.sessions_dropped_with_user;
      continue;
    }
    kept.push_back(std::move(s));
  }
  for (const auto& [user, n] : users) {
    if (n > 0 && n < static_cast<std::size_t>(config.min_sessions_per_user)) {
      ++local.users_dropped_few_sessions;
    }
    if (n >= static_cast<std::size_t>(config.min_sessions_per_user)) {
      ++local.users_kept;
    }
  }
  // Users whose every session failed the length filter are also gone.
  local.users_dropped_few_sessions += [&] {
    std::size_t zeroed = 0;
    for (const auto& [user, n] : users) {
      if (n == 0) ++zeroed;
    }
    return zeroed;
  }();
  local.sessions_kept = kept.size();
  if (counts != nullptr) *counts = local;
  return kept;
}

SessionizeResult sessionize_cohort(const CohortDataset& cohort,
                                   const SessionizerConfig& config,
                                   int jobs) {
  if (jobs < 1) jobs = 1;

  // Cohort impressions are sorted by (user, timestamp); slice per user.
  struct UserSlice {
    std::string user_id;
    std::size_t begin = 0;
    std::size_t end = 0;
  };
  std::vector<UserSlice> slices;
  const auto& imps = cohort.impressions;
  for (std::size_t i = 0; i < imps.size();) {
    std::size_t j = i;
    while (j < imps.size() && imps[j].user_id == imps[i].user_id) ++j;
    slices.push_back({imps[i].user_id, i, j});
    i = j;
  }

  struct UserWork {
    std::vector<std::int64_t> timestamps;
    std::vector<double> deltas;
    std::optional<ThetaDetail> theta;
  };
  std::vector<UserWork> work(slices.size());

  auto run_user = [&](std::size_t idx) {
    const UserSlice& s = slices[idx];
    UserWork& w = work[idx];
    w.timestamps.reserve(s.end - s.begin);
    for (std::size_t k = s.begin; k < s.end; ++k) {
      w.timestamps.push_back(imps[k].timestamp);
    }
    w.deltas = compute_gaps(w.timestamps);
    w.theta = kde_threshold(w.deltas, config);
  };

  if (jobs == 1 || slices.size() < 2) {
    for (std::size_t i = 0; i < slices.size(); ++i) run_user(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    int n_threads = std::min<int>(jobs, static_cast<int>(slices.size()));
    pool.reserve(static_cast<std::size_t>(n_threads));
    for (int t = 0; t < n_threads; ++t) {
      pool.emplace_back([&] {
        while (true) {
          std::size_t i = next.fetch_add(1);
          if (i >= slices.size()) return;
          run_user(i);
        }
      });
    }
    for (auto& th : pool) th.join();
  }

  SessionizeResult result;
  // Slices follow ascending user id, so this mean is order-stable.
  std::vector<double> thetas;
  for (const UserWork& w : work) {
    if (w.theta) thetas.push_back(w.theta->theta);
  }
  if (thetas.empty()) {
    result.theta_global = config.fallback_theta_seconds;
    result.used_fallback = true;
  } else {
    result.theta_global = global_threshold(thetas);
  }

  std::vector<Session> sessions;
  for (std::size_t idx = 0; idx < slices.size(); ++idx) {
    const UserSlice& s = slices[idx];
    const UserWork& w = work[idx];
    auto ranges = segment(w.timestamps, result.theta_global);

    UserSessionReport rep;
    rep.user_id = s.user_id;
    rep.n_impressions = s.end - s.begin;
    rep.n_gaps = w.deltas.size();
    if (w.theta) rep.theta_user = w.theta->theta;
    rep.n_sessions_pre_filter = ranges.size();
    result.report.push_back(rep);

    for (std::size_t r = 0; r < ranges.size(); ++r) {
      Session sess;
      char num[16];
      std::snprintf(num, sizeof(num), "-s%04zu", r + 1);
      sess.session_id = s.user_id + num;
      sess.user_id = s.user_id;
      sess.impressions.assign(imps.begin() + static_cast<std::ptrdiff_t>(
                                                 s.begin + ranges[r].first),
                              imps.begin() + static_cast<std::ptrdiff_t>(
                                                 s.begin + ranges[r].second));
      sessions.push_back(std::move(sess));
    }
  }

  result.sessions =
      apply_filters(std::move(sessions), config, &result.counts);

  std::map<std::string, std::size_t> post_counts;
  for (const Session& s : result.sessions) post_counts[s.user_id] += 1;
  for (UserSessionReport& rep : result.report) {
    auto it = post_counts.find(rep.user_id);
    rep.n_sessions_post_filter = it == post_counts.end() ? 0 : it->second;
  }
  return result;
}

void write_sessions_jsonl(const std::string& path,
                          const std::vector<Session>& sessions) {
  std::ostringstream out;
  for (const Session& s : sessions) {
    json ads = json::array();
    for (const AdImpression& imp : s.impressions) {
      ads.push_back({{"ad_id", imp.ad_id}, {"timestamp", imp.timestamp}});
    }
    json j;
    j["session_id"] = s.session_id;
    j["user_id"] = s.user_id;
    j["start"] = s.start_time();
    j["end"] = s.end_time();
    j["ads"] = ads;
    out << j.dump() << '\n';
  }
  write_text_file(path, out.str());
}

std::vector<Session> read_sessions_jsonl(const std::string& path,
                                         const CohortDataset& cohort) {
  // Index cohort impressions by (user, ad, timestamp) to rebuild sessions.
  std::map<std::tuple<std::string, std::string, std::int64_t>,
           const AdImpression*>
      index;
  for (const AdImpression& imp : cohort.impressions) {
    index[{imp.user_id, imp.ad_id, imp.timestamp}] = &imp;
  }

  std::ifstream in(path, std::ios::binary);
  if (!in) throw PipelineError("cannot open file: " + path);
  std::vector<Session> sessions;
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
    Session s;
    s.session_id = j.at("session_id").get<std::string>();
    s.user_id = j.at("user_id").get<std::string>();
    for (const auto& ad : j.at("ads")) {
      std::string ad_id = ad.at("ad_id").get<std::string>();
      std::int64_t ts = ad.at("timestamp").get<std::int64_t>();
      auto it = index.find({s.user_id, ad_id, ts});
      if (it == index.end()) {
        throw SchemaError("row " + std::to_string(row) + ": session " +
                          s.session_id + " references unknown impression " +
                          ad_id);
      }
      s.impressions.push_back(*it->second);
    }
    if (s.impressions.empty()) {
      throw SchemaError("row " + std::to_string(row) + ": empty session");
    }
    sessions.push_back(std::move(s));
  }
  return sessions;
}

void write_session_report_csv(const std::string& path,
                              const std::vector<UserSessionReport>& report) {
  std::ostringstream buf;
  CsvWriter writer(buf);
  writer.write_row({"user_id", "n_impressions", "n_gaps", "theta_user",
                    "n_sessions_pre_filter", "n_sessions_post_filter"});
  for (const UserSessionReport& r : report) {
    writer.write_row({r.user_id, std::to_string(r.n_impressions),
                      std::to_string(r.n_gaps),
                      r.theta_user ? format_fixed(*r.theta_user, 3) : "",
                      std::to_string(r.n_sessions_pre_filter),
                      std::to_string(r.n_sessions_post_filter)});
  }
  write_text_file(path, buf.str());
}

}  // namespace adaudit
