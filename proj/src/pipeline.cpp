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

#include "adaudit/pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <set>
#include <sstream>
#include <utility>

#include "adaudit/audit.hpp"
#include "adaudit/csv.hpp"
#include "adaudit/features.hpp"
#include "adaudit/ingest.hpp"
#include "adaudit/nbr.hpp"
#include "adaudit/util.hpp"

namespace adaudit {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string resolve_path(const fs::path& base_dir, const std::string& p) {
  if (p.empty()) return p;
  fs::path candidate(p);
  if (candidate.is_absolute()) return candidate.lexically_normal().string();
  return (base_dir / candidate).lexically_normal().string();
}

[[noreturn]] void config_error(const std::string& message) {
  throw SchemaError("config: " + message);
}

void check_keys(const json& object, const std::string& context,
                const std::set<std::string>& allowed) {
  for (auto it = object.begin(); it != object.end(); ++it) {
    if (!allowed.count(it.key())) {
      config_error("unknown key '" + it.key() + "' in " + context);
    }
  }
}

std::string get_string(const json& object, const std::string& key,
                       const std::string& fallback) {
  if (!object.contains(key)) return fallback;
  if (!object.at(key).is_string()) config_error("'" + key + "' must be a string");
  return object.at(key).get<std::string>();
}

double get_number(const json& object, const std::string& key,
                  double fallback) {
  if (!object.contains(key)) return fallback;
  if (!object.at(key).is_number()) config_error("'" + key + "' must be a number");
  return object.at(key).get<double>();
}

int get_int(const json& object, const std::string& key, int fallback) {
  if (!object.contains(key)) return fallback;
  if (!object.at(key).is_number_integer()) {
    config_error("'" + key + "' must be an integer");
  }
  return object.at(key).get<int>();
}

bool get_bool(const json& object, const std::string& key, bool fallback) {
  if (!object.contains(key)) return fallback;
  if (!object.at(key).is_boolean()) config_error("'" + key + "' must be a boolean");
  return object.at(key).get<bool>();
}

Attribute parse_attribute(const std::string& key) {
  auto a = attribute_from_key(key);
  if (!a) config_error("unknown attribute '" + key + "'");
  return *a;
}

std::string file_digest(const std::string& path) {
  return sha256_hex(read_text_file(path));
}

// Manifest creation time; AD_AUDIT_RUN_TIME (epoch seconds or ISO-8601)
// overrides the clock so archived runs stay byte-reproducible.
std::string manifest_time() {
  if (const char* fixed = std::getenv("AD_AUDIT_RUN_TIME")) {
    return format_timestamp(parse_timestamp(fixed));
  }
  auto now = std::chrono::system_clock::now();
  return format_timestamp(
      std::chrono::duration_cast<std::chrono::seconds>(now.time_since_epoch())
          .count());
}

struct ScopeColumns {
  std::vector<std::string> predictions;
  std::vector<std::string> truths;
};

// Session-scope pairs: one per prediction whose owner's survey answer is a
// scored category. Abstentions stay in as guaranteed-wrong predictions.
ScopeColumns session_scope(
    const std::vector<SessionPrediction>& predictions,
    const std::map<std::string, DemographicProfile>& profiles, Attribute a) {
  ScopeColumns columns;
  const auto& universe = evaluation_levels(a);
  for (const auto& prediction : predictions) {
    auto it = profiles.find(prediction.user_id);
    if (it == profiles.end()) {
      throw SchemaError("prediction for unknown user '" + prediction.user_id +
                        "'");
    }
    const std::string& truth = it->second.level(a);
    if (std::find(universe.begin(), universe.end(), truth) == universe.end()) {
      continue;
    }
    auto answer = prediction.answers.find(a);
    columns.predictions.push_back(answer == prediction.answers.end()
                                      ? std::string(kAbstainMarker)
                                      : answer->second);
    columns.truths.push_back(truth);
  }
  return columns;
}

// User-scope pairs on the register-comparable category sets. Truths that
// harmonization excludes drop the case; predictions that harmonization
// excludes become abstentions.
ScopeColumns user_scope(
    const std::vector<UserPrediction>& predictions,
    const std::map<std::string, DemographicProfile>& profiles, Attribute a,
    const HarmonizationRules& rules) {
  ScopeColumns columns;
  for (const auto& prediction : predictions) {
    auto it = profiles.find(prediction.user_id);
    if (it == profiles.end()) {
      throw SchemaError("prediction for unknown user '" + prediction.user_id +
                        "'");
    }
    auto truth = harmonize_value(a, it->second.level(a), rules);
    if (!truth) continue;
    std::string pred(kAbstainMarker);
    auto answer = prediction.answers.find(a);
    if (answer != prediction.answers.end() &&
        answer->second != kAbstainMarker) {
      auto mapped = harmonize_value(a, answer->second, rules);
      if (mapped) pred = *mapped;
    }
    columns.predictions.push_back(pred);
    columns.truths.push_back(*truth);
  }
  return columns;
}

std::string mean_std_cell(double mean, double stddev) {
  return format_fixed(mean, 2) + "+/-" + format_fixed(stddev, 2);
}

}  // namespace

std::string category_slug(const std::string& category) {
  std::string slug;
  slug.reserve(category.size());
  for (unsigned char c : category) {
    if (std::isalnum(c)) {
      slug.push_back(static_cast<char>(std::tolower(c)));
    } else {
      slug.push_back('_');
    }
  }
  return slug;
}

Config Config::load(const std::string& path) {
  json root;
  try {
    root = json::parse(read_text_file(path));
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("config: ") + e.what(), 1);
  }
  if (!root.is_object()) config_error("top level must be an object");
  check_keys(root, "config",
             {"impressions", "profiles", "output_dir", "cache_dir", "source",
              "taxonomy", "prompts_dir", "census_prior", "sessionizer",
              "audit", "nbr", "reconstruct", "evaluate", "backend"});

  const fs::path base = fs::absolute(fs::path(path)).parent_path();

  Config config;
  config.snapshot = root;
  for (const char* key : {"impressions", "profiles", "output_dir"}) {
    if (!root.contains(key)) {
      config_error(std::string("missing required key '") + key + "'");
    }
  }
  config.impressions_path = resolve_path(base, get_string(root, "impressions", ""));
  config.profiles_path = resolve_path(base, get_string(root, "profiles", ""));
  config.output_dir = resolve_path(base, get_string(root, "output_dir", ""));
  config.cache_dir = resolve_path(
      base, get_string(root, "cache_dir",
                       (fs::path(config.output_dir) / "cache").string()));
  config.source = get_string(root, "source", config.source);
  config.taxonomy_path =
      resolve_path(base, get_string(root, "taxonomy", "data/iab_taxonomy.txt"));
  config.prompts_dir =
      resolve_path(base, get_string(root, "prompts_dir", "data/prompts"));
  config.census_prior_path = resolve_path(
      base, get_string(root, "census_prior", "data/census_prior_au.csv"));

  if (root.contains("sessionizer")) {
    const json& s = root.at("sessionizer");
    check_keys(s, "sessionizer",
               {"grid_points", "grid_pad_bandwidths", "fixed_bandwidth",
                "min_gaps_for_kde", "fallback_theta_seconds",
                "min_session_len", "max_session_len",
                "min_sessions_per_user"});
    auto& sc = config.sessionizer;
    sc.grid_points = get_int(s, "grid_points", sc.grid_points);
    sc.grid_pad_bandwidths =
        get_number(s, "grid_pad_bandwidths", sc.grid_pad_bandwidths);
    if (s.contains("fixed_bandwidth")) {
      sc.fixed_bandwidth = get_number(s, "fixed_bandwidth", 0.0);
    }
    sc.min_gaps_for_kde = get_int(s, "min_gaps_for_kde", sc.min_gaps_for_kde);
    sc.fallback_theta_seconds =
        get_number(s, "fallback_theta_seconds", sc.fallback_theta_seconds);
    sc.min_session_len = get_int(s, "min_session_len", sc.min_session_len);
    sc.max_session_len = get_int(s, "max_session_len", sc.max_session_len);
    sc.min_sessions_per_user =
        get_int(s, "min_sessions_per_user", sc.min_sessions_per_user);
  }

  if (root.contains("audit")) {
    const json& a = root.at("audit");
    check_keys(a, "audit", {"target_categories"});
    if (a.contains("target_categories")) {
      if (!a.at("target_categories").is_array()) {
        config_error("'target_categories' must be an array");
      }
      config.audit_categories.clear();
      for (const auto& entry : a.at("target_categories")) {
        if (!entry.is_string()) {
          config_error("'target_categories' entries must be strings");
        }
        config.audit_categories.push_back(entry.get<std::string>());
      }
      if (config.audit_categories.empty()) {
        config_error("'target_categories' must not be empty");
      }
    }
  }

  if (root.contains("nbr")) {
    const json& n = root.at("nbr");
    check_keys(n, "nbr",
               {"category", "attributes", "interactions",
                "screen_interactions", "screening_p"});
    config.nbr_category = get_string(n, "category", config.nbr_category);
    if (n.contains("attributes")) {
      if (!n.at("attributes").is_array()) {
        config_error("'attributes' must be an array");
      }
      config.nbr_attributes.clear();
      for (const auto& entry : n.at("attributes")) {
        if (!entry.is_string()) config_error("attribute names must be strings");
        config.nbr_attributes.push_back(
            parse_attribute(entry.get<std::string>()));
      }
      if (config.nbr_attributes.empty()) {
        config_error("'attributes' must not be empty");
      }
    }
    if (n.contains("interactions")) {
      if (!n.at("interactions").is_array()) {
        config_error("'interactions' must be an array");
      }
      for (const auto& pair : n.at("interactions")) {
        if (!pair.is_array() || pair.size() != 2 || !pair.at(0).is_string() ||
            !pair.at(1).is_string()) {
          config_error("each interaction must be a pair of attribute names");
        }
        config.nbr_interactions.emplace_back(
            parse_attribute(pair.at(0).get<std::string>()),
            parse_attribute(pair.at(1).get<std::string>()));
      }
    }
    config.nbr_screen_interactions =
        get_bool(n, "screen_interactions", config.nbr_screen_interactions);
    config.nbr_screening_p =
        get_number(n, "screening_p", config.nbr_screening_p);
  }

  if (root.contains("reconstruct")) {
    const json& r = root.at("reconstruct");
    check_keys(r, "reconstruct",
               {"conditions", "extraction_temperature",
                "reconstruction_temperature", "max_output_tokens"});
    if (r.contains("conditions")) {
      if (!r.at("conditions").is_array()) {
        config_error("'conditions' must be an array");
      }
      config.conditions.clear();
      for (const auto& entry : r.at("conditions")) {
        if (!entry.is_string()) config_error("condition names must be strings");
        auto condition = condition_from_name(entry.get<std::string>());
        if (!condition) {
          config_error("unknown condition '" + entry.get<std::string>() + "'");
        }
        config.conditions.push_back(*condition);
      }
      if (config.conditions.empty()) {
        config_error("'conditions' must not be empty");
      }
    }
    config.extraction_temperature =
        get_number(r, "extraction_temperature", config.extraction_temperature);
    config.reconstruction_temperature = get_number(
        r, "reconstruction_temperature", config.reconstruction_temperature);
    config.max_output_tokens =
        get_int(r, "max_output_tokens", config.max_output_tokens);
  }

  if (root.contains("evaluate")) {
    const json& e = root.at("evaluate");
    check_keys(e, "evaluate", {"sampling_runs"});
    config.sampling_runs = get_int(e, "sampling_runs", config.sampling_runs);
    if (config.sampling_runs < 1) config_error("'sampling_runs' must be >= 1");
  }

  if (root.contains("backend")) {
    const json& b = root.at("backend");
    check_keys(b, "backend",
               {"mock", "mock_bias", "requests_per_minute", "retry"});
    config.mock_backend = get_bool(b, "mock", config.mock_backend);
    if (b.contains("mock_bias")) {
      const json& m = b.at("mock_bias");
      check_keys(m, "mock_bias", {"mode", "truth_p"});
      std::string mode = get_string(m, "mode", "uniform");
      if (mode == "uniform") {
        config.mock_bias.mode = MockBias::Mode::kUniform;
      } else if (mode == "truth") {
        config.mock_bias.mode = MockBias::Mode::kTruth;
      } else {
        config_error("mock_bias mode must be 'uniform' or 'truth'");
      }
      config.mock_bias.truth_p = get_number(m, "truth_p", 1.0);
      if (config.mock_bias.truth_p < 0.0 || config.mock_bias.truth_p > 1.0) {
        config_error("'truth_p' must lie in [0, 1]");
      }
    }
    config.requests_per_minute =
        get_number(b, "requests_per_minute", config.requests_per_minute);
    if (b.contains("retry")) {
      const json& t = b.at("retry");
      check_keys(t, "retry",
                 {"max_attempts", "initial_backoff_ms", "backoff_multiplier",
                  "max_backoff_ms"});
      config.retry.max_attempts =
          get_int(t, "max_attempts", config.retry.max_attempts);
      config.retry.initial_backoff_ms =
          get_int(t, "initial_backoff_ms", config.retry.initial_backoff_ms);
      config.retry.backoff_multiplier = get_number(
          t, "backoff_multiplier", config.retry.backoff_multiplier);
      config.retry.max_backoff_ms =
          get_int(t, "max_backoff_ms", config.retry.max_backoff_ms);
    }
  }

  return config;
}

RunManifest RunManifest::open(const std::string& path, const Config& config,
                              std::uint64_t seed) {
  RunManifest manifest;
  manifest.path_ = path;
  if (fs::exists(path)) {
    try {
      manifest.data_ = json::parse(read_text_file(path));
    } catch (const json::parse_error&) {
      manifest.data_ = json::object();
    }
  }
  if (!manifest.data_.is_object()) manifest.data_ = json::object();
  manifest.data_["tool"] = "adaudit";
  manifest.data_["created"] = manifest_time();
  manifest.data_["seed"] = seed;
  manifest.data_["config"] = config.snapshot;
  if (!manifest.data_.contains("stages")) {
    manifest.data_["stages"] = json::object();
  }
  return manifest;
}

void RunManifest::record_stage(const std::string& stage,
                               const std::vector<std::string>& inputs,
                               const std::vector<std::string>& outputs,
                               const json& metrics) {
  json entry;
  entry["inputs"] = json::object();
  for (const auto& path : inputs) {
    entry["inputs"][path] = file_digest(path);
  }
  entry["outputs"] = json::object();
  for (const auto& path : outputs) {
    entry["outputs"][fs::path(path).filename().string()] = file_digest(path);
  }
  entry["metrics"] = metrics;
  data_["stages"][stage] = entry;
}

void RunManifest::save() const {
  fs::create_directories(fs::path(path_).parent_path());
  write_text_file(path_, data_.dump(2) + "\n");
}

Pipeline::Pipeline(const PipelineOptions& options)
    : options_(options),
      config_(Config::load(options.config_path)),
      manifest_(RunManifest::open(
          (fs::path(config_.output_dir) / "manifest.json").string(), config_,
          options.seed)) {
  if (options_.jobs < 1) {
    throw std::invalid_argument("jobs must be >= 1");
  }
  if (options_.force_mock) config_.mock_backend = true;
}

const std::vector<std::string>& Pipeline::stage_names() {
  static const std::vector<std::string> kNames = {
      "sessionize", "features", "audit", "nbr", "reconstruct", "evaluate"};
  return kNames;
}

std::string Pipeline::artifact(const std::string& name) const {
  return (fs::path(config_.output_dir) / name).string();
}

void Pipeline::require_artifact(const std::string& name,
                                const std::string& producing_stage) const {
  if (!fs::exists(artifact(name))) {
    throw PipelineError("missing artifact '" + artifact(name) +
                        "'; run `adaudit " + producing_stage + "` first");
  }
}

CohortDataset Pipeline::load_cohort_artifact() const {
  auto impressions =
      parse_impressions(artifact("cohort.jsonl"), ImpressionFormat::kJsonl);
  auto profiles = load_profiles(config_.profiles_path);
  return make_cohort(std::move(impressions), std::move(profiles));
}

std::unique_ptr<LlmClient> Pipeline::make_client() const {
  std::shared_ptr<LlmBackend> backend;
  if (config_.mock_backend) {
    auto subjects =
        std::make_shared<const std::map<std::string, DemographicProfile>>(
            load_profiles(config_.profiles_path));
    auto taxonomy = IabTaxonomy::load(config_.taxonomy_path);
    backend = std::make_shared<MockBackend>(options_.seed, config_.mock_bias,
                                            std::move(subjects),
                                            taxonomy.entries());
  } else {
    backend = std::make_shared<HttpBackend>();
  }
  // Separate cache roots per backend so switching backends cannot replay
  // the other's responses.
  std::string cache_root =
      (fs::path(config_.cache_dir) / backend->name()).string();
  return std::make_unique<LlmClient>(std::move(backend), cache_root,
                                     config_.retry,
                                     config_.requests_per_minute);
}

void Pipeline::run(const std::string& stage, std::ostream& out) {
  std::vector<std::string> plan;
  if (stage == "all") {
    plan = stage_names();
  } else if (std::find(stage_names().begin(), stage_names().end(), stage) !=
             stage_names().end()) {
    plan.push_back(stage);
  } else {
    throw PipelineError("unknown stage '" + stage +
                        "'; expected one of: sessionize, features, audit, "
                        "nbr, reconstruct, evaluate, all");
  }

  if (options_.dry_run) {
    const std::string nbr_out = "nbr_" + category_slug(config_.nbr_category) +
                                ".csv";
    std::string prediction_outputs;
    for (Condition c : config_.conditions) {
      prediction_outputs += " user_predictions_" +
                            std::string(condition_name(c)) + ".jsonl";
    }
    for (const auto& name : plan) {
      if (name == "sessionize") {
        out << "plan sessionize: reads " << config_.impressions_path << ", "
            << config_.profiles_path
            << "; writes cohort.jsonl sessions.jsonl session_report.csv\n";
      } else if (name == "features") {
        out << "plan features: reads cohort.jsonl, " << config_.taxonomy_path
            << "; writes features.jsonl\n";
      } else if (name == "audit") {
        out << "plan audit: reads cohort.jsonl features.jsonl; writes "
               "audit_report.csv\n";
      } else if (name == "nbr") {
        out << "plan nbr: reads cohort.jsonl features.jsonl; writes "
            << nbr_out << "\n";
      } else if (name == "reconstruct") {
        out << "plan reconstruct: reads cohort.jsonl sessions.jsonl "
               "features.jsonl; writes session_predictions_*.jsonl"
            << prediction_outputs << "\n";
      } else if (name == "evaluate") {
        out << "plan evaluate: reads predictions, " << config_.profiles_path
            << ", " << config_.census_prior_path
            << "; writes eval_session.csv eval_user.csv eval_lenient.csv\n";
      }
    }
    return;
  }

  fs::create_directories(config_.output_dir);
  for (const auto& name : plan) {
    if (name == "sessionize") stage_sessionize(out);
    else if (name == "features") stage_features(out);
    else if (name == "audit") stage_audit(out);
    else if (name == "nbr") stage_nbr(out);
    else if (name == "reconstruct") stage_reconstruct(out);
    else if (name == "evaluate") stage_evaluate(out);
    manifest_.save();
  }
}

void Pipeline::stage_sessionize(std::ostream& out) {
  auto raw = parse_impressions(config_.impressions_path);
  const std::size_t n_raw = raw.size();
  auto kept = filter_source(std::move(raw), config_.source);
  const std::size_t n_source = kept.size();
  auto profiles = load_profiles(config_.profiles_path);
  auto cohort = make_cohort(std::move(kept), std::move(profiles));

  auto result = sessionize_cohort(cohort, config_.sessionizer, options_.jobs);

  write_impressions_jsonl(artifact("cohort.jsonl"), cohort.impressions);
  write_sessions_jsonl(artifact("sessions.jsonl"), result.sessions);
  write_session_report_csv(artifact("session_report.csv"), result.report);

  json metrics;
  metrics["impressions_read"] = n_raw;
  metrics["impressions_source_kept"] = n_source;
  metrics["impressions_dropped_without_profile"] =
      cohort.dropped_without_profile;
  metrics["cohort_impressions"] = cohort.impressions.size();
  metrics["theta_global_seconds"] = result.theta_global;
  metrics["theta_used_fallback"] = result.used_fallback;
  metrics["sessions_total"] = result.counts.sessions_total;
  metrics["sessions_dropped_short"] = result.counts.sessions_dropped_short;
  metrics["sessions_dropped_long"] = result.counts.sessions_dropped_long;
  metrics["sessions_dropped_with_user"] =
      result.counts.sessions_dropped_with_user;
  metrics["sessions_kept"] = result.counts.sessions_kept;
  metrics["users_total"] = result.counts.users_total;
  metrics["users_kept"] = result.counts.users_kept;
  manifest_.record_stage(
      "sessionize", {config_.impressions_path, config_.profiles_path},
      {artifact("cohort.jsonl"), artifact("sessions.jsonl"),
       artifact("session_report.csv")},
      metrics);

  out << "sessionize: " << n_raw << " impressions, " << n_source << " from '"
      << config_.source << "', " << cohort.impressions.size()
      << " with profiles; theta=" << format_fixed(result.theta_global, 1)
      << "s" << (result.used_fallback ? " (fallback)" : "") << "; kept "
      << result.counts.sessions_kept << "/" << result.counts.sessions_total
      << " sessions across " << result.counts.users_kept << "/"
      << result.counts.users_total << " users\n";
}

void Pipeline::stage_features(std::ostream& out) {
  require_artifact("cohort.jsonl", "sessionize");
  auto cohort = load_cohort_artifact();
  auto taxonomy = IabTaxonomy::load(config_.taxonomy_path);
  auto client = make_client();
  SamplingSettings settings{config_.extraction_temperature,
                            config_.max_output_tokens};
  std::string template_text = read_text_file(
      (fs::path(config_.prompts_dir) / "feature_extraction.txt").string());

  auto features = extract_corpus(cohort.impressions, taxonomy, *client,
                                 template_text, settings, options_.jobs);
  write_features_jsonl(artifact("features.jsonl"), features);

  json metrics;
  metrics["ads"] = features.size();
  manifest_.record_stage("features",
                         {artifact("cohort.jsonl"), config_.taxonomy_path},
                         {artifact("features.jsonl")}, metrics);

  auto stats = client->stats();
  out << "features: " << features.size() << " ads ("
      << stats.cache_hits << " cache hits, " << stats.backend_calls
      << " backend calls, " << stats.retries << " retries)\n";
}

void Pipeline::stage_audit(std::ostream& out) {
  require_artifact("cohort.jsonl", "sessionize");
  require_artifact("features.jsonl", "features");
  auto cohort = load_cohort_artifact();
  auto taxonomy = IabTaxonomy::load(config_.taxonomy_path);
  auto features = read_features_jsonl(artifact("features.jsonl"), taxonomy);

  const std::int64_t epoch = default_epoch(cohort);
  auto cells = build_cells(cohort, features, epoch);
  auto rows = audit_report(cells, cohort.profiles, config_.audit_categories);
  write_audit_csv(artifact("audit_report.csv"), rows);

  std::size_t active = 0;
  for (const auto& cell : cells) {
    if (cell.active()) ++active;
  }

  json metrics;
  metrics["epoch"] = format_timestamp(epoch);
  metrics["user_weeks"] = cells.size();
  metrics["active_user_weeks"] = active;
  metrics["target_categories"] = config_.audit_categories;
  manifest_.record_stage(
      "audit", {artifact("cohort.jsonl"), artifact("features.jsonl")},
      {artifact("audit_report.csv")}, metrics);

  out << "audit: " << cells.size() << " user-weeks (" << active
      << " active) across " << config_.audit_categories.size()
      << " categories\n";
}

void Pipeline::stage_nbr(std::ostream& out) {
  require_artifact("cohort.jsonl", "sessionize");
  require_artifact("features.jsonl", "features");
  auto cohort = load_cohort_artifact();
  auto taxonomy = IabTaxonomy::load(config_.taxonomy_path);
  auto features = read_features_jsonl(artifact("features.jsonl"), taxonomy);

  const std::int64_t epoch = default_epoch(cohort);
  auto cells = build_cells(cohort, features, epoch);
  auto panel = build_panel(cells, cohort.profiles, config_.nbr_category,
                           config_.nbr_attributes);
  if (panel.empty()) {
    throw PipelineError("no active user-weeks eligible for regression on '" +
                        config_.nbr_category + "'");
  }

  ModelSpec main_spec;
  main_spec.attributes = config_.nbr_attributes;
  auto dm = design_matrix(panel, main_spec);
  auto fit = fit_nb2(dm.x, dm.y, dm.offset);
  if (fit.flagged("not_estimable")) {
    throw PipelineError("outcome '" + config_.nbr_category +
                        "' is all zeros in the panel; nothing to estimate");
  }
  auto cov = cluster_robust_cov(dm.x, dm.y, dm.offset, fit.beta, fit.alpha,
                                dm.cluster);
  auto rows = irr_table(fit.beta, cov, dm.columns);

  std::vector<std::pair<Attribute, Attribute>> kept_pairs;
  if (!config_.nbr_interactions.empty()) {
    kept_pairs = config_.nbr_screen_interactions
                     ? screen_interactions(rows, config_.nbr_interactions,
                                           config_.nbr_screening_p)
                     : config_.nbr_interactions;
    if (!kept_pairs.empty()) {
      ModelSpec full_spec = main_spec;
      full_spec.interactions = kept_pairs;
      dm = design_matrix(panel, full_spec);
      fit = fit_nb2(dm.x, dm.y, dm.offset);
      cov = cluster_robust_cov(dm.x, dm.y, dm.offset, fit.beta, fit.alpha,
                               dm.cluster);
      rows = irr_table(fit.beta, cov, dm.columns);
    }
  }

  const std::string table_name =
      "nbr_" + category_slug(config_.nbr_category) + ".csv";
  write_irr_csv(artifact(table_name), rows);

  json metrics;
  metrics["category"] = config_.nbr_category;
  metrics["panel_rows"] = panel.size();
  metrics["clusters"] = dm.cluster_ids.size();
  metrics["coefficients"] = static_cast<int>(dm.x.cols());
  metrics["alpha"] = fit.alpha;
  metrics["loglik"] = fit.loglik;
  metrics["converged"] = fit.converged;
  metrics["iterations"] = fit.iterations;
  metrics["flags"] = fit.flags;
  metrics["dropped_empty_columns"] = dm.dropped_empty_columns;
  json screened = json::array();
  for (const auto& [a, b] : kept_pairs) {
    screened.push_back(std::string(attribute_key(a)) + ":" +
                       std::string(attribute_key(b)));
  }
  metrics["interactions"] = screened;
  manifest_.record_stage(
      "nbr", {artifact("cohort.jsonl"), artifact("features.jsonl")},
      {artifact(table_name)}, metrics);

  out << "nbr: " << panel.size() << " rows, " << dm.cluster_ids.size()
      << " clusters, alpha=" << format_fixed(fit.alpha, 4)
      << (fit.converged ? "" : " [not converged]");
  for (const auto& flag : fit.flags) out << " [" << flag << "]";
  out << "\n";
}

void Pipeline::stage_reconstruct(std::ostream& out) {
  require_artifact("cohort.jsonl", "sessionize");
  require_artifact("sessions.jsonl", "sessionize");
  require_artifact("features.jsonl", "features");
  auto cohort = load_cohort_artifact();
  auto sessions = read_sessions_jsonl(artifact("sessions.jsonl"), cohort);
  auto taxonomy = IabTaxonomy::load(config_.taxonomy_path);
  auto features = read_features_jsonl(artifact("features.jsonl"), taxonomy);
  auto templates = PromptTemplates::load(config_.prompts_dir);
  auto client = make_client();
  SamplingSettings settings{config_.reconstruction_temperature,
                            config_.max_output_tokens};

  // Session-scope runs: the requested presentation conditions, plus
  // sequential regardless, because user-scope prompts consume the
  // summaries produced by the sequential pass.
  std::vector<Condition> session_conditions = {Condition::kSequential};
  for (Condition c : config_.conditions) {
    if (c == Condition::kShuffled) session_conditions.push_back(c);
  }

  std::vector<std::string> outputs;
  json metrics;
  std::vector<SessionPrediction> sequential_sessions;
  for (Condition c : session_conditions) {
    auto predictions = predict_sessions(sessions, features, *client,
                                        templates, c, options_.seed, settings,
                                        options_.jobs);
    const std::string name = "session_predictions_" +
                             std::string(condition_name(c)) + ".jsonl";
    write_session_predictions_jsonl(artifact(name), predictions);
    outputs.push_back(artifact(name));
    std::size_t abstained = 0;
    for (const auto& p : predictions) {
      for (const auto& [attribute, answer] : p.answers) {
        (void)attribute;
        if (answer == kAbstainMarker) ++abstained;
      }
    }
    metrics["session_" + std::string(condition_name(c))] = {
        {"predictions", predictions.size()}, {"abstentions", abstained}};
    if (c == Condition::kSequential) sequential_sessions = std::move(predictions);
  }

  for (Condition c : config_.conditions) {
    auto predictions =
        predict_users(sequential_sessions, *client, templates, c,
                      options_.seed, settings, options_.jobs);
    const std::string name =
        "user_predictions_" + std::string(condition_name(c)) + ".jsonl";
    write_user_predictions_jsonl(artifact(name), predictions);
    outputs.push_back(artifact(name));
    std::size_t abstained = 0;
    for (const auto& p : predictions) {
      for (const auto& [attribute, answer] : p.answers) {
        (void)attribute;
        if (answer == kAbstainMarker) ++abstained;
      }
    }
    metrics["user_" + std::string(condition_name(c))] = {
        {"predictions", predictions.size()}, {"abstentions", abstained}};
  }

  manifest_.record_stage("reconstruct",
                         {artifact("sessions.jsonl"),
                          artifact("features.jsonl")},
                         outputs, metrics);

  auto stats = client->stats();
  out << "reconstruct: " << sequential_sessions.size() << " sessions, "
      << session_conditions.size() << " session conditions, "
      << config_.conditions.size() << " user conditions ("
      << stats.cache_hits << " cache hits, " << stats.backend_calls
      << " backend calls)\n";
}

void Pipeline::stage_evaluate(std::ostream& out) {
  auto profiles = load_profiles(config_.profiles_path);
  auto prior = CensusPrior::load(config_.census_prior_path);
  const auto& rules = HarmonizationRules::defaults();

  std::vector<Condition> session_conditions = {Condition::kSequential};
  for (Condition c : config_.conditions) {
    if (c == Condition::kShuffled) session_conditions.push_back(c);
  }
  std::map<Condition, std::vector<SessionPrediction>> session_predictions;
  for (Condition c : session_conditions) {
    const std::string name = "session_predictions_" +
                             std::string(condition_name(c)) + ".jsonl";
    require_artifact(name, "reconstruct");
    session_predictions[c] = read_session_predictions_jsonl(artifact(name));
  }
  std::map<Condition, std::vector<UserPrediction>> user_predictions;
  for (Condition c : config_.conditions) {
    const std::string name =
        "user_predictions_" + std::string(condition_name(c)) + ".jsonl";
    require_artifact(name, "reconstruct");
    user_predictions[c] = read_user_predictions_jsonl(artifact(name));
  }

  std::vector<std::string> header = {"method", "metric"};
  for (Attribute a : kAllAttributes) {
    header.push_back(std::string(attribute_key(a)));
  }

  // Session scope: uniform-random floor, then each presentation condition.
  {
    std::ofstream file(artifact("eval_session.csv"), std::ios::binary);
    CsvWriter csv(file);
    csv.write_row(header);

    std::vector<std::string> acc_row = {"random", "accuracy"};
    std::vector<std::string> f1_row = {"random", "macro_f1"};
    std::vector<std::string> n_row = {"random", "n"};
    for (Attribute a : kAllAttributes) {
      auto columns = session_scope(session_predictions[Condition::kSequential],
                                   profiles, a);
      auto baseline = baseline_random(
          a, columns.truths, config_.sampling_runs,
          mix_seed(options_.seed,
                   "eval#random#" + std::string(attribute_key(a))));
      acc_row.push_back(format_fixed(baseline.accuracy, 2));
      f1_row.push_back(format_fixed(baseline.f1_mean, 2));
      n_row.push_back(std::to_string(columns.truths.size()));
    }
    csv.write_row(acc_row);
    csv.write_row(f1_row);
    csv.write_row(n_row);

    for (Condition c : session_conditions) {
      std::vector<std::string> acc = {std::string(condition_name(c)),
                                      "accuracy"};
      std::vector<std::string> f1 = {std::string(condition_name(c)),
                                     "macro_f1"};
      std::vector<std::string> n = {std::string(condition_name(c)), "n"};
      for (Attribute a : kAllAttributes) {
        auto columns = session_scope(session_predictions[c], profiles, a);
        auto scores = score_exact(columns.predictions, columns.truths);
        acc.push_back(format_fixed(scores.accuracy, 2));
        f1.push_back(format_fixed(scores.macro_f1, 2));
        n.push_back(std::to_string(scores.n));
      }
      csv.write_row(acc);
      csv.write_row(f1);
      csv.write_row(n);
    }
  }

  // User scope on harmonized categories: register-prior baselines, then
  // each requested condition.
  json mode_levels;
  {
    std::ofstream file(artifact("eval_user.csv"), std::ios::binary);
    CsvWriter csv(file);
    csv.write_row(header);

    const auto& reference_users = user_predictions[config_.conditions.front()];
    std::vector<std::string> mode_acc = {"prior_mode", "accuracy"};
    std::vector<std::string> mode_f1 = {"prior_mode", "macro_f1"};
    std::vector<std::string> mode_n = {"prior_mode", "n"};
    std::vector<std::string> sample_acc = {"prior_sampling", "accuracy"};
    std::vector<std::string> sample_f1 = {"prior_sampling", "macro_f1"};
    std::vector<std::string> sample_n = {"prior_sampling", "n"};
    for (Attribute a : kAllAttributes) {
      auto columns = user_scope(reference_users, profiles, a, rules);
      auto mode = baseline_prior_mode(prior, a, columns.truths);
      mode_acc.push_back(format_fixed(mode.scores.accuracy, 2));
      mode_f1.push_back(format_fixed(mode.scores.macro_f1, 2));
      mode_n.push_back(std::to_string(mode.scores.n));
      mode_levels[std::string(attribute_key(a))] = mode.level;

      auto sampled = baseline_prior_sampling(
          prior, a, columns.truths, config_.sampling_runs,
          mix_seed(options_.seed,
                   "eval#prior_sampling#" + std::string(attribute_key(a))));
      sample_acc.push_back(
          mean_std_cell(sampled.accuracy_mean, sampled.accuracy_std));
      sample_f1.push_back(mean_std_cell(sampled.f1_mean, sampled.f1_std));
      sample_n.push_back(std::to_string(columns.truths.size()));
    }
    csv.write_row(mode_acc);
    csv.write_row(mode_f1);
    csv.write_row(mode_n);
    csv.write_row(sample_acc);
    csv.write_row(sample_f1);
    csv.write_row(sample_n);

    for (Condition c : config_.conditions) {
      std::vector<std::string> acc = {std::string(condition_name(c)),
                                      "accuracy"};
      std::vector<std::string> f1 = {std::string(condition_name(c)),
                                     "macro_f1"};
      std::vector<std::string> n = {std::string(condition_name(c)), "n"};
      for (Attribute a : kAllAttributes) {
        auto columns = user_scope(user_predictions[c], profiles, a, rules);
        auto scores = score_exact(columns.predictions, columns.truths);
        acc.push_back(format_fixed(scores.accuracy, 2));
        f1.push_back(format_fixed(scores.macro_f1, 2));
        n.push_back(std::to_string(scores.n));
      }
      csv.write_row(acc);
      csv.write_row(f1);
      csv.write_row(n);
    }
  }

  // Ordinal attributes rescored with adjacent-bracket credit.
  {
    std::ofstream file(artifact("eval_lenient.csv"), std::ios::binary);
    CsvWriter csv(file);
    csv.write_row({"scope", "method", "attribute", "n", "exact_accuracy",
                   "lenient_accuracy", "exact_macro_f1", "lenient_macro_f1"});
    const std::array<Attribute, 2> ordinal = {Attribute::kAge,
                                              Attribute::kIncome};
    for (Condition c : session_conditions) {
      for (Attribute a : ordinal) {
        auto columns = session_scope(session_predictions[c], profiles, a);
        auto exact = score_exact(columns.predictions, columns.truths);
        auto lenient = score_lenient(a, columns.predictions, columns.truths);
        csv.write_row({"session", std::string(condition_name(c)),
                       std::string(attribute_key(a)),
                       std::to_string(exact.n),
                       format_fixed(exact.accuracy, 2),
                       format_fixed(lenient.accuracy, 2),
                       format_fixed(exact.macro_f1, 2),
                       format_fixed(lenient.macro_f1, 2)});
      }
    }
    for (Condition c : config_.conditions) {
      for (Attribute a : ordinal) {
        auto columns = user_scope(user_predictions[c], profiles, a, rules);
        auto exact = score_exact(columns.predictions, columns.truths);
        auto lenient = score_lenient(a, columns.predictions, columns.truths);
        csv.write_row({"user", std::string(condition_name(c)),
                       std::string(attribute_key(a)),
                       std::to_string(exact.n),
                       format_fixed(exact.accuracy, 2),
                       format_fixed(lenient.accuracy, 2),
                       format_fixed(exact.macro_f1, 2),
                       format_fixed(lenient.macro_f1, 2)});
      }
    }
  }

  std::vector<std::string> inputs = {config_.profiles_path,
                                     config_.census_prior_path};
  for (Condition c : session_conditions) {
    inputs.push_back(artifact("session_predictions_" +
                              std::string(condition_name(c)) + ".jsonl"));
  }
  for (Condition c : config_.conditions) {
    inputs.push_back(artifact("user_predictions_" +
                              std::string(condition_name(c)) + ".jsonl"));
  }
  json metrics;
  metrics["sampling_runs"] = config_.sampling_runs;
  metrics["prior_mode_levels"] = mode_levels;
  manifest_.record_stage("evaluate", inputs,
                         {artifact("eval_session.csv"),
                          artifact("eval_user.csv"),
                          artifact("eval_lenient.csv")},
                         metrics);

  out << "evaluate: wrote eval_session.csv eval_user.csv eval_lenient.csv\n";
}

}  // namespace adaudit
