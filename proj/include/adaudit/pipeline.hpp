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

#ifndef ADAUDIT_PIPELINE_HPP_
#define ADAUDIT_PIPELINE_HPP_

#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "adaudit/evaluate.hpp"
#include "adaudit/llm_client.hpp"
#include "adaudit/reconstruct.hpp"
#include "adaudit/sessionize.hpp"

namespace adaudit {

// Run configuration, loaded from a JSON file. Relative paths resolve
// against the config file's directory.
struct Config {
  std::string impressions_path;
  std::string profiles_path;
  std::string output_dir;
  std::string cache_dir;    // default: <output_dir>/cache
  std::string source = "facebook";
  std::string taxonomy_path;
  std::string prompts_dir;
  std::string census_prior_path;

  SessionizerConfig sessionizer;

  std::vector<std::string> audit_categories = {"Gambling", "Politics",
                                               "Alcohol",
                                               "Education and Careers"};

  std::string nbr_category = "Gambling";
  std::vector<Attribute> nbr_attributes{kAllAttributes.begin(),
                                        kAllAttributes.end()};
  std::vector<std::pair<Attribute, Attribute>> nbr_interactions;
  bool nbr_screen_interactions = true;
  double nbr_screening_p = 0.10;

  std::vector<Condition> conditions = {Condition::kSequential,
                                       Condition::kShuffled,
                                       Condition::kSequentialAu};
  double extraction_temperature = 0.3;
  double reconstruction_temperature = 0.0;
  int max_output_tokens = 1024;

  int sampling_runs = 1000;

  bool mock_backend = false;
  MockBias mock_bias;
  double requests_per_minute = 0.0;
  RetryPolicy retry;

  nlohmann::json snapshot;  // the raw file contents, kept for the manifest

  static Config load(const std::string& path);
};

// Accumulating record of a run: config snapshot, seed, and per-stage input
// and output digests. The creation timestamp honors the AD_AUDIT_RUN_TIME
// environment variable (epoch seconds or ISO-8601) so archived runs can be
// byte-reproducible.
class RunManifest {
 public:
  static RunManifest open(const std::string& path, const Config& config,
                          std::uint64_t seed);

  void record_stage(const std::string& stage,
                    const std::vector<std::string>& inputs,
                    const std::vector<std::string>& outputs,
                    const nlohmann::json& metrics);
  void save() const;
  const nlohmann::json& data() const { return data_; }

 private:
  std::string path_;
  nlohmann::json data_;
};

struct PipelineOptions {
  std::string config_path;
  std::uint64_t seed = 42;
  int jobs = 1;
  bool dry_run = false;
  bool force_mock = false;  // --mock-backend
};

// Stage runner. Stages communicate only through files in output_dir, so
// each subcommand can run in a separate process; a stage whose upstream
// artifact is missing fails with the command that produces it.
class Pipeline {
 public:
  explicit Pipeline(const PipelineOptions& options);

  // stage is one of: sessionize, features, audit, nbr, reconstruct,
  // evaluate, all.
  void run(const std::string& stage, std::ostream& out);

  static const std::vector<std::string>& stage_names();

 private:
  void stage_sessionize(std::ostream& out);
  void stage_features(std::ostream& out);
  void stage_audit(std::ostream& out);
  void stage_nbr(std::ostream& out);
  void stage_reconstruct(std::ostream& out);
  void stage_evaluate(std::ostream& out);

  std::string artifact(const std::string& name) const;
  void require_artifact(const std::string& name,
                        const std::string& producing_stage) const;
  CohortDataset load_cohort_artifact() const;
  std::unique_ptr<LlmClient> make_client() const;

  PipelineOptions options_;
  Config config_;
  RunManifest manifest_;
};

// "Gambling" -> "gambling", "Education and Careers" -> "education_and_careers"
std::string category_slug(const std::string& category);

}  // namespace adaudit

#endif  // ADAUDIT_PIPELINE_HPP_
