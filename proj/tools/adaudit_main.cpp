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

#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "adaudit/pipeline.hpp"

namespace {

void add_stage(CLI::App& app, const std::string& name,
               const std::string& description,
               adaudit::PipelineOptions& options, std::string& stage) {
  CLI::App* sub = app.add_subcommand(name, description);
  sub->add_option("--config", options.config_path, "run configuration JSON")
      ->required();
  sub->add_option("--seed", options.seed, "run seed (default 42)");
  sub->add_option("--jobs", options.jobs,
                  "worker threads; results do not depend on this");
  sub->add_flag("--dry-run", options.dry_run,
                "print the plan without reading or writing artifacts");
  sub->add_flag("--mock-backend", options.force_mock,
                "use the offline deterministic backend regardless of config");
  sub->callback([&stage, name]() { stage = name; });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "ad exposure audit: sessionization, feature extraction, demographic "
      "skew measurement, and profile reconstruction"};
  app.require_subcommand(1);

  adaudit::PipelineOptions options;
  std::string stage;
  add_stage(app, "sessionize",
            "split impression logs into per-user browsing sessions", options,
            stage);
  add_stage(app, "features", "extract ad features with the model backend",
            options, stage);
  add_stage(app, "audit", "per-demographic exposure coverage and intensity",
            options, stage);
  add_stage(app, "nbr",
            "negative binomial exposure regression with clustered errors",
            options, stage);
  add_stage(app, "reconstruct",
            "session- and user-scope demographic predictions", options, stage);
  add_stage(app, "evaluate", "score predictions against survey ground truth",
            options, stage);
  add_stage(app, "all", "run every stage in order", options, stage);

  CLI11_PARSE(app, argc, argv);

  try {
    adaudit::Pipeline pipeline(options);
    pipeline.run(stage, std::cout);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
