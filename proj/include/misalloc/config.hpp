#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "misalloc/common.hpp"
#include "misalloc/dgp.hpp"
#include "misalloc/functionals.hpp"
#include "misalloc/gmm.hpp"
#include "misalloc/panel.hpp"

namespace misalloc {

// All problems found in a config, reported together.
class ConfigError : public ValidationError {
 public:
  explicit ConfigError(std::vector<std::string> problems);
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  std::vector<std::string> problems_;
};

struct InputConfig {
  std::string path;
  int sector_level = 3;
  ColumnMapping columns;
  // Interpolate gaps and keep complete records, using this variable for the
  // productivity sample rule. Unset: use the file as is.
  std::optional<std::string> clean_key;
};

enum class Stage { Source, Estimate, Functionals, Analytics, LaborTest, EventStudy, Report };
const char* stage_name(Stage s);

struct StageToggles {
  bool estimate = true;
  bool functionals = true;
  bool analytics = true;
  bool labor_test = false;
  bool event_study = false;
  bool report = true;
  bool enabled(Stage s) const;
};

struct BootstrapConfig {
  int replicates = 0;  // elasticity / delta standard errors; 0 = off
  int labor_replicates = 150;
  std::optional<int> stage2_draws;
  std::vector<std::string> labor_subset;
};

struct AnalyticsConfig {
  std::optional<int> base_year;
  bool gev = true;
};

struct EventStudyConfig {
  std::vector<std::string> treated_countries;
  int treatment_year = 2008;
  std::vector<Input> inputs{Input::K};
  bool covariates = false;  // adds regression-adjusted columns (log Vol(TFP), log HHI)
  int n_boot = 999;         // 0 = analytic standard errors only
};

struct RunConfig {
  std::uint64_t seed = 1;
  std::string output_dir = "out";
  std::optional<InputConfig> input;
  std::optional<DgpSpec> simulator;
  StageToggles stages;
  EstimationOptions solver;
  BootstrapConfig bootstrap;
  AnalyticsConfig analytics;
  EventStudyConfig event_study;
};

// Parses and validates; throws ConfigError listing every problem.
RunConfig parse_config(const std::string& json_text);
RunConfig load_config(const std::string& path);
// Cross-field checks (data source, stage dependencies, ranges).
std::vector<std::string> config_problems(const RunConfig& c);

}  // namespace misalloc
