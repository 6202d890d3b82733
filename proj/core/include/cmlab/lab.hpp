#pragma once

#include <array>
#include <nlohmann/json_fwd.hpp>
#include <optional>
#include <string>
#include <vector>

#include "cmlab/common.hpp"
#include "cmlab/consistency.hpp"
#include "cmlab/schedule.hpp"
#include "cmlab/targets.hpp"

namespace cmlab {

inline constexpr int kReportSchemaVersion = 1;

struct SweepSpec {
  std::string variable;       // n | M | T | eps
  std::vector<double> grid;   // strictly increasing, >= 4 cells
};

struct ExperimentConfig {
  TargetDistribution target;
  Schedule schedule;
  int n_coarse = 8;
  int m_steps = 8;            // fine steps per coarse interval
  std::string method = "isolate";  // isolate | distill
  SweepSpec sweep;
  int trials = 5;
  int m_eval = 20000;
  int n_data = 64;            // dataset size when n is not the sweep variable
  uint64_t seed = 1;
  std::string w1_method = "sorted_1d";
  std::optional<std::array<double, 2>> slope_band;  // overrides the per-sweep default

  void validate() const;
};

// Built-in hyperparameter recipes; scale in (0, 1] shrinks the exploding
// literal values (T, M growth rates) to desk scale.
ExperimentConfig preset_config(const std::string& name, int n, int dim, double scale);

struct SlopeFit {
  double slope = 0.0;
  double intercept = 0.0;
  double stderr_ = 0.0;
  std::vector<bool> used;  // per input point: above floor and fitted
};

// OLS on (log x, log y) restricted to y > floor. Throws
// InsufficientDataError when fewer than 3 points survive.
SlopeFit fit_loglog_slope(const std::vector<double>& xs, const std::vector<double>& ys,
                          double floor);
// Same restriction, but regressing log y on raw x (exponential decay fits).
SlopeFit fit_semilog_slope(const std::vector<double>& xs, const std::vector<double>& ys,
                           double floor);

struct CellResult {
  double x = 0.0;                // swept value
  std::vector<double> trial_w1;  // one per trial; NaN marks a diverged trial
  double mean = 0.0;
  double stddev = 0.0;
  double stderr_ = 0.0;
  bool excluded = false;  // below noise floor (or all trials diverged)
  int diverged = 0;
};

struct RateReport {
  std::string sweep_variable;
  std::vector<CellResult> cells;
  double noise_floor = 0.0;
  SlopeFit fit;
  std::array<double, 2> band{0.0, 0.0};
  bool pass = false;
  std::string fit_kind;  // loglog | semilog
  uint64_t seed = 0;
  std::string config_hash;
  std::vector<std::string> notes;
};

RateReport rate_study_n(const ExperimentConfig& cfg);
RateReport rate_study_M(const ExperimentConfig& cfg);
RateReport rate_study_T(const ExperimentConfig& cfg);
RateReport rate_study_eps(const ExperimentConfig& cfg);

struct ContractionRow {
  double t = 0.0;
  double lhs = 0.0;         // W1(X_t, empirical forward marginal)
  double rhs = 0.0;         // m(t) * W1(p_data, p_hat)
  double combined_stderr = 0.0;
  bool ok = false;
};

struct ContractionReport {
  std::vector<ContractionRow> rows;
  bool pass = false;
  std::string config_hash;
};

ContractionReport check_contraction(const ExperimentConfig& cfg);

struct IdentityCheck {
  std::string name;
  double worst = 0.0;     // worst observed deviation (metric named per check)
  double tolerance = 0.0;
  bool pass = false;
};

struct IdentityReport {
  std::vector<IdentityCheck> checks;
  bool pass = false;
  std::string config_hash;
};

// Bundled exact-identity probes (posterior-mean identity, Jacobian vs finite
// differences, solver composition, Lipschitz certificates). With
// inject_fault = true a constant 0.1 is added to the score and the report is
// expected to fail (negative control).
IdentityReport check_identities(const ExperimentConfig& cfg, bool inject_fault = false);

struct TailsReport {
  TailDecayReport decay;
  bool two_point_zero = true;  // bounded-support case identically zero
  bool pass = false;
  std::string config_hash;
};

TailsReport check_tails(const ExperimentConfig& cfg);

// FNV-1a over the canonical JSON dump of the config.
std::string config_hash(const ExperimentConfig& cfg);

void to_json(nlohmann::json& j, const ExperimentConfig& cfg);
void from_json(const nlohmann::json& j, ExperimentConfig& cfg);
void to_json(nlohmann::json& j, const RateReport& r);
void to_json(nlohmann::json& j, const ContractionReport& r);
void to_json(nlohmann::json& j, const IdentityReport& r);
void to_json(nlohmann::json& j, const TailsReport& r);

struct RunOptions {
  std::string out_dir = ".";
  std::optional<uint64_t> seed_override;
  int threads = 1;
};

// Executes a named command ("rates --sweep X" -> command "rates", arg X;
// "check" with arg identities|contraction|tails; "train" with arg cd|ct;
// "sample"). Writes report.json, cells.csv, plot.csv into out_dir. Returns
// the process exit code: 0 pass, 1 assertion fail, 2 config error,
// 3 divergence.
int run_command(const std::string& command, const std::string& arg,
                const ExperimentConfig& cfg, const RunOptions& opts);

ExperimentConfig load_config(const std::string& path);

}  // namespace cmlab
