#pragma once

#include <nlohmann/json_fwd.hpp>
#include <optional>
#include <string>

#include "cmlab/common.hpp"
#include "cmlab/targets.hpp"

namespace cmlab {

inline constexpr int kAssignmentCap = 512;

struct W1Estimate {
  double value = 0.0;
  std::string method;             // sorted_1d | assignment | sliced
  std::optional<double> stderr_;  // Monte Carlo error (sliced only)
  int n_a = 0;
  int n_b = 0;
  std::optional<int> n_proj;
};

// Exact W1 between 1-d empirical measures: mean |sorted a - sorted b| for
// equal sizes; piecewise-constant quantile functions integrated exactly
// otherwise.
W1Estimate w1_1d(const PointCloud& a, const PointCloud& b);

// Exact W1 for any d via min-cost perfect matching; sizes must be equal
// and at most kAssignmentCap.
W1Estimate w1_assignment(const PointCloud& a, const PointCloud& b);

// Min-cost matching indices (row of a -> row of b), exposed so training can
// freeze a coupling and differentiate through the matched distances.
std::vector<int> assignment_matching(const PointCloud& a, const PointCloud& b);

// Average of w1_1d over n_proj random unit projections, with MC stderr.
W1Estimate w1_sliced(const PointCloud& a, const PointCloud& b, int n_proj, uint64_t seed);

// Integral over u in (0,1) of |empirical quantile of a - exact quantile of
// td|, composite midpoint rule.
double w1_to_target_1d(const PointCloud& a, const TargetDistribution& td, int quad_points);

// Radius truncation: points with |x| > R0 replaced by the origin.
PointCloud truncate_cloud(const PointCloud& a, double r0);

struct TailDecayRow {
  double r0 = 0.0;
  double replaced_mass = 0.0;
  double w1_gap = 0.0;        // W1(a, truncate(a))
  double tail_mean_bound = 0.0;  // E[|x| 1{|x|>R0}], upper-bounds the gap
};

struct TailDecayReport {
  std::vector<TailDecayRow> rows;
  bool mass_monotone = false;
  bool gap_monotone = false;
  bool gap_below_bound = false;
};

TailDecayReport tail_decay_check(const TargetDistribution& td, const std::vector<double>& r0_grid,
                                 int m, uint64_t seed);

void to_json(nlohmann::json& j, const W1Estimate& e);

}  // namespace cmlab
