#pragma once

#include <nlohmann/json_fwd.hpp>
#include <string>
#include <vector>

#include "cmlab/common.hpp"
#include "cmlab/rng.hpp"
#include "cmlab/schedule.hpp"

namespace cmlab {

// Empirical distribution: uniformly weighted points, one per row.
struct PointCloud {
  Mat points;  // m x d

  int size() const { return static_cast<int>(points.rows()); }
  int dim() const { return static_cast<int>(points.cols()); }
};

// Closed-form synthetic targets. All expose the exact second moment and,
// in d = 1, the exact quantile function for reference W1 computation.
struct TargetDistribution {
  enum class Kind { GaussianMixture, UniformBall, TwoPoint };

  Kind kind = Kind::UniformBall;
  int dim = 1;

  // gaussian_mixture
  Mat means;                   // k x d
  std::vector<double> weights; // k, sums to 1
  std::vector<double> stds;    // k, isotropic per component

  // uniform_ball
  double radius = 1.0;

  // two_point
  Vec point_a, point_b;
  double weight_a = 0.5;

  static TargetDistribution uniform_ball(int dim, double radius);
  static TargetDistribution two_point(const Vec& a, const Vec& b, double weight_a = 0.5);
  static TargetDistribution gaussian_mixture(const Mat& means, std::vector<double> weights,
                                             std::vector<double> stds);

  Vec sample_one(Rng& rng) const;
  double second_moment() const;  // exact M2^2 = E||X||^2
  double mean_norm() const;      // E X for d = 1 (signed)

  bool has_quantile() const { return dim == 1; }
  double quantile(double u) const;  // d = 1 only
  double cdf(double x) const;       // d = 1 only

  // Assumption-style constants: (alpha1, alpha2) Gaussian-tail parameters and
  // the support radius (infinite for mixtures with positive stds).
  double tail_alpha1() const;
  double tail_alpha2() const;
  double support_radius() const;  // +inf when unbounded

  void validate() const;
};

// i.i.d. draws from a target, reproducible per (descriptor, n, seed).
struct Dataset {
  Mat points;  // n x d
  uint64_t seed = 0;
  TargetDistribution source;
  double radius = 0.0;  // max row norm, exact

  int size() const { return static_cast<int>(points.rows()); }
  int dim() const { return static_cast<int>(points.cols()); }
  PointCloud as_cloud() const { return PointCloud{points}; }
};

PointCloud sample_target(const TargetDistribution& td, int m, uint64_t seed);
Dataset make_dataset(const TargetDistribution& td, int n, uint64_t seed);

// Pushes each point through the forward kernel at time t:
// x -> m(t) x + sigma(t) z, fresh seeded noise per call.
PointCloud forward_marginal(const PointCloud& cloud, const Schedule& s, double t, uint64_t seed);

// m_batch points of the empirical forward marginal X_t: resample dataset rows
// with replacement, then apply the forward kernel.
PointCloud sample_forward(const Dataset& ds, const Schedule& s, double t, int m, uint64_t seed);

// Standard Gaussian cloud in d dimensions.
PointCloud gaussian_cloud(int m, int dim, uint64_t seed);

void to_json(nlohmann::json& j, const TargetDistribution& td);
void from_json(const nlohmann::json& j, TargetDistribution& td);

void save_dataset_csv(const Dataset& ds, const std::string& csv_path, const std::string& json_path);

}  // namespace cmlab
