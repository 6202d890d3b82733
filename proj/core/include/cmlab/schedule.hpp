#pragma once

#include <nlohmann/json_fwd.hpp>
#include <vector>

#include "cmlab/common.hpp"

namespace cmlab {

// Noise schedule beta(t) of the variance-preserving forward process.
// Forward marginal coefficients: m(t) = exp(-1/2 int_0^t beta),
// sigma(t)^2 = 1 - m(t)^2. Closed-form integrals are canonical; numeric
// quadrature exists only as a test oracle.
struct Schedule {
  enum class Kind { Constant, Linear };

  Kind kind = Kind::Constant;
  double beta_min = 0.0;
  double beta_max = 0.0;
  double T = 0.0;
  double eps = 0.0;

  static Schedule constant(double beta, double T, double eps);
  static Schedule linear(double beta_min, double beta_max, double T, double eps);

  double beta_at(double t) const;
  double integral_beta(double t) const;  // int_0^t beta(s) ds, closed form
  double mean_coeff(double t) const;     // m(t)
  double std_coeff(double t) const;      // sigma(t)

  void validate() const;
};

// Uniform discretization eps = t_0 < ... < t_N = T with the coarse sub-grid
// tau_k = t_{kM}, N = N' * M.
struct TimeGrid {
  int N = 0;
  int N_coarse = 0;
  int M = 0;
  std::vector<double> times;       // size N+1
  std::vector<int> coarse_index;   // size N_coarse+1, k -> kM

  double dt() const { return (times.back() - times.front()) / N; }
  double tau(int k) const { return times[coarse_index[k]]; }
};

TimeGrid build_grid(const Schedule& s, int N_coarse, int M);

void to_json(nlohmann::json& j, const Schedule& s);
void from_json(const nlohmann::json& j, Schedule& s);

}  // namespace cmlab
