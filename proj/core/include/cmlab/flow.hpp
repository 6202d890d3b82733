#pragma once

#include "cmlab/common.hpp"
#include "cmlab/schedule.hpp"
#include "cmlab/score.hpp"
#include "cmlab/targets.hpp"

namespace cmlab {

// Norm threshold past which the backward solve is declared divergent.
inline constexpr double kDivergenceGuard = 1e6;

// Drift of the probability-flow ODE run backward in time:
//   Phi(x, t) = -(beta(t)/2) x - (beta(t)/2) s(x, t).
Vec phi(const ScoreField& s, const Vec& x, double t);

// One explicit Euler step backward from time t_hi: x' = x - dt * Phi(x, t_hi).
Vec euler_step(const ScoreField& s, const Vec& x, double t_hi, double dt);

// One backward Euler-update of the fine grid, fine index i -> i-1 (1 <= i <= N).
Vec g_step(const ScoreField& s, const TimeGrid& g, int i, const Vec& x);

// Composition of the M fine steps bridging coarse index k -> k-1 (1 <= k <= N').
Vec g_multi(const ScoreField& s, const TimeGrid& g, int k, const Vec& x);

// Backward solver map applied to a state at grid time times[i_from]: full
// Euler steps down to t_1, then the final step of length t_1 - eps, so that
// starting at i_from = 0 returns the input unchanged.
Vec ddpm_solve_from(const ScoreField& s, const TimeGrid& g, const Vec& x, int i_from);
Vec ddpm_solve_from(const ScoreField& s, const TimeGrid& g, const Vec& x, double t_grid);

// Full backward solve of a sample at time T down to eps.
Vec ddpm_solve(const ScoreField& s, const TimeGrid& g, const Vec& x);

// Apply the full backward solve (T -> eps) to every row of a cloud.
PointCloud push_cloud(const ScoreField& s, const TimeGrid& g, const PointCloud& cloud);

// Same map, but advancing the whole cloud one time step at a time through
// the batched d = 1 mixture-score kernel. Falls back to push_cloud when
// d > 1. Values may differ from push_cloud in the last few ulps (windowed
// softmax), never beyond.
PointCloud push_cloud_fast(const EmpiricalMixtureScore& s, const TimeGrid& g,
                           const PointCloud& cloud);

struct LipschitzProbe {
  double ratio_max = 0.0;  // max over probe pairs of |f(x)-f(y)| / |x-y|
  double ceiling = 0.0;    // exp(C d beta_bar T), C = 10 (1 + L_eps)
};

// Probe the end-to-end solver map x_T -> x_eps with random nearby pairs and
// compare against the theoretical ceiling.
LipschitzProbe lipschitz_probe_solver(const EmpiricalMixtureScore& s, const TimeGrid& g,
                                      int pairs, double pair_scale, uint64_t seed);

}  // namespace cmlab
