#include <doctest.h>

#include <cmath>

#include "cmlab/flow.hpp"

using namespace cmlab;

namespace {

// Score that is identically zero; the drift reduces to -(beta/2) x.
class ZeroScore : public ScoreField {
 public:
  explicit ZeroScore(const Schedule& s) : sched_(s) {}
  Vec eval(const Vec& x, double) const override { return Vec::Zero(x.size()); }
  const Schedule& schedule() const override { return sched_; }

 private:
  Schedule sched_;
};

Dataset single_point_dataset(double c) {
  auto td = TargetDistribution::uniform_ball(1, std::abs(c) + 0.1);
  Dataset ds;
  ds.points.resize(1, 1);
  ds.points << c;
  ds.source = td;
  ds.radius = std::abs(c);
  ds.seed = 0;
  return ds;
}

}  // namespace

TEST_CASE("drift and euler step closed forms under a zero score") {
  const auto s = Schedule::constant(0.5, 2.0, 0.01);
  ZeroScore z(s);
  Vec x(1);
  x << 2.0;
  CHECK(phi(z, x, 1.0)[0] == doctest::Approx(-0.5).epsilon(1e-14));
  // x' = x - dt * phi = x (1 + dt beta/2)
  CHECK(euler_step(z, x, 1.0, 0.1)[0] == doctest::Approx(2.0 * 1.025).epsilon(1e-14));
}

TEST_CASE("fine step uses the upper time of the interval") {
  const auto s = Schedule::linear(0.1, 2.0, 2.0, 0.02);
  ZeroScore z(s);
  const auto g = build_grid(s, 2, 4);
  Vec x(1);
  x << 1.0;
  const double dt = g.times[3] - g.times[2];
  CHECK(g_step(z, g, 3, x)[0] ==
        doctest::Approx(euler_step(z, x, g.times[3], dt)[0]).epsilon(1e-15));
}

TEST_CASE("single-point target: solver recovers the closed-form trajectory") {
  // For a one-atom dataset the score is linear and the exact backward flow
  // maps x_T to m(eps) c + sigma(eps) (x_T - m(T) c) / sigma(T). The Euler
  // solution converges to it as the grid refines.
  const auto s = Schedule::constant(1.0, 2.0, 0.02);
  const double c = 0.7;
  const auto ds = single_point_dataset(c);
  EmpiricalMixtureScore score(ds, s);
  const double mT = s.mean_coeff(2.0), sT = s.std_coeff(2.0);
  const double me = s.mean_coeff(0.02), se = s.std_coeff(0.02);
  Vec x(1);
  x << 1.9;
  const double exact = me * c + se * (x[0] - mT * c) / sT;
  const auto g = build_grid(s, 8, 256);  // N = 2048
  CHECK(ddpm_solve(score, g, x)[0] == doctest::Approx(exact).epsilon(1e-3));
}

TEST_CASE("coarse map composition is bitwise exact") {
  const auto s = Schedule::linear(0.05, 2.5, 3.0, 0.02);
  const auto td = TargetDistribution::uniform_ball(1, 1.0);
  const auto ds = make_dataset(td, 24, 8);
  EmpiricalMixtureScore score(ds, s);
  const auto g = build_grid(s, 4, 8);
  Rng rng(2);
  for (int rep = 0; rep < 5; ++rep) {
    Vec x(1);
    x << rng.normal();
    // f(x, tau_k) computed directly equals f(G_M(x, tau_k), tau_{k-1})
    for (int k = g.N_coarse; k >= 1; --k) {
      const Vec direct = ddpm_solve_from(score, g, x, g.coarse_index[k]);
      const Vec stepped = ddpm_solve_from(score, g, g_multi(score, g, k, x), g.coarse_index[k - 1]);
      CHECK(direct[0] == stepped[0]);  // bit-for-bit
    }
  }
}

TEST_CASE("solve from index zero is the identity") {
  const auto s = Schedule::constant(1.0, 2.0, 0.02);
  const auto ds = single_point_dataset(0.3);
  EmpiricalMixtureScore score(ds, s);
  const auto g = build_grid(s, 2, 4);
  Vec x(1);
  x << -0.4;
  CHECK(ddpm_solve_from(score, g, x, 0)[0] == x[0]);
  CHECK(ddpm_solve_from(score, g, x, g.times[0])[0] == x[0]);
  CHECK_THROWS_AS(ddpm_solve_from(score, g, x, 0.5 * (g.times[0] + g.times[1])), ArgumentError);
}

TEST_CASE("doubling the step count roughly halves the discretization error") {
  const auto s = Schedule::constant(1.0, 2.0, 0.02);
  const double c = 0.5;
  const auto ds = single_point_dataset(c);
  EmpiricalMixtureScore score(ds, s);
  const double mT = s.mean_coeff(2.0), sT = s.std_coeff(2.0);
  const double me = s.mean_coeff(0.02), se = s.std_coeff(0.02);
  Vec x(1);
  x << 1.4;
  const double exact = me * c + se * (x[0] - mT * c) / sT;
  const double e1 = std::abs(ddpm_solve(score, build_grid(s, 8, 16), x)[0] - exact);
  const double e2 = std::abs(ddpm_solve(score, build_grid(s, 8, 32), x)[0] - exact);
  CHECK(e1 / e2 == doctest::Approx(2.0).epsilon(0.3));
}

TEST_CASE("batched cloud push agrees with the pointwise solver") {
  const auto s = Schedule::linear(0.02, 3.0, 4.0, 0.02);
  const auto td = TargetDistribution::uniform_ball(1, 1.0);
  const auto ds = make_dataset(td, 64, 12);
  EmpiricalMixtureScore score(ds, s);
  const auto g = build_grid(s, 4, 16);
  const auto cloud = gaussian_cloud(40, 1, 9);
  const auto a = push_cloud(score, g, cloud);
  const auto b = push_cloud_fast(score, g, cloud);
  CHECK((a.points - b.points).cwiseAbs().maxCoeff() <= 1e-9);
}

TEST_CASE("runaway states raise a divergence error with the step index") {
  // A score field with a huge constant value blows the state past the guard.
  const auto s = Schedule::constant(1.0, 2.0, 0.02);
  const auto ds = single_point_dataset(0.0);
  EmpiricalMixtureScore base(ds, s);
  OffsetScore bad(base, Vec::Constant(1, 1e9));
  const auto g = build_grid(s, 4, 8);
  Vec x(1);
  x << 0.1;
  CHECK_THROWS_AS(ddpm_solve(bad, g, x), DivergenceError);
  try {
    ddpm_solve(bad, g, x);
  } catch (const DivergenceError& e) {
    CHECK(e.step_index >= 1);
    CHECK(e.step_index <= g.N);
  }
}

TEST_CASE("solver lipschitz probe stays under the theoretical ceiling") {
  const auto s = Schedule::constant(0.5, 1.0, 0.05);
  const auto td = TargetDistribution::uniform_ball(1, 1.0);
  const auto ds = make_dataset(td, 16, 3);
  EmpiricalMixtureScore score(ds, s);
  const auto g = build_grid(s, 4, 8);
  const auto probe = lipschitz_probe_solver(score, g, 16, 1e-4, 7);
  CHECK(probe.ratio_max > 0.0);
  CHECK(probe.ceiling > 1.0);
  CHECK(probe.ratio_max <= probe.ceiling);
}
