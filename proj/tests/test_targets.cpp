#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <nlohmann/json.hpp>

#include "cmlab/targets.hpp"

using namespace cmlab;

TEST_CASE("uniform ball second moment matches R^2 d/(d+2)") {
  for (int d : {1, 3}) {
    const auto td = TargetDistribution::uniform_ball(d, 2.0);
    CHECK(td.second_moment() == doctest::Approx(4.0 * d / (d + 2.0)).epsilon(1e-14));
    Rng rng(7);
    double acc = 0.0;
    const int m = 200000;
    for (int i = 0; i < m; ++i) acc += td.sample_one(rng).squaredNorm();
    CHECK(acc / m == doctest::Approx(td.second_moment()).epsilon(0.02));
  }
}

TEST_CASE("two point moments and quantile") {
  Vec a(1), b(1);
  a << -1.0;
  b << 2.0;
  const auto td = TargetDistribution::two_point(a, b, 0.25);
  CHECK(td.second_moment() == doctest::Approx(0.25 * 1.0 + 0.75 * 4.0).epsilon(1e-14));
  CHECK(td.quantile(0.1) == -1.0);
  CHECK(td.quantile(0.9) == 2.0);
  CHECK(td.cdf(-1.0) == doctest::Approx(0.25));
  CHECK(td.cdf(2.0) == doctest::Approx(1.0));
  CHECK(td.support_radius() == doctest::Approx(2.0));
}

TEST_CASE("quantile inverts cdf in 1d") {
  Mat means(2, 1);
  means << -1.0, 1.5;
  const auto td = TargetDistribution::gaussian_mixture(means, {0.3, 0.7}, {0.5, 0.8});
  for (double u : {0.05, 0.3, 0.5, 0.77, 0.95}) {
    CHECK(td.cdf(td.quantile(u)) == doctest::Approx(u).epsilon(1e-8));
  }
  CHECK(std::isinf(td.support_radius()));
}

TEST_CASE("dataset is reproducible and records radius") {
  const auto td = TargetDistribution::uniform_ball(2, 1.5);
  const auto d1 = make_dataset(td, 32, 99);
  const auto d2 = make_dataset(td, 32, 99);
  CHECK((d1.points - d2.points).cwiseAbs().maxCoeff() == 0.0);
  double rmax = 0.0;
  for (int i = 0; i < d1.size(); ++i) rmax = std::max(rmax, d1.points.row(i).norm());
  CHECK(d1.radius == doctest::Approx(rmax));
  CHECK(rmax <= 1.5);
  const auto d3 = make_dataset(td, 32, 100);
  CHECK((d1.points - d3.points).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("forward marginal has the right first two moments") {
  const auto s = Schedule::constant(1.0, 2.0, 0.01);
  Vec a(1), b(1);
  a << 0.0;
  b << 0.0;
  const auto td = TargetDistribution::two_point(a, b);  // point mass at 0
  const auto cloud = sample_target(td, 100000, 3);
  const double t = 1.0;
  const auto pushed = forward_marginal(cloud, s, t, 5);
  const double m = s.mean_coeff(t), sig = s.std_coeff(t);
  const double mean = pushed.points.col(0).mean();
  const double var = (pushed.points.col(0).array() - mean).square().mean();
  CHECK(mean == doctest::Approx(0.0).epsilon(0.02));
  CHECK(std::abs(mean) < 0.02);
  CHECK(var == doctest::Approx(sig * sig).epsilon(0.02));
  (void)m;
}

TEST_CASE("sample_forward resamples dataset rows") {
  const auto td = TargetDistribution::uniform_ball(1, 1.0);
  const auto ds = make_dataset(td, 8, 4);
  const auto s = Schedule::constant(0.5, 2.0, 0.01);
  const auto cloud = sample_forward(ds, s, 2.0, 5000, 11);
  CHECK(cloud.size() == 5000);
  CHECK(cloud.dim() == 1);
  // at t = T the marginal is near standard normal; crude moment check
  const double var = (cloud.points.col(0).array() - cloud.points.col(0).mean()).square().mean();
  CHECK(var == doctest::Approx(1.0).epsilon(0.15));
}

TEST_CASE("target json round trip") {
  Vec a(2), b(2);
  a << -1.0, 0.5;
  b << 1.0, -0.5;
  const auto td = TargetDistribution::two_point(a, b, 0.8);
  nlohmann::json j = td;
  const auto back = j.get<TargetDistribution>();
  CHECK(back.kind == td.kind);
  CHECK(back.weight_a == td.weight_a);
  CHECK((back.point_a - td.point_a).norm() == 0.0);
  CHECK(back.second_moment() == doctest::Approx(td.second_moment()));
}

TEST_CASE("dataset csv export writes header and rows") {
  const auto td = TargetDistribution::uniform_ball(2, 1.0);
  const auto ds = make_dataset(td, 5, 1);
  const std::string csv = "/tmp/cmlab_test_ds.csv", meta = "/tmp/cmlab_test_ds.json";
  save_dataset_csv(ds, csv, meta);
  std::ifstream f(csv);
  std::string line;
  int rows = 0;
  REQUIRE(std::getline(f, line));  // header
  while (std::getline(f, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 5);
  std::ifstream mf(meta);
  nlohmann::json j;
  mf >> j;
  CHECK(j.contains("seed"));
  std::remove(csv.c_str());
  std::remove(meta.c_str());
}
