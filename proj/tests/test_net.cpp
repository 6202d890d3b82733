#include <doctest.h>

#include <nlohmann/json.hpp>

#include "cmlab/net.hpp"

using namespace cmlab;

TEST_CASE("backward pass matches finite differences") {
  Mlp net({2, 5, 3}, 42);
  Vec x(2);
  x << 0.3, -0.7;
  Vec gout(3);
  gout << 1.0, -0.5, 0.25;

  net.zero_grad();
  const Vec gin = net.backward(x, gout);

  const double h = 1e-6;
  for (int i = 0; i < 2; ++i) {
    Vec xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    const double fd = (gout.dot(net.forward(xp)) - gout.dot(net.forward(xm))) / (2 * h);
    CHECK(gin[i] == doctest::Approx(fd).epsilon(1e-5));
  }

  // parameter gradient check through a copy perturbed one weight at a time
  for (int l = 0; l < net.layer_count(); ++l) {
    Mlp plus = net, minus = net;
    plus.weight(l)(0, 0) += h;
    minus.weight(l)(0, 0) -= h;
    const double fd = (gout.dot(plus.forward(x)) - gout.dot(minus.forward(x))) / (2 * h);
    // re-accumulate to read the stored gradient via a json round trip is
    // overkill; instead check adam moves the weight in the -gradient direction
    Mlp stepped = net;
    stepped.zero_grad();
    stepped.backward(x, gout);
    stepped.adam_step(1e-3);
    const double moved = stepped.weight(l)(0, 0) - net.weight(l)(0, 0);
    if (std::abs(fd) > 1e-8) CHECK(moved * fd < 0.0);
  }
}

TEST_CASE("operator norm matches dense SVD oracle") {
  Rng rng(9);
  Mat W(4, 6);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 6; ++j) W(i, j) = rng.normal();
  const double svd = W.jacobiSvd().singularValues()(0);
  CHECK(Mlp::operator_norm(W, 60) == doctest::Approx(svd).epsilon(1e-6));
}

TEST_CASE("lipschitz projection caps the product") {
  Mlp net({3, 8, 8, 2}, 5, 2.0);
  const double before = net.lipschitz_product(2);
  net.project_lipschitz(0.5, 2);
  CHECK(net.lipschitz_product(2) <= 0.5 * (1 + 1e-9));
  // projection is a no-op when already under budget
  Mlp small({3, 4, 2}, 5, 0.01);
  const double p = small.lipschitz_product(2);
  small.project_lipschitz(1e6, 2);
  CHECK(small.lipschitz_product(2) == doctest::Approx(p));
  (void)before;
}

TEST_CASE("lipschitz product bounds observed ratios in x") {
  Mlp net({3, 6, 2}, 11);
  const double L = net.lipschitz_product(2, 60);
  Rng rng(3);
  for (int rep = 0; rep < 50; ++rep) {
    Vec x(3), y(3);
    for (int i = 0; i < 3; ++i) x[i] = rng.normal();
    y = x;
    y[0] += 1e-4 * rng.normal();
    y[1] += 1e-4 * rng.normal();
    const double num = (net.forward(x) - net.forward(y)).norm();
    const double den = (x - y).norm();
    if (den > 0) CHECK(num / den <= L * (1 + 1e-6));
  }
}

TEST_CASE("json round trip preserves the function") {
  Mlp net({2, 4, 1}, 77);
  const auto j = net.to_json();
  const auto back = Mlp::from_json(j);
  Vec x(2);
  x << 0.4, -1.2;
  CHECK((net.forward(x) - back.forward(x)).norm() == 0.0);
}

TEST_CASE("adam with zero gradients leaves weights unchanged") {
  Mlp net({2, 3, 1}, 8);
  Mlp ref = net;
  net.zero_grad();
  net.adam_step(1e-2);
  Vec x(2);
  x << 1.0, 2.0;
  CHECK((net.forward(x) - ref.forward(x)).norm() == doctest::Approx(0.0).epsilon(1e-12));
}
