#include "cmlab/targets.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <nlohmann/json.hpp>

#include "cmlab/mathutil.hpp"

namespace cmlab {

TargetDistribution TargetDistribution::uniform_ball(int dim, double radius) {
  TargetDistribution td;
  td.kind = Kind::UniformBall;
  td.dim = dim;
  td.radius = radius;
  td.validate();
  return td;
}

TargetDistribution TargetDistribution::two_point(const Vec& a, const Vec& b, double weight_a) {
  TargetDistribution td;
  td.kind = Kind::TwoPoint;
  td.dim = static_cast<int>(a.size());
  td.point_a = a;
  td.point_b = b;
  td.weight_a = weight_a;
  td.validate();
  return td;
}

TargetDistribution TargetDistribution::gaussian_mixture(const Mat& means, std::vector<double> weights,
                                                        std::vector<double> stds) {
  TargetDistribution td;
  td.kind = Kind::GaussianMixture;
  td.dim = static_cast<int>(means.cols());
  td.means = means;
  td.weights = std::move(weights);
  td.stds = std::move(stds);
  td.validate();
  return td;
}

void TargetDistribution::validate() const {
  if (dim < 1) throw ArgumentError("target dim must be >= 1");
  switch (kind) {
    case Kind::UniformBall:
      if (!(radius > 0.0)) throw ArgumentError("uniform_ball radius must be positive");
      break;
    case Kind::TwoPoint: {
      if (point_a.size() != dim || point_b.size() != dim)
        throw ArgumentError("two_point locations must match dim");
      if (!(weight_a > 0.0) || !(weight_a < 1.0))
        throw ArgumentError("two_point weight_a must be in (0,1)");
      break;
    }
    case Kind::GaussianMixture: {
      const size_t k = weights.size();
      if (k == 0 || stds.size() != k || means.rows() != static_cast<Eigen::Index>(k))
        throw ArgumentError("gaussian_mixture components inconsistent");
      double wsum = 0.0;
      for (double w : weights) {
        if (!(w > 0.0)) throw ArgumentError("mixture weights must be positive");
        wsum += w;
      }
      if (std::abs(wsum - 1.0) > 1e-12) throw ArgumentError("mixture weights must sum to 1");
      for (double s : stds)
        if (!(s > 0.0)) throw ArgumentError("mixture stds must be positive");
      break;
    }
  }
}

Vec TargetDistribution::sample_one(Rng& rng) const {
  switch (kind) {
    case Kind::UniformBall: {
      // direction * R * u^{1/d}
      Vec z(dim);
      double norm2 = 0.0;
      do {
        for (int i = 0; i < dim; ++i) z[i] = rng.normal();
        norm2 = z.squaredNorm();
      } while (norm2 == 0.0);
      const double r = radius * std::pow(rng.uniform_pos(), 1.0 / dim);
      return z * (r / std::sqrt(norm2));
    }
    case Kind::TwoPoint:
      return rng.uniform() < weight_a ? point_a : point_b;
    case Kind::GaussianMixture: {
      double u = rng.uniform();
      size_t c = 0;
      for (; c + 1 < weights.size(); ++c) {
        if (u < weights[c]) break;
        u -= weights[c];
      }
      Vec x(dim);
      for (int i = 0; i < dim; ++i) x[i] = means(c, i) + stds[c] * rng.normal();
      return x;
    }
  }
  throw ArgumentError("unreachable target kind");
}

double TargetDistribution::second_moment() const {
  switch (kind) {
    case Kind::UniformBall:
      // E||X||^2 for uniform on a d-ball of radius R is R^2 d/(d+2).
      return radius * radius * dim / (dim + 2.0);
    case Kind::TwoPoint:
      return weight_a * point_a.squaredNorm() + (1.0 - weight_a) * point_b.squaredNorm();
    case Kind::GaussianMixture: {
      double s = 0.0;
      for (size_t c = 0; c < weights.size(); ++c)
        s += weights[c] * (means.row(c).squaredNorm() + dim * stds[c] * stds[c]);
      return s;
    }
  }
  return 0.0;
}

double TargetDistribution::mean_norm() const {
  switch (kind) {
    case Kind::UniformBall:
      return 0.0;
    case Kind::TwoPoint:
      return (weight_a * point_a + (1.0 - weight_a) * point_b).norm();
    case Kind::GaussianMixture: {
      Vec m = Vec::Zero(dim);
      for (size_t c = 0; c < weights.size(); ++c) m += weights[c] * means.row(c).transpose();
      return m.norm();
    }
  }
  return 0.0;
}

double TargetDistribution::cdf(double x) const {
  if (dim != 1) throw MethodError("cdf only available in d = 1");
  switch (kind) {
    case Kind::UniformBall:
      if (x <= -radius) return 0.0;
      if (x >= radius) return 1.0;
      return (x + radius) / (2.0 * radius);
    case Kind::TwoPoint: {
      const double a = point_a[0], b = point_b[0];
      const double lo = std::min(a, b), hi = std::max(a, b);
      const double wlo = a <= b ? weight_a : 1.0 - weight_a;
      if (x < lo) return 0.0;
      if (x < hi) return wlo;
      return 1.0;
    }
    case Kind::GaussianMixture: {
      double f = 0.0;
      for (size_t c = 0; c < weights.size(); ++c)
        f += weights[c] * normal_cdf((x - means(c, 0)) / stds[c]);
      return f;
    }
  }
  return 0.0;
}

double TargetDistribution::quantile(double u) const {
  if (dim != 1) throw MethodError("quantile only available in d = 1");
  u = std::clamp(u, 0.0, 1.0);
  switch (kind) {
    case Kind::UniformBall:
      return radius * (2.0 * u - 1.0);
    case Kind::TwoPoint: {
      const double a = point_a[0], b = point_b[0];
      const double lo = std::min(a, b), hi = std::max(a, b);
      const double wlo = a <= b ? weight_a : 1.0 - weight_a;
      return u <= wlo ? lo : hi;
    }
    case Kind::GaussianMixture: {
      // bisection on the mixture CDF
      double lo = means.col(0).minCoeff(), hi = means.col(0).maxCoeff();
      double smax = *std::max_element(stds.begin(), stds.end());
      lo -= 12.0 * smax;
      hi += 12.0 * smax;
      for (int it = 0; it < 200 && hi - lo > 1e-14 * (1.0 + std::abs(lo) + std::abs(hi)); ++it) {
        const double mid = 0.5 * (lo + hi);
        (cdf(mid) < u ? lo : hi) = mid;
      }
      return 0.5 * (lo + hi);
    }
  }
  return 0.0;
}

double TargetDistribution::tail_alpha1() const {
  switch (kind) {
    case Kind::UniformBall:
      return radius;
    case Kind::TwoPoint:
      return std::max(point_a.norm(), point_b.norm());
    case Kind::GaussianMixture: {
      double m = 0.0;
      for (Eigen::Index c = 0; c < means.rows(); ++c) m = std::max(m, means.row(c).norm());
      return m;
    }
  }
  return 0.0;
}

double TargetDistribution::tail_alpha2() const {
  if (kind == Kind::GaussianMixture) return *std::max_element(stds.begin(), stds.end());
  // Bounded-support kinds have sub-Gaussian tails with any positive scale.
  return 1.0;
}

double TargetDistribution::support_radius() const {
  switch (kind) {
    case Kind::UniformBall:
      return radius;
    case Kind::TwoPoint:
      return std::max(point_a.norm(), point_b.norm());
    case Kind::GaussianMixture:
      return std::numeric_limits<double>::infinity();
  }
  return 0.0;
}

PointCloud sample_target(const TargetDistribution& td, int m, uint64_t seed) {
  if (m < 1) throw ArgumentError("sample_target: m must be >= 1");
  td.validate();
  Rng rng(seed);
  PointCloud pc;
  pc.points.resize(m, td.dim);
  for (int i = 0; i < m; ++i) pc.points.row(i) = td.sample_one(rng).transpose();
  return pc;
}

Dataset make_dataset(const TargetDistribution& td, int n, uint64_t seed) {
  Dataset ds;
  ds.points = sample_target(td, n, seed).points;
  ds.seed = seed;
  ds.source = td;
  ds.radius = 0.0;
  for (int i = 0; i < n; ++i) ds.radius = std::max(ds.radius, ds.points.row(i).norm());
  return ds;
}

PointCloud forward_marginal(const PointCloud& cloud, const Schedule& s, double t, uint64_t seed) {
  if (t < 0.0 || t > s.T) throw DomainError("forward_marginal: t outside [0, T]");
  const double m = s.mean_coeff(t);
  const double sig = s.std_coeff(t);
  Rng rng(seed);
  PointCloud out;
  out.points.resize(cloud.points.rows(), cloud.points.cols());
  for (Eigen::Index i = 0; i < cloud.points.rows(); ++i)
    for (Eigen::Index j = 0; j < cloud.points.cols(); ++j)
      out.points(i, j) = m * cloud.points(i, j) + sig * rng.normal();
  return out;
}

PointCloud sample_forward(const Dataset& ds, const Schedule& s, double t, int m, uint64_t seed) {
  if (m < 1) throw ArgumentError("sample_forward: m must be >= 1");
  const double mc = s.mean_coeff(t);
  const double sig = s.std_coeff(t);
  Rng rng(seed);
  PointCloud out;
  const int d = ds.dim();
  out.points.resize(m, d);
  const int n = ds.size();
  for (int i = 0; i < m; ++i) {
    const int row = static_cast<int>(rng.uniform_index(n));
    for (int j = 0; j < d; ++j) out.points(i, j) = mc * ds.points(row, j) + sig * rng.normal();
  }
  return out;
}

PointCloud gaussian_cloud(int m, int dim, uint64_t seed) {
  Rng rng(seed);
  PointCloud out;
  out.points.resize(m, dim);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < dim; ++j) out.points(i, j) = rng.normal();
  return out;
}

void to_json(nlohmann::json& j, const TargetDistribution& td) {
  switch (td.kind) {
    case TargetDistribution::Kind::UniformBall:
      j = nlohmann::json{{"kind", "uniform_ball"}, {"dim", td.dim}, {"radius", td.radius}};
      break;
    case TargetDistribution::Kind::TwoPoint: {
      std::vector<double> a(td.point_a.data(), td.point_a.data() + td.point_a.size());
      std::vector<double> b(td.point_b.data(), td.point_b.data() + td.point_b.size());
      j = nlohmann::json{
          {"kind", "two_point"}, {"dim", td.dim}, {"a", a}, {"b", b}, {"weight_a", td.weight_a}};
      break;
    }
    case TargetDistribution::Kind::GaussianMixture: {
      std::vector<std::vector<double>> means;
      for (Eigen::Index r = 0; r < td.means.rows(); ++r) {
        std::vector<double> row(td.means.row(r).data(), td.means.row(r).data() + td.dim);
        for (int c = 0; c < td.dim; ++c) row[c] = td.means(r, c);
        means.push_back(row);
      }
      j = nlohmann::json{{"kind", "gaussian_mixture"},
                         {"dim", td.dim},
                         {"means", means},
                         {"weights", td.weights},
                         {"stds", td.stds}};
      break;
    }
  }
}

void from_json(const nlohmann::json& j, TargetDistribution& td) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "uniform_ball") {
    td = TargetDistribution::uniform_ball(j.at("dim").get<int>(), j.at("radius").get<double>());
  } else if (kind == "two_point") {
    const auto a = j.at("a").get<std::vector<double>>();
    const auto b = j.at("b").get<std::vector<double>>();
    Vec va = Eigen::Map<const Vec>(a.data(), a.size());
    Vec vb = Eigen::Map<const Vec>(b.data(), b.size());
    td = TargetDistribution::two_point(va, vb, j.value("weight_a", 0.5));
  } else if (kind == "gaussian_mixture") {
    const auto means = j.at("means").get<std::vector<std::vector<double>>>();
    Mat m(means.size(), means.at(0).size());
    for (size_t r = 0; r < means.size(); ++r)
      for (size_t c = 0; c < means[r].size(); ++c) m(r, c) = means[r][c];
    td = TargetDistribution::gaussian_mixture(m, j.at("weights").get<std::vector<double>>(),
                                              j.at("stds").get<std::vector<double>>());
  } else {
    throw ArgumentError("unknown target kind: " + kind);
  }
}

void save_dataset_csv(const Dataset& ds, const std::string& csv_path, const std::string& json_path) {
  std::ofstream csv(csv_path);
  csv.precision(17);
  for (int j = 0; j < ds.dim(); ++j) {
    if (j) csv << ',';
    csv << 'x' << j;
  }
  csv << '\n';
  for (int i = 0; i < ds.size(); ++i) {
    for (int j = 0; j < ds.dim(); ++j) {
      if (j) csv << ',';
      csv << ds.points(i, j);
    }
    csv << '\n';
  }
  nlohmann::json meta;
  meta["seed"] = ds.seed;
  to_json(meta["source"], ds.source);
  meta["n"] = ds.size();
  meta["radius"] = ds.radius;
  std::ofstream js(json_path);
  js << meta.dump(2) << '\n';
}

}  // namespace cmlab
