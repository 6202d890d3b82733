#include "cmlab/score.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "cmlab/mathutil.hpp"
#include "cmlab/rng.hpp"

namespace cmlab {

namespace detail {
// defined in kernels.cpp (built with value-unsafe FP optimizations)
void mixture_score_many_1d(const double* xs, double* out, int mq, const double* c, int n,
                           double m, double sig2);
}  // namespace detail

namespace {

void check_time(const Schedule& s, double t) {
  if (!(t > 0.0) || t > s.T)
    throw DomainError("mixture score requires t in (0, T] (sigma(0) = 0 is singular)");
}

}  // namespace

EmpiricalMixtureScore::EmpiricalMixtureScore(const Dataset& ds, const Schedule& s)
    : ds_(ds), sched_(s) {
  if (ds_.dim() == 1) {
    sorted_1d_.resize(ds_.size());
    for (int i = 0; i < ds_.size(); ++i) sorted_1d_[i] = ds_.points(i, 0);
    std::sort(sorted_1d_.begin(), sorted_1d_.end());
  }
}

void EmpiricalMixtureScore::weights_at(const Vec& x, double t, std::vector<double>& w) const {
  const double m = sched_.mean_coeff(t);
  const double sig2 = sched_.std_coeff(t) * sched_.std_coeff(t);
  const int n = ds_.size();
  w.resize(n);
  double best = -std::numeric_limits<double>::infinity();
  for (int j = 0; j < n; ++j) {
    const double e = -(m * ds_.points.row(j).transpose() - x).squaredNorm() / (2.0 * sig2);
    w[j] = e;
    best = std::max(best, e);
  }
  double sum = 0.0;
  for (int j = 0; j < n; ++j) {
    w[j] = fast_exp(w[j] - best);
    sum += w[j];
  }
  const double inv = 1.0 / sum;
  for (int j = 0; j < n; ++j) w[j] *= inv;
}

Vec EmpiricalMixtureScore::eval(const Vec& x, double t) const {
  check_time(sched_, t);
  const double m = sched_.mean_coeff(t);
  const double sig2 = sched_.std_coeff(t) * sched_.std_coeff(t);
  std::vector<double> w;
  weights_at(x, t, w);
  Vec mean = Vec::Zero(x.size());
  for (int j = 0; j < ds_.size(); ++j) mean += w[j] * ds_.points.row(j).transpose();
  return (m * mean - x) / sig2;
}

Vec EmpiricalMixtureScore::posterior_mean(const Vec& x, double t) const {
  check_time(sched_, t);
  std::vector<double> w;
  weights_at(x, t, w);
  Vec mean = Vec::Zero(x.size());
  for (int j = 0; j < ds_.size(); ++j) mean += w[j] * ds_.points.row(j).transpose();
  return mean;
}

Mat EmpiricalMixtureScore::jacobian(const Vec& x, double t) const {
  check_time(sched_, t);
  const double m = sched_.mean_coeff(t);
  const double sig2 = sched_.std_coeff(t) * sched_.std_coeff(t);
  std::vector<double> w;
  weights_at(x, t, w);
  const int d = static_cast<int>(x.size());
  Mat second = Mat::Zero(d, d);
  Vec first = Vec::Zero(d);
  for (int j = 0; j < ds_.size(); ++j) {
    const Vec c = m * ds_.points.row(j).transpose();  // scaled center
    second += w[j] * (c * c.transpose());
    first += w[j] * c;
  }
  return -Mat::Identity(d, d) / sig2 + (second - first * first.transpose()) / (sig2 * sig2);
}

double EmpiricalMixtureScore::log_density_unnormalized(const Vec& x, double t) const {
  check_time(sched_, t);
  const double m = sched_.mean_coeff(t);
  const double sig2 = sched_.std_coeff(t) * sched_.std_coeff(t);
  const int n = ds_.size();
  double best = -std::numeric_limits<double>::infinity();
  std::vector<double> e(n);
  for (int j = 0; j < n; ++j) {
    e[j] = -(m * ds_.points.row(j).transpose() - x).squaredNorm() / (2.0 * sig2);
    best = std::max(best, e[j]);
  }
  double sum = 0.0;
  for (int j = 0; j < n; ++j) sum += std::exp(e[j] - best);
  return best + std::log(sum / n);
}

void EmpiricalMixtureScore::eval_many_1d(const double* xs, double* out, int m_count, double t) const {
  check_time(sched_, t);
  if (ds_.dim() != 1) throw MethodError("eval_many_1d requires d = 1");
  const double m = sched_.mean_coeff(t);
  const double sig2 = sched_.std_coeff(t) * sched_.std_coeff(t);
  detail::mixture_score_many_1d(xs, out, m_count, sorted_1d_.data(),
                                static_cast<int>(sorted_1d_.size()), m, sig2);
}

AnalyticScore::AnalyticScore(const TargetDistribution& td, const Schedule& s) : td_(td), sched_(s) {
  if (td.kind == TargetDistribution::Kind::UniformBall)
    throw MethodError("analytic score unavailable for uniform_ball");
}

Vec AnalyticScore::eval(const Vec& x, double t) const {
  check_time(sched_, t);
  const double m = sched_.mean_coeff(t);
  const double sig2 = sched_.std_coeff(t) * sched_.std_coeff(t);
  const int d = static_cast<int>(x.size());

  // assemble component centers, variances, weights of the time-t marginal
  std::vector<Vec> centers;
  std::vector<double> vars, ws;
  if (td_.kind == TargetDistribution::Kind::TwoPoint) {
    centers = {m * td_.point_a, m * td_.point_b};
    vars = {sig2, sig2};
    ws = {td_.weight_a, 1.0 - td_.weight_a};
  } else {
    for (size_t c = 0; c < td_.weights.size(); ++c) {
      centers.push_back(m * td_.means.row(c).transpose());
      vars.push_back(m * m * td_.stds[c] * td_.stds[c] + sig2);
      ws.push_back(td_.weights[c]);
    }
  }
  const size_t k = ws.size();
  std::vector<double> loge(k);
  double best = -std::numeric_limits<double>::infinity();
  for (size_t c = 0; c < k; ++c) {
    loge[c] = std::log(ws[c]) - (x - centers[c]).squaredNorm() / (2.0 * vars[c]) -
              0.5 * d * std::log(vars[c]);
    best = std::max(best, loge[c]);
  }
  double sum = 0.0;
  Vec grad = Vec::Zero(d);
  for (size_t c = 0; c < k; ++c) {
    const double w = std::exp(loge[c] - best);
    sum += w;
    grad += w * (centers[c] - x) / vars[c];
  }
  return grad / sum;
}

PluginScore::PluginScore(Mlp net, const Schedule& s, double u_cap)
    : net_(std::move(net)), sched_(s), cap_(u_cap) {}

Vec PluginScore::eval(const Vec& x, double t) const {
  if (t < sched_.eps || t > sched_.T) throw DomainError("plugin score: t outside [eps, T]");
  Vec in(x.size() + 1);
  in.head(x.size()) = x;
  in[x.size()] = t;
  Vec out = net_.forward(in);
  const double n = out.norm();
  if (n > cap_) out *= cap_ / n;
  return out;
}

LipschitzCertificate lipschitz_certificate(const EmpiricalMixtureScore& score, double t,
                                           int probe_count, uint64_t seed) {
  check_time(score.schedule(), t);
  const Schedule& s = score.schedule();
  const double m = s.mean_coeff(t);
  const double sig2 = s.std_coeff(t) * s.std_coeff(t);
  double r0 = 0.0;
  for (int i = 0; i < score.dataset().size(); ++i)
    r0 = std::max(r0, score.dataset().points.row(i).norm());
  const double r0s = m * r0;
  LipschitzCertificate cert;
  cert.t = t;
  cert.bound = std::max(r0s * r0s / (sig2 * sig2), 1.0 / sig2);
  if (probe_count > 0) {
    Rng rng(seed);
    const int d = score.dataset().dim();
    double worst = 0.0;
    for (int p = 0; p < probe_count; ++p) {
      Vec x(d);
      const double spread = r0 + 3.0;
      for (int i = 0; i < d; ++i) x[i] = rng.uniform(-spread, spread);
      const Mat J = score.jacobian(x, t);
      Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (J + J.transpose()));
      worst = std::max(worst, es.eigenvalues().cwiseAbs().maxCoeff());
    }
    cert.probed = worst;
  }
  return cert;
}

PluginScore train_plugin_score(const Dataset& ds, const Schedule& s, const PluginTrainConfig& cfg,
                               uint64_t seed) {
  const int d = ds.dim();
  double cap = cfg.u_cap;
  if (cap <= 0.0) cap = 2.0 * d * std::log(static_cast<double>(ds.size())) +
                        2.0 * d * d * std::log(d / s.eps);
  std::vector<int> dims;
  dims.push_back(d + 1);
  for (int l = 0; l < cfg.depth; ++l) dims.push_back(cfg.hidden);
  dims.push_back(d);
  Mlp net(dims, derive_seed(seed, 1));

  Rng rng(derive_seed(seed, 2));
  // denoising score matching: target -(x_t - m x0)/sigma^2
  for (int step = 0; step < cfg.steps; ++step) {
    net.zero_grad();
    double loss = 0.0;
    for (int b = 0; b < cfg.batch; ++b) {
      const int row = static_cast<int>(rng.uniform_index(ds.size()));
      const double t = rng.uniform(s.eps, s.T);
      const double m = s.mean_coeff(t);
      const double sig = s.std_coeff(t);
      Vec x0 = ds.points.row(row).transpose();
      Vec z(d);
      for (int i = 0; i < d; ++i) z[i] = rng.normal();
      Vec xt = m * x0 + sig * z;
      Vec target = -z / sig;  // = -(x_t - m x0)/sigma^2
      Vec in(d + 1);
      in.head(d) = xt;
      in[d] = t;
      Vec out = net.forward(in);
      Vec resid = out - target;
      loss += resid.squaredNorm();
      net.backward(in, 2.0 * resid / cfg.batch);
    }
    loss /= cfg.batch;
    if (!std::isfinite(loss))
      throw TrainingError("plugin score training diverged at step " + std::to_string(step));
    net.adam_step(cfg.lr);
  }
  return PluginScore(std::move(net), s, cap);
}

ScoreMse score_mse(const ScoreField& field, const ScoreField& reference, const Dataset& cloud_source,
                   double t_a, double t_b, int m_probes, uint64_t seed) {
  const Schedule& s = field.schedule();
  if (!(t_a >= s.eps) || !(t_a < t_b) || !(t_b <= s.T))
    throw ArgumentError("score_mse requires eps <= t_a < t_b <= T");
  Rng rng(seed);
  const int d = cloud_source.dim();
  std::vector<double> sq(m_probes);
  for (int p = 0; p < m_probes; ++p) {
    const double t = rng.uniform(t_a, t_b);
    const int row = static_cast<int>(rng.uniform_index(cloud_source.size()));
    const double m = s.mean_coeff(t);
    const double sig = s.std_coeff(t);
    Vec x(d);
    for (int i = 0; i < d; ++i) x[i] = m * cloud_source.points(row, i) + sig * rng.normal();
    sq[p] = (field.eval(x, t) - reference.eval(x, t)).squaredNorm();
  }
  const auto st = mean_stderr(sq);
  return ScoreMse{st.mean, st.stderr_};
}

}  // namespace cmlab
