#pragma once

#include <memory>
#include <vector>

#include "cmlab/common.hpp"
#include "cmlab/net.hpp"
#include "cmlab/schedule.hpp"
#include "cmlab/targets.hpp"

namespace cmlab {

// Evaluable approximation of (x, t) -> grad log p_t(x).
class ScoreField {
 public:
  virtual ~ScoreField() = default;
  virtual Vec eval(const Vec& x, double t) const = 0;
  virtual const Schedule& schedule() const = 0;
};

struct LipschitzCertificate {
  double bound = 0.0;    // analytic: max(R0_scaled^2/sigma^4, 1/sigma^2)
  double probed = 0.0;   // max spectral norm of the Jacobian over probes (0 if unprobed)
  double t = 0.0;
};

// Exact score of the Gaussian-mixture forward marginal of an empirical
// dataset: centers m(t) x^j, common variance sigma(t)^2, softmax weights
// computed with max subtraction.
class EmpiricalMixtureScore : public ScoreField {
 public:
  EmpiricalMixtureScore(const Dataset& ds, const Schedule& s);

  Vec eval(const Vec& x, double t) const override;
  const Schedule& schedule() const override { return sched_; }

  Vec posterior_mean(const Vec& x, double t) const;  // Tweedie: E[x0 | x_t = x]
  Mat jacobian(const Vec& x, double t) const;

  // log of the summed mixture density (up to the Gaussian normalizer, which
  // is constant in x); the finite-difference oracle differentiates this.
  double log_density_unnormalized(const Vec& x, double t) const;

  // Batched d = 1 evaluation: scores for many queries at one t. Exploits the
  // sorted-center window (weights below exp(-60) relative to the max cannot
  // move a double accumulator) to cut the inner loop for small sigma.
  void eval_many_1d(const double* xs, double* out, int m, double t) const;

  const Dataset& dataset() const { return ds_; }

 private:
  void weights_at(const Vec& x, double t, std::vector<double>& w) const;
  Dataset ds_;
  Schedule sched_;
  std::vector<double> sorted_1d_;  // ascending centers for d = 1 batching
};

// Exact score of the population forward marginal for closed-form targets
// that are Gaussian mixtures at t > 0 (gaussian_mixture, two_point).
class AnalyticScore : public ScoreField {
 public:
  AnalyticScore(const TargetDistribution& td, const Schedule& s);
  Vec eval(const Vec& x, double t) const override;
  const Schedule& schedule() const override { return sched_; }

 private:
  TargetDistribution td_;
  Schedule sched_;
};

// Trained plug-in estimator s_phi: a small dense network with output norm
// capped at U_score.
class PluginScore : public ScoreField {
 public:
  PluginScore(Mlp net, const Schedule& s, double u_cap);
  Vec eval(const Vec& x, double t) const override;
  const Schedule& schedule() const override { return sched_; }
  const Mlp& net() const { return net_; }
  double cap() const { return cap_; }

 private:
  Mlp net_;
  Schedule sched_;
  double cap_;
};

// Score field that delegates to another field through a std::function-free
// shim; used for fault injection in negative-control checks.
class OffsetScore : public ScoreField {
 public:
  OffsetScore(const ScoreField& base, const Vec& offset) : base_(base), offset_(offset) {}
  Vec eval(const Vec& x, double t) const override { return base_.eval(x, t) + offset_; }
  const Schedule& schedule() const override { return base_.schedule(); }

 private:
  const ScoreField& base_;
  Vec offset_;
};

LipschitzCertificate lipschitz_certificate(const EmpiricalMixtureScore& score, double t,
                                           int probe_count = 0, uint64_t seed = 0);

struct PluginTrainConfig {
  int hidden = 64;
  int depth = 2;          // hidden layers
  int steps = 2000;
  int batch = 64;
  double lr = 1e-3;
  double u_cap = 0.0;     // 0 -> default 2 d log n + 2 d^2 log(d/eps)
};

PluginScore train_plugin_score(const Dataset& ds, const Schedule& s, const PluginTrainConfig& cfg,
                               uint64_t seed);

struct ScoreMse {
  double value = 0.0;
  double stderr_ = 0.0;
};

// Monte Carlo estimate of the mean integrated squared error between two
// fields over t ~ U[t_a, t_b], x ~ X_t of the given dataset.
ScoreMse score_mse(const ScoreField& field, const ScoreField& reference, const Dataset& cloud_source,
                   double t_a, double t_b, int m_probes, uint64_t seed);

}  // namespace cmlab
