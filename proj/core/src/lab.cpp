#include "cmlab/lab.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <memory>
#include <filesystem>
#include <fstream>
#include <limits>
#include <nlohmann/json.hpp>

#include "cmlab/flow.hpp"
#include "cmlab/mathutil.hpp"
#include "cmlab/rng.hpp"
#include "cmlab/transport.hpp"

namespace cmlab {

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

W1Method parse_w1_method(const std::string& s) {
  if (s == "sorted_1d") return W1Method::Sorted1d;
  if (s == "assignment") return W1Method::Assignment;
  if (s == "sliced") return W1Method::Sliced;
  throw ArgumentError("unknown W1 method: " + s);
}

// Distance between a generated cloud and the target law: exact quantile
// integral in d = 1, sliced against a large target sample otherwise.
double w1_cloud_to_target(const PointCloud& c, const TargetDistribution& td, uint64_t seed) {
  if (c.dim() == 1 && td.has_quantile()) return w1_to_target_1d(c, td, 4096);
  PointCloud ref = sample_target(td, c.size(), seed);
  return w1_sliced(c, ref, 64, derive_seed(seed, 3)).value;
}

void summarize(CellResult& cell) {
  std::vector<double> good;
  for (double v : cell.trial_w1) {
    if (std::isnan(v)) {
      ++cell.diverged;
    } else {
      good.push_back(v);
    }
  }
  if (good.empty()) {
    cell.mean = kNan;
    cell.excluded = true;
    return;
  }
  const auto st = mean_stderr(good);
  cell.mean = st.mean;
  cell.stddev = st.stddev;
  cell.stderr_ = st.stderr_;
}

void apply_floor(RateReport& rep) {
  for (auto& cell : rep.cells)
    if (std::isnan(cell.mean) || cell.mean <= rep.noise_floor) cell.excluded = true;
}

void fit_cells(RateReport& rep, bool semilog) {
  std::vector<double> xs, ys;
  for (const auto& cell : rep.cells) {
    if (cell.excluded) continue;
    xs.push_back(cell.x);
    ys.push_back(cell.mean);
  }
  rep.fit_kind = semilog ? "semilog" : "loglog";
  SlopeFit fit = semilog ? fit_semilog_slope(xs, ys, 0.0) : fit_loglog_slope(xs, ys, 0.0);
  // re-expand the mask to all cells
  rep.fit = fit;
  rep.fit.used.assign(rep.cells.size(), false);
  size_t j = 0;
  for (size_t i = 0; i < rep.cells.size(); ++i)
    if (!rep.cells[i].excluded) rep.fit.used[i] = fit.used[j++];
  rep.pass = rep.fit.slope >= rep.band[0] && rep.fit.slope <= rep.band[1];
}

}  // namespace

void ExperimentConfig::validate() const {
  target.validate();
  schedule.validate();
  if (n_coarse < 1 || m_steps < 1) throw ArgumentError("config: grid counts must be >= 1");
  if (method != "isolate" && method != "distill")
    throw ArgumentError("config: method must be isolate or distill");
  if (!sweep.variable.empty()) {
    if (sweep.variable != "n" && sweep.variable != "M" && sweep.variable != "T" &&
        sweep.variable != "eps")
      throw ArgumentError("config: sweep variable must be one of n, M, T, eps");
    if (sweep.grid.size() < 4) throw ArgumentError("config: sweep grid needs >= 4 cells");
    for (size_t i = 1; i < sweep.grid.size(); ++i)
      if (sweep.grid[i] <= sweep.grid[i - 1])
        throw ArgumentError("config: sweep grid must be strictly increasing");
    if (trials < 3) throw ArgumentError("config: trials must be >= 3");
  }
  if (m_eval < 2 || n_data < 1) throw ArgumentError("config: sizes must be positive");
  parse_w1_method(w1_method);
}

ExperimentConfig preset_config(const std::string& name, int n, int dim, double scale) {
  if (!(scale > 0.0) || scale > 1.0) throw ArgumentError("preset: scale must be in (0, 1]");
  const double logn = std::log(std::max(3, n));
  ExperimentConfig cfg;
  cfg.n_data = n;
  cfg.target = TargetDistribution::uniform_ball(dim, 1.0);
  if (name == "recipe-a") {
    // T = (log n)^3, M = d^2 n^{1/(d+5)}, N' = log n, scaled down
    const double T = std::max(1.0, scale * logn * logn * logn);
    cfg.schedule = Schedule::linear(0.02, 3.0, T, 0.02);
    cfg.n_coarse = std::max(2, static_cast<int>(logn));
    cfg.m_steps = std::max(1, static_cast<int>(scale * dim * dim *
                                               std::pow(n, 1.0 / (dim + 5.0))));
    cfg.method = "distill";
  } else if (name == "recipe-b") {
    // eps = n^{-2/d}, T = d (log n)^3, M = d^2 (log n)^8 n^{10/d}, scaled down
    const double eps = std::pow(n, -2.0 / dim);
    const double T = std::max(1.0, scale * dim * logn * logn * logn);
    cfg.schedule = Schedule::linear(0.02, 3.0, T, std::max(1e-4, eps));
    cfg.n_coarse = std::max(2, static_cast<int>(logn));
    const double m_lit = dim * dim * std::pow(logn, 8.0) * std::pow(n, 10.0 / dim);
    cfg.m_steps = std::max(1, static_cast<int>(std::min(1024.0, scale * m_lit)));
    cfg.method = "isolate";
  } else {
    throw ArgumentError("unknown preset: " + name);
  }
  return cfg;
}

SlopeFit fit_loglog_slope(const std::vector<double>& xs, const std::vector<double>& ys,
                          double floor) {
  if (xs.size() != ys.size()) throw ArgumentError("fit_loglog_slope: length mismatch");
  std::vector<double> lx, ly;
  SlopeFit fit;
  fit.used.assign(xs.size(), false);
  for (size_t i = 0; i < xs.size(); ++i) {
    if (!(ys[i] > floor) || std::isnan(ys[i])) continue;
    fit.used[i] = true;
    lx.push_back(std::log(xs[i]));
    ly.push_back(std::log(ys[i]));
  }
  if (lx.size() < 3) throw InsufficientDataError("fit_loglog_slope: fewer than 3 usable points");
  const auto f = ols(lx, ly);
  fit.slope = f.slope;
  fit.intercept = f.intercept;
  fit.stderr_ = f.slope_stderr;
  return fit;
}

SlopeFit fit_semilog_slope(const std::vector<double>& xs, const std::vector<double>& ys,
                           double floor) {
  if (xs.size() != ys.size()) throw ArgumentError("fit_semilog_slope: length mismatch");
  std::vector<double> lx, ly;
  SlopeFit fit;
  fit.used.assign(xs.size(), false);
  for (size_t i = 0; i < xs.size(); ++i) {
    if (!(ys[i] > floor) || std::isnan(ys[i])) continue;
    fit.used[i] = true;
    lx.push_back(xs[i]);
    ly.push_back(std::log(ys[i]));
  }
  if (lx.size() < 3) throw InsufficientDataError("fit_semilog_slope: fewer than 3 usable points");
  const auto f = ols(lx, ly);
  fit.slope = f.slope;
  fit.intercept = f.intercept;
  fit.stderr_ = f.slope_stderr;
  return fit;
}

RateReport rate_study_n(const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.sweep.variable != "n") throw ArgumentError("rate_study_n: sweep variable must be n");
  RateReport rep;
  rep.sweep_variable = "n";
  rep.seed = cfg.seed;
  rep.config_hash = config_hash(cfg);
  rep.band = cfg.slope_band.value_or(std::array<double, 2>{-1.5, -0.5});

  TimeGrid grid = build_grid(cfg.schedule, cfg.n_coarse, cfg.m_steps);
  const bool quantile_eval = cfg.target.dim == 1 && cfg.target.has_quantile();
  // d = 1: push the deterministic Gaussian quantile grid instead of a random
  // cloud — the pushforward then approximates the generated law's quantiles
  // directly and the evaluation has no sampling noise floor, only O(1/m)
  // quadrature error.
  PointCloud z_quantiles;
  if (quantile_eval) {
    z_quantiles.points = Mat(cfg.m_eval, 1);
    for (int i = 0; i < cfg.m_eval; ++i)
      z_quantiles.points(i, 0) = normal_quantile((i + 0.5) / cfg.m_eval);
  }
  for (size_t ci = 0; ci < cfg.sweep.grid.size(); ++ci) {
    CellResult cell;
    cell.x = cfg.sweep.grid[ci];
    const int n = static_cast<int>(cell.x);
    for (int trial = 0; trial < cfg.trials; ++trial) {
      const uint64_t s = derive_seed(cfg.seed, 1000 * (ci + 1) + trial);
      try {
        Dataset ds = make_dataset(cfg.target, n, derive_seed(s, 1));
        EmpiricalMixtureScore score(ds, cfg.schedule);
        PointCloud z = quantile_eval
                           ? z_quantiles
                           : gaussian_cloud(cfg.m_eval, cfg.target.dim, derive_seed(s, 2));
        PointCloud out = push_cloud_fast(score, grid, z);
        cell.trial_w1.push_back(w1_cloud_to_target(out, cfg.target, derive_seed(s, 3)));
      } catch (const DivergenceError&) {
        cell.trial_w1.push_back(kNan);
      }
    }
    summarize(cell);
    rep.cells.push_back(cell);
  }
  if (quantile_eval) {
    rep.noise_floor = 0.0;
  } else {
    // evaluation noise: the same statistic on clouds drawn from the target
    std::vector<double> nulls;
    for (int r = 0; r < 3; ++r) {
      PointCloud ref = sample_target(cfg.target, cfg.m_eval, derive_seed(cfg.seed, 777 + r));
      nulls.push_back(w1_cloud_to_target(ref, cfg.target, derive_seed(cfg.seed, 888 + r)));
    }
    const auto ns = mean_stderr(nulls);
    rep.noise_floor = ns.mean / 2.0 + 2.0 * ns.stddev;
  }
  apply_floor(rep);
  fit_cells(rep, false);
  return rep;
}

RateReport rate_study_M(const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.sweep.variable != "M") throw ArgumentError("rate_study_M: sweep variable must be M");
  RateReport rep;
  rep.sweep_variable = "M";
  rep.seed = cfg.seed;
  rep.config_hash = config_hash(cfg);
  rep.band = cfg.slope_band.value_or(std::array<double, 2>{-1.3, -0.7});

  const int m_ref = 16 * static_cast<int>(cfg.sweep.grid.back());
  TimeGrid ref_grid = build_grid(cfg.schedule, cfg.n_coarse, m_ref);
  rep.cells.resize(cfg.sweep.grid.size());
  for (size_t ci = 0; ci < cfg.sweep.grid.size(); ++ci) rep.cells[ci].x = cfg.sweep.grid[ci];

  for (int trial = 0; trial < cfg.trials; ++trial) {
    const uint64_t s = derive_seed(cfg.seed, 5000 + trial);
    Dataset ds = make_dataset(cfg.target, cfg.n_data, derive_seed(s, 1));
    EmpiricalMixtureScore score(ds, cfg.schedule);
    PointCloud z = gaussian_cloud(cfg.m_eval, cfg.target.dim, derive_seed(s, 2));
    PointCloud ref;
    try {
      ref = push_cloud_fast(score, ref_grid, z);
    } catch (const DivergenceError&) {
      for (auto& cell : rep.cells) cell.trial_w1.push_back(kNan);
      continue;
    }
    for (size_t ci = 0; ci < cfg.sweep.grid.size(); ++ci) {
      try {
        TimeGrid g = build_grid(cfg.schedule, cfg.n_coarse, static_cast<int>(cfg.sweep.grid[ci]));
        PointCloud out = push_cloud_fast(score, g, z);
        rep.cells[ci].trial_w1.push_back(
            cfg.target.dim == 1 ? w1_1d(out, ref).value
                                : w1_sliced(out, ref, 64, derive_seed(s, 90 + ci)).value);
      } catch (const DivergenceError&) {
        rep.cells[ci].trial_w1.push_back(kNan);
      }
    }
  }
  for (auto& cell : rep.cells) summarize(cell);
  rep.noise_floor = 0.0;  // reference-run comparison has no sampling noise
  apply_floor(rep);
  fit_cells(rep, false);
  return rep;
}

RateReport rate_study_T(const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.sweep.variable != "T") throw ArgumentError("rate_study_T: sweep variable must be T");
  RateReport rep;
  rep.sweep_variable = "T";
  rep.seed = cfg.seed;
  rep.config_hash = config_hash(cfg);
  // default: -beta/2 within 25% (constant-schedule reading)
  const double b = cfg.schedule.beta_max;
  rep.band = cfg.slope_band.value_or(std::array<double, 2>{-0.625 * b, -0.375 * b});

  for (size_t ci = 0; ci < cfg.sweep.grid.size(); ++ci) {
    CellResult cell;
    cell.x = cfg.sweep.grid[ci];
    Schedule s = cfg.schedule;
    s.T = std::max(s.T, cell.x);  // allow evaluating the forward map at t = cell.x
    for (int trial = 0; trial < cfg.trials; ++trial) {
      const uint64_t sd = derive_seed(cfg.seed, 2000 * (ci + 1) + trial);
      PointCloud data = sample_target(cfg.target, cfg.m_eval, derive_seed(sd, 1));
      PointCloud fwd = forward_marginal(data, s, cell.x, derive_seed(sd, 2));
      PointCloud gauss = gaussian_cloud(cfg.m_eval, cfg.target.dim, derive_seed(sd, 3));
      cell.trial_w1.push_back(cfg.target.dim == 1
                                  ? w1_1d(fwd, gauss).value
                                  : w1_sliced(fwd, gauss, 64, derive_seed(sd, 4)).value);
    }
    summarize(cell);
    // diagnostic invariant: the mean coefficient itself decays at the rate
    if (s.mean_coeff(cell.x) > std::exp(-cfg.schedule.beta_min * cell.x / 2.0) + 1e-12)
      rep.notes.push_back("mean coefficient above exp(-beta_min t / 2) at T = " +
                          std::to_string(cell.x));
    rep.cells.push_back(cell);
  }
  std::vector<double> nulls;
  for (int r = 0; r < 3; ++r) {
    PointCloud a = gaussian_cloud(cfg.m_eval, cfg.target.dim, derive_seed(cfg.seed, 600 + r));
    PointCloud c = gaussian_cloud(cfg.m_eval, cfg.target.dim, derive_seed(cfg.seed, 650 + r));
    nulls.push_back(cfg.target.dim == 1 ? w1_1d(a, c).value
                                        : w1_sliced(a, c, 64, derive_seed(cfg.seed, 660 + r)).value);
  }
  const auto ns = mean_stderr(nulls);
  rep.noise_floor = ns.mean + 2.0 * ns.stddev;
  apply_floor(rep);
  fit_cells(rep, true);
  rep.pass = rep.pass && rep.notes.empty();
  return rep;
}

RateReport rate_study_eps(const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.sweep.variable != "eps")
    throw ArgumentError("rate_study_eps: sweep variable must be eps");
  RateReport rep;
  rep.sweep_variable = "eps";
  rep.seed = cfg.seed;
  rep.config_hash = config_hash(cfg);
  rep.band = cfg.slope_band.value_or(std::array<double, 2>{0.35, 0.65});

  Dataset ds = make_dataset(cfg.target, cfg.n_data, derive_seed(cfg.seed, 1));
  double mean_norm = 0.0;
  for (int i = 0; i < ds.size(); ++i) mean_norm += ds.points.row(i).norm() / ds.size();
  const double b_bar = cfg.schedule.beta_max;
  const double sqrt_d = std::sqrt(static_cast<double>(cfg.target.dim));

  bool chain_ok = true;
  for (size_t ci = 0; ci < cfg.sweep.grid.size(); ++ci) {
    CellResult cell;
    cell.x = cfg.sweep.grid[ci];
    for (int trial = 0; trial < cfg.trials; ++trial) {
      const uint64_t sd = derive_seed(cfg.seed, 3000 * (ci + 1) + trial);
      PointCloud fwd = sample_forward(ds, cfg.schedule, cell.x, cfg.m_eval, sd);
      cell.trial_w1.push_back(cfg.target.dim == 1
                                  ? w1_1d(fwd, ds.as_cloud()).value
                                  : w1_sliced(fwd, ds.as_cloud(), 64, derive_seed(sd, 4)).value);
    }
    summarize(cell);
    // early-stopping bound chain: W1 <= (b_bar eps / 2) E|x| + sqrt(b_bar eps) sqrt(d)
    const double bound = b_bar * cell.x / 2.0 * mean_norm + std::sqrt(b_bar * cell.x) * sqrt_d;
    if (cell.mean > bound) {
      chain_ok = false;
      rep.notes.push_back("bound chain violated at eps = " + std::to_string(cell.x));
    }
    rep.cells.push_back(cell);
  }
  std::vector<double> nulls;
  for (int r = 0; r < 3; ++r) {
    PointCloud a = sample_forward(ds, cfg.schedule, cfg.sweep.grid.front() * 1e-3, cfg.m_eval,
                                  derive_seed(cfg.seed, 700 + r));
    nulls.push_back(cfg.target.dim == 1
                        ? w1_1d(a, ds.as_cloud()).value
                        : w1_sliced(a, ds.as_cloud(), 64, derive_seed(cfg.seed, 710 + r)).value);
  }
  const auto ns = mean_stderr(nulls);
  rep.noise_floor = ns.mean + 2.0 * ns.stddev;
  apply_floor(rep);
  fit_cells(rep, false);
  rep.pass = rep.pass && chain_ok;
  return rep;
}

ContractionReport check_contraction(const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.target.dim != 1) throw MethodError("check_contraction requires d = 1");
  ContractionReport rep;
  rep.config_hash = config_hash(cfg);
  Dataset ds = make_dataset(cfg.target, cfg.n_data, derive_seed(cfg.seed, 1));
  const int m_proxy = cfg.m_eval;

  // base quantity W1(p_data, p_hat), proxied by a large population cloud
  std::vector<double> base_reps;
  for (int r = 0; r < 3; ++r) {
    PointCloud pop = sample_target(cfg.target, m_proxy, derive_seed(cfg.seed, 10 + r));
    base_reps.push_back(w1_1d(pop, ds.as_cloud()).value);
  }
  const auto base = mean_stderr(base_reps);

  TimeGrid grid = build_grid(cfg.schedule, cfg.n_coarse, cfg.m_steps);
  std::vector<double> times;
  for (int k = 0; k <= 4; ++k)
    times.push_back(grid.tau(std::min(grid.N_coarse, std::max(1, k * grid.N_coarse / 4))));
  std::sort(times.begin(), times.end());
  times.erase(std::unique(times.begin(), times.end()), times.end());

  rep.pass = true;
  for (double t : times) {
    std::vector<double> lhs_reps;
    for (int r = 0; r < 3; ++r) {
      PointCloud pop = sample_target(cfg.target, m_proxy, derive_seed(cfg.seed, 100 + r));
      PointCloud pop_t = forward_marginal(pop, cfg.schedule, t, derive_seed(cfg.seed, 200 + r));
      PointCloud emp_t =
          sample_forward(ds, cfg.schedule, t, m_proxy, derive_seed(cfg.seed, 300 + r));
      lhs_reps.push_back(w1_1d(pop_t, emp_t).value);
    }
    const auto lhs = mean_stderr(lhs_reps);
    const double mt = cfg.schedule.mean_coeff(t);
    ContractionRow row;
    row.t = t;
    row.lhs = lhs.mean;
    row.rhs = mt * base.mean;
    row.combined_stderr = std::sqrt(lhs.stderr_ * lhs.stderr_ +
                                    mt * mt * base.stderr_ * base.stderr_);
    row.ok = row.lhs <= row.rhs + 3.0 * row.combined_stderr;
    rep.pass = rep.pass && row.ok;
    rep.rows.push_back(row);
  }
  return rep;
}

IdentityReport check_identities(const ExperimentConfig& cfg, bool inject_fault) {
  cfg.validate();
  IdentityReport rep;
  rep.config_hash = config_hash(cfg);
  Rng rng(derive_seed(cfg.seed, 42));
  const Schedule& s = cfg.schedule;

  Dataset ds = make_dataset(cfg.target, cfg.n_data, derive_seed(cfg.seed, 1));
  EmpiricalMixtureScore score(ds, s);
  const int d = cfg.target.dim;
  const Vec fault = inject_fault ? Vec::Constant(d, 0.1) : Vec::Zero(d);

  auto probe_point = [&](double spread) {
    Vec x(d);
    for (int i = 0; i < d; ++i) x[i] = rng.uniform(-spread, spread);
    return x;
  };
  auto probe_time = [&] { return rng.uniform(std::max(s.eps, 0.05), s.T); };

  {  // posterior-mean identity: score == (m * posterior_mean - x) / sigma^2
    IdentityCheck c{"posterior_mean_identity", 0.0, 1e-10, false};
    for (int p = 0; p < 200; ++p) {
      const double t = probe_time();
      const Vec x = probe_point(3.0);
      const double m = s.mean_coeff(t);
      const double sig2 = s.std_coeff(t) * s.std_coeff(t);
      const Vec lhs = score.eval(x, t) + fault;
      const Vec rhs = (m * score.posterior_mean(x, t) - x) / sig2;
      c.worst = std::max(c.worst, (lhs - rhs).lpNorm<Eigen::Infinity>());
    }
    c.pass = c.worst <= c.tolerance;
    rep.checks.push_back(c);
  }
  {  // score vs central difference of the log-density
    IdentityCheck c{"score_vs_finite_difference", 0.0, 1e-6, false};
    const double h = 1e-5;
    for (int p = 0; p < 200; ++p) {
      const double t = probe_time();
      const Vec x = probe_point(3.0);
      const Vec sc = score.eval(x, t) + fault;
      for (int i = 0; i < d; ++i) {
        Vec xp = x, xm = x;
        xp[i] += h;
        xm[i] -= h;
        const double fd =
            (score.log_density_unnormalized(xp, t) - score.log_density_unnormalized(xm, t)) /
            (2.0 * h);
        const double rel = std::abs(sc[i] - fd) / std::max(1.0, std::abs(fd));
        c.worst = std::max(c.worst, rel);
      }
    }
    c.pass = c.worst <= c.tolerance;
    rep.checks.push_back(c);
  }
  {  // Jacobian: finite differences, symmetry, eigenvalue floor
    IdentityCheck cf{"jacobian_vs_finite_difference", 0.0, 1e-5, false};
    IdentityCheck cs{"jacobian_symmetry", 0.0, 1e-12, false};
    IdentityCheck ce{"jacobian_eigen_floor", 0.0, 1e-9, false};
    const double h = 1e-5;
    for (int p = 0; p < 100; ++p) {
      const double t = probe_time();
      const Vec x = probe_point(3.0);
      const Mat J = score.jacobian(x, t);
      cs.worst = std::max(cs.worst, (J - J.transpose()).lpNorm<Eigen::Infinity>());
      Mat fd(d, d);
      for (int i = 0; i < d; ++i) {
        Vec xp = x, xm = x;
        xp[i] += h;
        xm[i] -= h;
        fd.col(i) = (score.eval(xp, t) - score.eval(xm, t)) / (2.0 * h);
      }
      const double scale = std::max(1.0, J.lpNorm<Eigen::Infinity>());
      cf.worst = std::max(cf.worst, (J - fd).lpNorm<Eigen::Infinity>() / scale);
      const double sig2 = s.std_coeff(t) * s.std_coeff(t);
      Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (J + J.transpose()));
      ce.worst = std::max(ce.worst, -(es.eigenvalues().minCoeff() + 1.0 / sig2));
    }
    cf.pass = cf.worst <= cf.tolerance;
    cs.pass = cs.worst <= cs.tolerance;
    ce.pass = ce.worst <= ce.tolerance;
    rep.checks.push_back(cf);
    rep.checks.push_back(cs);
    rep.checks.push_back(ce);
  }
  {  // solver composition identity, bitwise
    IdentityCheck c{"solver_composition_bitwise", 0.0, 0.0, false};
    TimeGrid grid = build_grid(s, cfg.n_coarse, cfg.m_steps);
    for (int p = 0; p < 1000; ++p) {
      Vec x(d);
      for (int i = 0; i < d; ++i) x[i] = rng.normal();
      const int k = 1 + static_cast<int>(rng.uniform_index(grid.N_coarse));
      const Vec direct = ddpm_solve_from(score, grid, x, grid.coarse_index[k]);
      const Vec composed =
          ddpm_solve_from(score, grid, g_multi(score, grid, k, x), grid.coarse_index[k - 1]);
      c.worst = std::max(c.worst, (direct - composed).lpNorm<Eigen::Infinity>());
    }
    c.pass = c.worst <= c.tolerance;
    rep.checks.push_back(c);
  }
  {  // Lipschitz certificates dominate probed Jacobian norms
    IdentityCheck c{"lipschitz_probe_vs_certificate", 0.0, 0.0, false};
    for (double t : {std::max(s.eps, 0.05), s.T / 2.0, s.T}) {
      const auto cert = lipschitz_certificate(score, t, 200, derive_seed(cfg.seed, 9));
      c.worst = std::max(c.worst, cert.probed - cert.bound);
    }
    c.pass = c.worst <= c.tolerance;
    rep.checks.push_back(c);
  }
  {  // n = 1: the Jacobian degenerates to -I/sigma^2
    IdentityCheck c{"single_point_jacobian", 0.0, 1e-12, false};
    Dataset one = make_dataset(cfg.target, 1, derive_seed(cfg.seed, 77));
    EmpiricalMixtureScore sone(one, s);
    for (int p = 0; p < 20; ++p) {
      const double t = probe_time();
      const double sig2 = s.std_coeff(t) * s.std_coeff(t);
      const Mat J = sone.jacobian(probe_point(2.0), t);
      c.worst = std::max(c.worst, (J + Mat::Identity(d, d) / sig2).lpNorm<Eigen::Infinity>());
    }
    c.pass = c.worst <= c.tolerance;
    rep.checks.push_back(c);
  }

  rep.pass = true;
  for (const auto& c : rep.checks) rep.pass = rep.pass && c.pass;
  return rep;
}

TailsReport check_tails(const ExperimentConfig& cfg) {
  cfg.validate();
  TailsReport rep;
  rep.config_hash = config_hash(cfg);
  std::vector<double> r0_grid = {1.0, 2.0, 3.0, 4.0};
  rep.decay = tail_decay_check(cfg.target, r0_grid, cfg.m_eval, derive_seed(cfg.seed, 1));

  Vec a(1), bpt(1);
  a << -1.0;
  bpt << 1.0;
  auto tp = TargetDistribution::two_point(a, bpt);
  auto tp_rep = tail_decay_check(tp, {1.5, 2.0, 3.0}, cfg.m_eval, derive_seed(cfg.seed, 2));
  for (const auto& row : tp_rep.rows)
    if (row.replaced_mass != 0.0 || row.w1_gap != 0.0) rep.two_point_zero = false;

  rep.pass = rep.decay.mass_monotone && rep.decay.gap_monotone && rep.decay.gap_below_bound &&
             rep.two_point_zero;
  return rep;
}

std::string config_hash(const ExperimentConfig& cfg) {
  nlohmann::json j;
  to_json(j, cfg);
  const std::string dump = j.dump();
  uint64_t h = 14695981039346656037ull;
  for (unsigned char c : dump) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void to_json(nlohmann::json& j, const ExperimentConfig& cfg) {
  nlohmann::json jt, js;
  cmlab::to_json(jt, cfg.target);
  cmlab::to_json(js, cfg.schedule);
  j = nlohmann::json{{"target", jt},
                     {"schedule", js},
                     {"n_coarse", cfg.n_coarse},
                     {"m_steps", cfg.m_steps},
                     {"method", cfg.method},
                     {"trials", cfg.trials},
                     {"m_eval", cfg.m_eval},
                     {"n_data", cfg.n_data},
                     {"seed", cfg.seed},
                     {"w1_method", cfg.w1_method}};
  if (!cfg.sweep.variable.empty())
    j["sweep"] = {{"variable", cfg.sweep.variable}, {"grid", cfg.sweep.grid}};
  if (cfg.slope_band) j["slope_band"] = *cfg.slope_band;
}

void from_json(const nlohmann::json& j, ExperimentConfig& cfg) {
  cmlab::from_json(j.at("target"), cfg.target);
  cmlab::from_json(j.at("schedule"), cfg.schedule);
  cfg.n_coarse = j.value("n_coarse", cfg.n_coarse);
  cfg.m_steps = j.value("m_steps", cfg.m_steps);
  cfg.method = j.value("method", cfg.method);
  cfg.trials = j.value("trials", cfg.trials);
  cfg.m_eval = j.value("m_eval", cfg.m_eval);
  cfg.n_data = j.value("n_data", cfg.n_data);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.w1_method = j.value("w1_method", cfg.w1_method);
  if (j.contains("sweep")) {
    cfg.sweep.variable = j.at("sweep").at("variable").get<std::string>();
    cfg.sweep.grid = j.at("sweep").at("grid").get<std::vector<double>>();
  }
  if (j.contains("slope_band"))
    cfg.slope_band = j.at("slope_band").get<std::array<double, 2>>();
}

void to_json(nlohmann::json& j, const RateReport& r) {
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : r.cells) {
    nlohmann::json jc{{"x", c.x},         {"mean", c.mean},          {"stddev", c.stddev},
                      {"stderr", c.stderr_}, {"excluded", c.excluded}, {"diverged", c.diverged},
                      {"trials", c.trial_w1}};
    cells.push_back(jc);
  }
  j = nlohmann::json{{"sweep_variable", r.sweep_variable},
                     {"cells", cells},
                     {"noise_floor", r.noise_floor},
                     {"slope", r.fit.slope},
                     {"intercept", r.fit.intercept},
                     {"slope_stderr", r.fit.stderr_},
                     {"band", r.band},
                     {"fit_kind", r.fit_kind},
                     {"pass", r.pass},
                     {"seed", r.seed},
                     {"config_hash", r.config_hash},
                     {"notes", r.notes}};
}

void to_json(nlohmann::json& j, const ContractionReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows)
    rows.push_back({{"t", row.t},
                    {"lhs", row.lhs},
                    {"rhs", row.rhs},
                    {"combined_stderr", row.combined_stderr},
                    {"ok", row.ok}});
  j = nlohmann::json{{"rows", rows}, {"pass", r.pass}, {"config_hash", r.config_hash}};
}

void to_json(nlohmann::json& j, const IdentityReport& r) {
  nlohmann::json checks = nlohmann::json::array();
  for (const auto& c : r.checks)
    checks.push_back(
        {{"name", c.name}, {"worst", c.worst}, {"tolerance", c.tolerance}, {"pass", c.pass}});
  j = nlohmann::json{{"checks", checks}, {"pass", r.pass}, {"config_hash", r.config_hash}};
}

void to_json(nlohmann::json& j, const TailsReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.decay.rows)
    rows.push_back({{"r0", row.r0},
                    {"replaced_mass", row.replaced_mass},
                    {"w1_gap", row.w1_gap},
                    {"tail_mean_bound", row.tail_mean_bound}});
  j = nlohmann::json{{"rows", rows},
                     {"mass_monotone", r.decay.mass_monotone},
                     {"gap_monotone", r.decay.gap_monotone},
                     {"gap_below_bound", r.decay.gap_below_bound},
                     {"two_point_zero", r.two_point_zero},
                     {"pass", r.pass},
                     {"config_hash", r.config_hash}};
}

namespace {

void write_rate_artifacts(const RateReport& rep, const std::string& out_dir) {
  {
    std::ofstream cells(out_dir + "/cells.csv");
    cells << "cell,trial,w1,stderr\n";
    for (size_t ci = 0; ci < rep.cells.size(); ++ci)
      for (size_t tr = 0; tr < rep.cells[ci].trial_w1.size(); ++tr)
        cells << rep.cells[ci].x << "," << tr << "," << rep.cells[ci].trial_w1[tr] << ","
              << rep.cells[ci].stderr_ << "\n";
  }
  {
    std::ofstream plot(out_dir + "/plot.csv");
    plot << "x,mean,stderr,fit\n";
    for (const auto& c : rep.cells) {
      double fitted = kNan;
      if (!c.excluded) {
        const double lx = rep.fit_kind == "semilog" ? c.x : std::log(c.x);
        fitted = std::exp(rep.fit.intercept + rep.fit.slope * lx);
      }
      plot << c.x << "," << c.mean << "," << c.stderr_ << "," << fitted << "\n";
    }
  }
}

void write_report_json(const nlohmann::json& body, const std::string& command,
                       const std::string& arg, const ExperimentConfig& cfg,
                       const std::string& out_dir) {
  nlohmann::json j;
  j["schema_version"] = kReportSchemaVersion;
  j["command"] = command;
  j["arg"] = arg;
  nlohmann::json jc;
  to_json(jc, cfg);
  j["config"] = jc;
  j["config_hash"] = config_hash(cfg);
  j["report"] = body;
  j["timestamp"] = static_cast<long long>(
      std::chrono::duration_cast<std::chrono::seconds>(
          std::chrono::system_clock::now().time_since_epoch())
          .count());
  std::ofstream out(out_dir + "/report.json");
  out << j.dump(2) << "\n";
}

}  // namespace

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ArgumentError("cannot open config file: " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ArgumentError(std::string("config parse error: ") + e.what());
  }
  ExperimentConfig cfg;
  if (j.contains("preset")) {
    cfg = preset_config(j.at("preset").get<std::string>(), j.value("n_data", 64),
                        j.value("dim", 1), j.value("down_scale", 0.05));
    // explicit fields still override the preset
    nlohmann::json merged;
    to_json(merged, cfg);
    merged.update(j);
    merged.erase("preset");
    merged.erase("dim");
    merged.erase("down_scale");
    from_json(merged, cfg);
  } else {
    from_json(j, cfg);
  }
  cfg.validate();
  return cfg;
}

int run_command(const std::string& command, const std::string& arg, const ExperimentConfig& cfg_in,
                const RunOptions& opts) {
  ExperimentConfig cfg = cfg_in;
  if (opts.seed_override) cfg.seed = *opts.seed_override;
  std::filesystem::create_directories(opts.out_dir);
  try {
    if (command == "rates") {
      RateReport rep;
      if (arg == "n") {
        rep = rate_study_n(cfg);
      } else if (arg == "M") {
        rep = rate_study_M(cfg);
      } else if (arg == "T") {
        rep = rate_study_T(cfg);
      } else if (arg == "eps") {
        rep = rate_study_eps(cfg);
      } else {
        throw ArgumentError("rates: unknown sweep variable " + arg);
      }
      nlohmann::json body;
      to_json(body, rep);
      write_report_json(body, command, arg, cfg, opts.out_dir);
      write_rate_artifacts(rep, opts.out_dir);
      return rep.pass ? 0 : 1;
    }
    if (command == "check") {
      nlohmann::json body;
      bool pass = false;
      if (arg == "identities") {
        auto rep = check_identities(cfg);
        to_json(body, rep);
        pass = rep.pass;
      } else if (arg == "contraction") {
        auto rep = check_contraction(cfg);
        to_json(body, rep);
        pass = rep.pass;
      } else if (arg == "tails") {
        auto rep = check_tails(cfg);
        to_json(body, rep);
        pass = rep.pass;
      } else {
        throw ArgumentError("check: unknown check " + arg);
      }
      write_report_json(body, command, arg, cfg, opts.out_dir);
      return pass ? 0 : 1;
    }
    if (command == "train") {
      if (arg != "cd" && arg != "ct") throw ArgumentError("train: kind must be cd or ct");
      Dataset ds = make_dataset(cfg.target, cfg.n_data, derive_seed(cfg.seed, 1));
      TimeGrid grid = build_grid(cfg.schedule, cfg.n_coarse, cfg.m_steps);
      TrainConfig tc;
      tc.m_batch = std::min(cfg.m_eval, 64);
      tc.method = parse_w1_method(cfg.w1_method);
      std::unique_ptr<PluginScore> plugin;
      const ScoreField* drive = nullptr;
      if (arg == "cd") {
        plugin = std::make_unique<PluginScore>(
            train_plugin_score(ds, cfg.schedule, PluginTrainConfig{}, derive_seed(cfg.seed, 2)));
        drive = plugin.get();
      }
      TrainResult res =
          train_consistency(ds, cfg.schedule, grid, arg, drive, tc, derive_seed(cfg.seed, 3));
      save_trace_csv(res.trace, opts.out_dir + "/trace.csv");
      {
        std::ofstream ck(opts.out_dir + "/checkpoint.json");
        ck << res.net.to_json().dump(2) << "\n";
      }
      nlohmann::json body;
      body["final_loss"] = res.trace.empty() ? 0.0 : res.trace.back().total;
      body["initial_loss"] = res.trace.empty() ? 0.0 : res.trace.front().total;
      body["steps"] = res.trace.size();
      body["certified_lipschitz"] = res.net.certified_lipschitz();
      body["r_budget"] = res.net.r_budget();
      write_report_json(body, command, arg, cfg, opts.out_dir);
      return 0;
    }
    if (command == "sample") {
      Dataset ds = make_dataset(cfg.target, cfg.n_data, derive_seed(cfg.seed, 1));
      EmpiricalMixtureScore score(ds, cfg.schedule);
      TimeGrid grid = build_grid(cfg.schedule, cfg.n_coarse, cfg.m_steps);
      PointCloud z = gaussian_cloud(cfg.m_eval, cfg.target.dim, derive_seed(cfg.seed, 2));
      PointCloud out = push_cloud_fast(score, grid, z);
      {
        std::ofstream samples(opts.out_dir + "/samples.csv");
        for (int i = 0; i < out.size(); ++i) {
          for (int c = 0; c < out.dim(); ++c) samples << (c ? "," : "") << out.points(i, c);
          samples << "\n";
        }
      }
      nlohmann::json body;
      body["m"] = out.size();
      body["w1_to_target"] = w1_cloud_to_target(out, cfg.target, derive_seed(cfg.seed, 3));
      write_report_json(body, command, arg, cfg, opts.out_dir);
      return 0;
    }
    throw ArgumentError("unknown command: " + command);
  } catch (const DivergenceError&) {
    return 3;
  } catch (const ArgumentError&) {
    return 2;
  } catch (const DomainError&) {
    return 2;
  }
}

}  // namespace cmlab
