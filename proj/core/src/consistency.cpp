#include "cmlab/consistency.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numeric>

#include "cmlab/rng.hpp"

namespace cmlab {

namespace {

constexpr double kRBudgetClamp = 1e6;

std::string method_name(W1Method m) {
  switch (m) {
    case W1Method::Sorted1d: return "sorted_1d";
    case W1Method::Assignment: return "assignment";
    case W1Method::Sliced: return "sliced";
  }
  return "?";
}

double w1_by_method(const PointCloud& a, const PointCloud& b, W1Method m, uint64_t seed) {
  switch (m) {
    case W1Method::Sorted1d: return w1_1d(a, b).value;
    case W1Method::Assignment: return w1_assignment(a, b).value;
    case W1Method::Sliced: return w1_sliced(a, b, 64, seed).value;
  }
  throw ArgumentError("unknown W1 method");
}

PointCloud apply_model(const ConsistencyModel& f, const PointCloud& c, double t) {
  PointCloud out;
  out.points = Mat(c.size(), c.dim());
  for (int i = 0; i < c.size(); ++i)
    out.points.row(i) = f.eval(c.points.row(i).transpose(), t).transpose();
  return out;
}

PointCloud push_g_multi(const ScoreField& score, const TimeGrid& g, int k, const PointCloud& a) {
  PointCloud b;
  b.points = Mat(a.size(), a.dim());
  for (int i = 0; i < a.size(); ++i)
    b.points.row(i) = g_multi(score, g, k, a.points.row(i).transpose()).transpose();
  return b;
}

ConsistencyLossValue loss_impl(const ConsistencyModel& f, const Dataset& ds, const Schedule& s,
                               const TimeGrid& g, const ScoreField& score, int m_batch,
                               uint64_t seed, W1Method method, bool coupled) {
  if (m_batch < 2) throw ArgumentError("consistency loss: m_batch must be >= 2");
  ConsistencyLossValue out;
  out.method = method_name(method);
  for (int k = 1; k <= g.N_coarse; ++k) {
    PointCloud a = sample_forward(ds, s, g.tau(k), m_batch, derive_seed(seed, 2 * k));
    PointCloud src = coupled ? a : sample_forward(ds, s, g.tau(k), m_batch,
                                                  derive_seed(seed, 2 * k + 1));
    PointCloud b = push_g_multi(score, g, k, src);
    const double v = w1_by_method(apply_model(f, a, g.tau(k)), apply_model(f, b, g.tau(k - 1)),
                                  method, derive_seed(seed, 1000 + k));
    out.per_interval.push_back(v);
    out.total += v;
  }
  return out;
}

// Matched index pairs (into a, into b) under the frozen optimal coupling.
std::vector<std::pair<int, int>> match_pairs(const PointCloud& fa, const PointCloud& fb,
                                             W1Method method) {
  const int m = fa.size();
  std::vector<std::pair<int, int>> pairs(m);
  if (method == W1Method::Sorted1d && fa.dim() == 1) {
    std::vector<int> ia(m), ib(m);
    std::iota(ia.begin(), ia.end(), 0);
    std::iota(ib.begin(), ib.end(), 0);
    std::sort(ia.begin(), ia.end(),
              [&](int p, int q) { return fa.points(p, 0) < fa.points(q, 0); });
    std::sort(ib.begin(), ib.end(),
              [&](int p, int q) { return fb.points(p, 0) < fb.points(q, 0); });
    for (int i = 0; i < m; ++i) pairs[i] = {ia[i], ib[i]};
  } else {
    const auto match = assignment_matching(fa, fb);
    for (int i = 0; i < m; ++i) pairs[i] = {i, match[i]};
  }
  return pairs;
}

}  // namespace

ConsistencyNet::ConsistencyNet(int dim, int hidden, int depth, double r_budget, const Schedule& s,
                               uint64_t seed)
    : dim_(dim), r_(r_budget), sched_(s) {
  std::vector<int> dims;
  dims.push_back(dim + 1);
  for (int l = 0; l < depth; ++l) dims.push_back(hidden);
  dims.push_back(dim);
  h_ = Mlp(dims, seed, 0.5);
  h_.project_lipschitz(r_ - 1.0, dim_);
}

Vec ConsistencyNet::augment(const Vec& x, double t) const {
  Vec in(dim_ + 1);
  in.head(dim_) = x;
  in[dim_] = t;
  return in;
}

Vec ConsistencyNet::eval(const Vec& x, double t) const {
  if (t == sched_.eps) return x;  // boundary branch, bitwise identity
  if (t < sched_.eps || t > sched_.T) throw DomainError("consistency model: t outside [eps, T]");
  const double c = (t - sched_.eps) / (sched_.T - sched_.eps);
  return x + c * h_.forward(augment(x, t));
}

void ConsistencyNet::accumulate_gradient(const Vec& x, double t, const Vec& g) {
  if (t == sched_.eps) return;  // the boundary branch has no parameters
  const double c = (t - sched_.eps) / (sched_.T - sched_.eps);
  h_.backward(augment(x, t), c * g);
}

void ConsistencyNet::step(double lr) {
  h_.adam_step(lr);
  h_.project_lipschitz(r_ - 1.0, dim_);
}

double ConsistencyNet::certified_lipschitz() const { return 1.0 + h_.lipschitz_product(dim_); }

nlohmann::json ConsistencyNet::to_json() const {
  nlohmann::json j;
  j["h"] = h_.to_json();
  j["dim"] = dim_;
  j["r_budget"] = r_;
  nlohmann::json js;
  cmlab::to_json(js, sched_);
  j["schedule"] = js;
  return j;
}

ConsistencyNet ConsistencyNet::from_json(const nlohmann::json& j) {
  ConsistencyNet n;
  n.h_ = Mlp::from_json(j.at("h"));
  n.dim_ = j.at("dim").get<int>();
  n.r_ = j.at("r_budget").get<double>();
  cmlab::from_json(j.at("schedule"), n.sched_);
  return n;
}

Vec BaselineConsistency::eval(const Vec& x, double t) const {
  if (t == grid_.times.front()) return x;
  return ddpm_solve_from(score_, grid_, x, t);
}

BaselineConsistency emulate_baseline(const ScoreField& score, const TimeGrid& grid) {
  return BaselineConsistency(score, grid);
}

ConsistencyLossValue loss_cd(const ConsistencyModel& f, const Dataset& ds, const TimeGrid& g,
                             const ScoreField& score, int m_batch, uint64_t seed, W1Method method,
                             bool coupled) {
  return loss_impl(f, ds, score.schedule(), g, score, m_batch, seed, method, coupled);
}

ConsistencyLossValue loss_ct(const ConsistencyModel& f, const Dataset& ds, const Schedule& s,
                             const TimeGrid& g, int m_batch, uint64_t seed, W1Method method,
                             bool coupled) {
  EmpiricalMixtureScore score(ds, s);
  return loss_impl(f, ds, s, g, score, m_batch, seed, method, coupled);
}

TrainResult train_consistency(const Dataset& ds, const Schedule& s, const TimeGrid& g,
                              const std::string& kind, const ScoreField* score,
                              const TrainConfig& cfg, uint64_t seed) {
  if (kind != "cd" && kind != "ct") throw ArgumentError("train_consistency: kind must be cd or ct");
  if (kind == "cd" && score == nullptr)
    throw ArgumentError("train_consistency: cd requires a score field");
  EmpiricalMixtureScore exact(ds, s);
  const ScoreField& drive = (kind == "cd") ? *score : static_cast<const ScoreField&>(exact);

  const int d = ds.dim();
  double r = cfg.r_budget;
  if (r <= 0.0) {
    const double l_eps = lipschitz_certificate(exact, s.eps).bound;
    r = std::min(kRBudgetClamp, 2.0 * std::exp(10.0 * (1.0 + l_eps) * d * s.beta_max * s.T));
  }
  TrainResult res;
  res.net = ConsistencyNet(d, cfg.hidden, cfg.depth, r, s, derive_seed(seed, 0));

  for (int step = 0; step < cfg.steps; ++step) {
    res.net.zero_grad();
    TrainTraceRow row;
    row.step = step;
    const uint64_t step_seed = derive_seed(seed, 1 + step);
    for (int k = 1; k <= g.N_coarse; ++k) {
      PointCloud a = sample_forward(ds, s, g.tau(k), cfg.m_batch, derive_seed(step_seed, k));
      PointCloud b = push_g_multi(drive, g, k, a);
      PointCloud fa = apply_model(res.net, a, g.tau(k));
      PointCloud fb = apply_model(res.net, b, g.tau(k - 1));
      const auto pairs = match_pairs(fa, fb, cfg.method);
      double v = 0.0;
      const int m = fa.size();
      for (const auto& [i, j] : pairs) {
        const Vec diff = fa.points.row(i).transpose() - fb.points.row(j).transpose();
        const double dist = diff.norm();
        v += dist / m;
        if (dist > 1e-12) {
          const Vec gu = diff / (dist * m);
          res.net.accumulate_gradient(a.points.row(i).transpose(), g.tau(k), gu);
          res.net.accumulate_gradient(b.points.row(j).transpose(), g.tau(k - 1), -gu);
        }
      }
      row.per_interval.push_back(v);
      row.total += v;
    }
    res.trace.push_back(row);
    if (!std::isfinite(row.total))
      throw TrainingError("consistency training produced a non-finite loss at step " +
                          std::to_string(step));
    res.net.step(cfg.lr);
  }

  if (!res.trace.empty()) {
    const int w = std::min<int>(10, static_cast<int>(res.trace.size()));
    double head = 0.0, tail = 0.0;
    for (int i = 0; i < w; ++i) {
      head += res.trace[i].total / w;
      tail += res.trace[res.trace.size() - 1 - i].total / w;
    }
    if (tail > head * 1.0 + 1e-12)
      throw TrainingError("consistency training ended above its starting loss");
  }
  return res;
}

PointCloud one_step_sample(const ConsistencyModel& f, const Schedule& s, int dim, int m,
                           uint64_t seed) {
  PointCloud z = gaussian_cloud(m, dim, seed);
  return apply_model(f, z, s.T);
}

void save_trace_csv(const std::vector<TrainTraceRow>& trace, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ArgumentError("cannot open trace file: " + path);
  out << "step,total";
  if (!trace.empty())
    for (size_t k = 0; k < trace.front().per_interval.size(); ++k) out << ",interval_" << k + 1;
  out << "\n";
  for (const auto& row : trace) {
    out << row.step << "," << row.total;
    for (double v : row.per_interval) out << "," << v;
    out << "\n";
  }
}

}  // namespace cmlab
