#include "cmlab/transport.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <nlohmann/json.hpp>

#include "cmlab/mathutil.hpp"

namespace cmlab {

namespace {

std::vector<double> sorted_column(const PointCloud& c) {
  std::vector<double> v(c.size());
  for (int i = 0; i < c.size(); ++i) v[i] = c.points(i, 0);
  std::sort(v.begin(), v.end());
  return v;
}

// Integral over (0,1) of |Qa(u) - Qb(u)| for piecewise-constant empirical
// quantile functions with breakpoints at i/na and j/nb.
double quantile_integral(const std::vector<double>& a, const std::vector<double>& b) {
  const size_t na = a.size(), nb = b.size();
  size_t i = 0, j = 0;
  double u = 0.0, total = 0.0;
  while (i < na && j < nb) {
    const double ua = static_cast<double>(i + 1) / na;
    const double ub = static_cast<double>(j + 1) / nb;
    const double next = std::min(ua, ub);
    total += (next - u) * std::abs(a[i] - b[j]);
    u = next;
    if (ua <= next + 1e-18) ++i;
    if (ub <= next + 1e-18) ++j;
  }
  return total;
}

}  // namespace

W1Estimate w1_1d(const PointCloud& a, const PointCloud& b) {
  if (a.dim() != 1 || b.dim() != 1) throw MethodError("w1_1d requires d = 1");
  if (a.size() < 1 || b.size() < 1) throw ArgumentError("w1_1d: empty cloud");
  auto sa = sorted_column(a);
  auto sb = sorted_column(b);
  W1Estimate e;
  e.method = "sorted_1d";
  e.n_a = a.size();
  e.n_b = b.size();
  if (sa.size() == sb.size()) {
    double sum = 0.0;
    for (size_t i = 0; i < sa.size(); ++i) sum += std::abs(sa[i] - sb[i]);
    e.value = sum / sa.size();
  } else {
    e.value = quantile_integral(sa, sb);
  }
  return e;
}

// Jonker-Volgenant style shortest augmenting path assignment, O(m^3).
std::vector<int> assignment_matching(const PointCloud& a, const PointCloud& b) {
  if (a.size() != b.size()) throw MethodError("w1_assignment: size mismatch");
  const int m = a.size();
  if (m > kAssignmentCap) throw MethodError("w1_assignment: size exceeds cap");
  if (m < 1) throw ArgumentError("w1_assignment: empty cloud");

  Mat cost(m, m);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) cost(i, j) = (a.points.row(i) - b.points.row(j)).norm();

  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(m + 1, 0.0), v(m + 1, 0.0);
  std::vector<int> p(m + 1, m), way(m + 1, 0);  // p[j]: row matched to column j
  for (int i = 0; i < m; ++i) {
    p[m] = i;
    int j0 = m;
    std::vector<double> minv(m + 1, inf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = -1;
      for (int j = 0; j < m; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0, j) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != m);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != m);
  }
  std::vector<int> match(m, -1);  // match[row of a] = row of b
  for (int j = 0; j < m; ++j) match[p[j]] = j;
  return match;
}

W1Estimate w1_assignment(const PointCloud& a, const PointCloud& b) {
  const auto match = assignment_matching(a, b);
  double sum = 0.0;
  for (int i = 0; i < a.size(); ++i)
    sum += (a.points.row(i) - b.points.row(match[i])).norm();
  W1Estimate e;
  e.method = "assignment";
  e.value = sum / a.size();
  e.n_a = a.size();
  e.n_b = b.size();
  return e;
}

W1Estimate w1_sliced(const PointCloud& a, const PointCloud& b, int n_proj, uint64_t seed) {
  if (n_proj < 1) throw ArgumentError("w1_sliced: n_proj must be >= 1");
  if (a.dim() != b.dim()) throw MethodError("w1_sliced: dimension mismatch");
  const int d = a.dim();
  Rng rng(seed);
  std::vector<double> vals(n_proj);
  for (int p = 0; p < n_proj; ++p) {
    Vec dir(d);
    for (int i = 0; i < d; ++i) dir[i] = rng.normal();
    dir /= dir.norm();
    PointCloud pa{a.points * dir};
    PointCloud pb{b.points * dir};
    vals[p] = w1_1d(pa, pb).value;
  }
  const auto st = mean_stderr(vals);
  W1Estimate e;
  e.method = "sliced";
  e.value = st.mean;
  e.stderr_ = st.stderr_;
  e.n_a = a.size();
  e.n_b = b.size();
  e.n_proj = n_proj;
  return e;
}

double w1_to_target_1d(const PointCloud& a, const TargetDistribution& td, int quad_points) {
  if (a.dim() != 1) throw MethodError("w1_to_target_1d requires d = 1");
  if (!td.has_quantile()) throw MethodError("w1_to_target_1d: target lacks a quantile function");
  if (quad_points < 1) throw ArgumentError("w1_to_target_1d: quad_points must be >= 1");
  auto sa = sorted_column(a);
  const int n = static_cast<int>(sa.size());
  double total = 0.0;
  for (int q = 0; q < quad_points; ++q) {
    const double u = (q + 0.5) / quad_points;
    const int idx = std::min(n - 1, static_cast<int>(u * n));
    total += std::abs(sa[idx] - td.quantile(u));
  }
  return total / quad_points;
}

PointCloud truncate_cloud(const PointCloud& a, double r0) {
  if (!(r0 > 0.0)) throw ArgumentError("truncate_cloud: R0 must be positive");
  PointCloud out = a;
  for (int i = 0; i < out.size(); ++i)
    if (out.points.row(i).norm() > r0) out.points.row(i).setZero();
  return out;
}

TailDecayReport tail_decay_check(const TargetDistribution& td, const std::vector<double>& r0_grid,
                                 int m, uint64_t seed) {
  PointCloud a = sample_target(td, m, seed);
  TailDecayReport rep;
  for (double r0 : r0_grid) {
    PointCloud t = truncate_cloud(a, r0);
    TailDecayRow row;
    row.r0 = r0;
    int replaced = 0;
    double tail_sum = 0.0;
    for (int i = 0; i < m; ++i) {
      const double nrm = a.points.row(i).norm();
      if (nrm > r0) {
        ++replaced;
        tail_sum += nrm;
      }
    }
    row.replaced_mass = static_cast<double>(replaced) / m;
    row.tail_mean_bound = tail_sum / m;
    row.w1_gap = (a.dim() == 1) ? w1_1d(a, t).value : w1_sliced(a, t, 64, seed + 1).value;
    rep.rows.push_back(row);
  }
  rep.mass_monotone = rep.gap_monotone = rep.gap_below_bound = true;
  for (size_t i = 0; i < rep.rows.size(); ++i) {
    if (i > 0 && rep.rows[i].replaced_mass > rep.rows[i - 1].replaced_mass)
      rep.mass_monotone = false;
    if (i > 0 && rep.rows[i].w1_gap > rep.rows[i - 1].w1_gap + 1e-12) rep.gap_monotone = false;
    if (rep.rows[i].w1_gap > rep.rows[i].tail_mean_bound + 1e-9) rep.gap_below_bound = false;
  }
  return rep;
}

void to_json(nlohmann::json& j, const W1Estimate& e) {
  j = nlohmann::json{{"value", e.value}, {"method", e.method}, {"n_a", e.n_a}, {"n_b", e.n_b}};
  if (e.stderr_) j["stderr"] = *e.stderr_;
  if (e.n_proj) j["n_proj"] = *e.n_proj;
}

}  // namespace cmlab
