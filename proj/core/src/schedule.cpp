#include "cmlab/schedule.hpp"

#include <cmath>
#include <nlohmann/json.hpp>

namespace cmlab {

Schedule Schedule::constant(double beta, double T, double eps) {
  Schedule s{Kind::Constant, beta, beta, T, eps};
  s.validate();
  return s;
}

Schedule Schedule::linear(double beta_min, double beta_max, double T, double eps) {
  Schedule s{Kind::Linear, beta_min, beta_max, T, eps};
  s.validate();
  return s;
}

void Schedule::validate() const {
  if (!(beta_min > 0.0) || !(beta_max >= beta_min))
    throw ArgumentError("schedule requires 0 < beta_min <= beta_max");
  if (!(T > 0.0) || !(eps > 0.0) || !(eps < T))
    throw ArgumentError("schedule requires 0 < eps < T");
  if (kind == Kind::Constant && beta_min != beta_max)
    throw ArgumentError("constant schedule requires beta_min == beta_max");
}

double Schedule::beta_at(double t) const {
  if (t < 0.0 || t > T) throw DomainError("beta_at: t outside [0, T]");
  if (kind == Kind::Constant) return beta_min;
  return beta_min + (beta_max - beta_min) * (t / T);
}

double Schedule::integral_beta(double t) const {
  if (t < 0.0 || t > T) throw DomainError("integral_beta: t outside [0, T]");
  if (kind == Kind::Constant) return beta_min * t;
  return beta_min * t + (beta_max - beta_min) * t * t / (2.0 * T);
}

double Schedule::mean_coeff(double t) const { return std::exp(-0.5 * integral_beta(t)); }

double Schedule::std_coeff(double t) const {
  const double m = mean_coeff(t);
  return std::sqrt(std::max(0.0, 1.0 - m * m));
}

TimeGrid build_grid(const Schedule& s, int N_coarse, int M) {
  if (N_coarse < 1 || M < 1) throw ArgumentError("build_grid: N_coarse and M must be >= 1");
  TimeGrid g;
  g.N_coarse = N_coarse;
  g.M = M;
  g.N = N_coarse * M;
  g.times.resize(g.N + 1);
  const double dt = (s.T - s.eps) / g.N;
  for (int i = 0; i <= g.N; ++i) g.times[i] = s.eps + dt * i;
  g.times.back() = s.T;  // exact endpoint
  g.coarse_index.resize(N_coarse + 1);
  for (int k = 0; k <= N_coarse; ++k) g.coarse_index[k] = k * M;
  return g;
}

void to_json(nlohmann::json& j, const Schedule& s) {
  j = nlohmann::json{{"kind", s.kind == Schedule::Kind::Constant ? "constant" : "linear"},
                     {"beta_min", s.beta_min},
                     {"beta_max", s.beta_max},
                     {"T", s.T},
                     {"eps", s.eps}};
}

void from_json(const nlohmann::json& j, Schedule& s) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "constant")
    s.kind = Schedule::Kind::Constant;
  else if (kind == "linear")
    s.kind = Schedule::Kind::Linear;
  else
    throw ArgumentError("schedule kind must be constant or linear");
  s.beta_min = j.at("beta_min").get<double>();
  s.beta_max = j.at("beta_max").get<double>();
  s.T = j.at("T").get<double>();
  s.eps = j.at("eps").get<double>();
  s.validate();
}

}  // namespace cmlab
