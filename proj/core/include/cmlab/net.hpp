#pragma once

#include <nlohmann/json_fwd.hpp>
#include <vector>

#include "cmlab/common.hpp"
#include "cmlab/rng.hpp"

namespace cmlab {

// Dense tanh network with explicit forward/backward passes and an Adam
// optimizer. Deliberately tiny: the lab only needs trainable maps with
// measurable error, not a learning framework.
class Mlp {
 public:
  Mlp() = default;
  // dims = {in, hidden..., out}
  Mlp(const std::vector<int>& dims, uint64_t seed, double init_scale = 1.0);

  Vec forward(const Vec& in) const;

  // Accumulates parameter gradients for d(loss)/d(out) = gout at input `in`;
  // returns d(loss)/d(in).
  Vec backward(const Vec& in, const Vec& gout);

  void zero_grad();
  void adam_step(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  int input_dim() const { return dims_.empty() ? 0 : dims_.front(); }
  int output_dim() const { return dims_.empty() ? 0 : dims_.back(); }
  int layer_count() const { return static_cast<int>(W_.size()); }

  Mat& weight(int l) { return W_[l]; }
  const Mat& weight(int l) const { return W_[l]; }
  Vec& bias(int l) { return b_[l]; }

  // Largest singular value via power iteration (deterministic start).
  static double operator_norm(const Mat& W, int iters = 12);

  // Product over layers of operator norms, with the first layer restricted to
  // the given leading input columns (Lipschitz in x only when t is appended).
  double lipschitz_product(int x_cols, int power_iters = 12) const;

  // Uniformly rescales weights so lipschitz_product(x_cols) <= budget.
  void project_lipschitz(double budget, int x_cols);

  nlohmann::json to_json() const;
  static Mlp from_json(const nlohmann::json& j);

 private:
  std::vector<int> dims_;
  std::vector<Mat> W_;
  std::vector<Vec> b_;
  std::vector<Mat> gW_;
  std::vector<Vec> gb_;
  // Adam state
  std::vector<Mat> mW_, vW_;
  std::vector<Vec> mb_, vb_;
  long adam_t_ = 0;
};

}  // namespace cmlab
