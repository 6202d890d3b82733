#include "cmlab/net.hpp"

#include <cmath>
#include <nlohmann/json.hpp>

namespace cmlab {

Mlp::Mlp(const std::vector<int>& dims, uint64_t seed, double init_scale) : dims_(dims) {
  if (dims.size() < 2) throw ArgumentError("Mlp needs at least input and output dims");
  Rng rng(seed);
  const int L = static_cast<int>(dims.size()) - 1;
  for (int l = 0; l < L; ++l) {
    Mat W(dims[l + 1], dims[l]);
    const double scale = init_scale / std::sqrt(static_cast<double>(dims[l]));
    for (Eigen::Index i = 0; i < W.size(); ++i) W.data()[i] = scale * rng.normal();
    W_.push_back(W);
    b_.push_back(Vec::Zero(dims[l + 1]));
    gW_.push_back(Mat::Zero(dims[l + 1], dims[l]));
    gb_.push_back(Vec::Zero(dims[l + 1]));
    mW_.push_back(Mat::Zero(dims[l + 1], dims[l]));
    vW_.push_back(Mat::Zero(dims[l + 1], dims[l]));
    mb_.push_back(Vec::Zero(dims[l + 1]));
    vb_.push_back(Vec::Zero(dims[l + 1]));
  }
}

Vec Mlp::forward(const Vec& in) const {
  Vec a = in;
  const int L = layer_count();
  for (int l = 0; l < L; ++l) {
    a = (W_[l] * a + b_[l]).eval();
    if (l + 1 < L) a = a.array().tanh().matrix();
  }
  return a;
}

Vec Mlp::backward(const Vec& in, const Vec& gout) {
  const int L = layer_count();
  // forward with cached pre/post activations
  std::vector<Vec> acts(L + 1);
  acts[0] = in;
  std::vector<Vec> pre(L);
  for (int l = 0; l < L; ++l) {
    pre[l] = W_[l] * acts[l] + b_[l];
    acts[l + 1] = (l + 1 < L) ? Vec(pre[l].array().tanh().matrix()) : pre[l];
  }
  Vec g = gout;
  for (int l = L - 1; l >= 0; --l) {
    if (l + 1 < L) {
      // g is d/d(activation); convert to d/d(pre) through tanh'
      g = (g.array() * (1.0 - acts[l + 1].array().square())).matrix();
    }
    gW_[l] += g * acts[l].transpose();
    gb_[l] += g;
    g = (W_[l].transpose() * g).eval();
  }
  return g;
}

void Mlp::zero_grad() {
  for (auto& g : gW_) g.setZero();
  for (auto& g : gb_) g.setZero();
}

void Mlp::adam_step(double lr, double beta1, double beta2, double eps) {
  ++adam_t_;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(adam_t_));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(adam_t_));
  for (int l = 0; l < layer_count(); ++l) {
    mW_[l] = beta1 * mW_[l] + (1.0 - beta1) * gW_[l];
    vW_[l] = beta2 * vW_[l].array().matrix() + (1.0 - beta2) * gW_[l].array().square().matrix();
    mb_[l] = beta1 * mb_[l] + (1.0 - beta1) * gb_[l];
    vb_[l] = beta2 * vb_[l].array().matrix() + (1.0 - beta2) * gb_[l].array().square().matrix();
    W_[l].array() -= lr * (mW_[l].array() / bc1) / ((vW_[l].array() / bc2).sqrt() + eps);
    b_[l].array() -= lr * (mb_[l].array() / bc1) / ((vb_[l].array() / bc2).sqrt() + eps);
  }
}

double Mlp::operator_norm(const Mat& W, int iters) {
  Vec v = Vec::Ones(W.cols()).normalized();
  double s = 0.0;
  for (int i = 0; i < iters; ++i) {
    Vec u = W * v;
    const double un = u.norm();
    if (un == 0.0) return 0.0;
    v = (W.transpose() * u / un).eval();
    s = v.norm();
    if (s == 0.0) return 0.0;
    v /= s;
  }
  return (W * v).norm();
}

double Mlp::lipschitz_product(int x_cols, int power_iters) const {
  double p = 1.0;
  for (int l = 0; l < layer_count(); ++l) {
    if (l == 0) {
      p *= operator_norm(W_[0].leftCols(std::min<int>(x_cols, static_cast<int>(W_[0].cols()))),
                         power_iters);
    } else {
      p *= operator_norm(W_[l], power_iters);
    }
  }
  return p;
}

void Mlp::project_lipschitz(double budget, int x_cols) {
  const double p = lipschitz_product(x_cols);
  if (p <= budget || p == 0.0) return;
  const double per_layer = std::pow(budget / p, 1.0 / layer_count());
  for (auto& W : W_) W *= per_layer;
}

nlohmann::json Mlp::to_json() const {
  nlohmann::json j;
  j["dims"] = dims_;
  nlohmann::json layers = nlohmann::json::array();
  for (int l = 0; l < layer_count(); ++l) {
    nlohmann::json lay;
    std::vector<double> w(W_[l].size());
    // row-major flatten
    for (Eigen::Index r = 0; r < W_[l].rows(); ++r)
      for (Eigen::Index c = 0; c < W_[l].cols(); ++c)
        w[r * W_[l].cols() + c] = W_[l](r, c);
    lay["weights"] = w;
    lay["bias"] = std::vector<double>(b_[l].data(), b_[l].data() + b_[l].size());
    layers.push_back(lay);
  }
  j["layers"] = layers;
  return j;
}

Mlp Mlp::from_json(const nlohmann::json& j) {
  Mlp net(j.at("dims").get<std::vector<int>>(), 0);
  const auto layers = j.at("layers");
  for (int l = 0; l < net.layer_count(); ++l) {
    const auto w = layers.at(l).at("weights").get<std::vector<double>>();
    const auto b = layers.at(l).at("bias").get<std::vector<double>>();
    Mat& W = net.W_[l];
    for (Eigen::Index r = 0; r < W.rows(); ++r)
      for (Eigen::Index c = 0; c < W.cols(); ++c) W(r, c) = w[r * W.cols() + c];
    net.b_[l] = Eigen::Map<const Vec>(b.data(), b.size());
  }
  return net;
}

}  // namespace cmlab
