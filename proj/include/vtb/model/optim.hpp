#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "vtb/common/error.hpp"
#include "vtb/model/graph.hpp"

namespace vtb::nn {

struct OptimizerConfig {
  double peak_lr = 1e-4;
  std::int64_t warmup_steps = 2500;
  std::int64_t total_steps = 100000;
  double weight_decay = 1e-3;
  double min_lr = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double grad_clip = 1.0;  // global L2 norm; <= 0 disables

  void validate() const {
    if (!(peak_lr > 0.0)) throw ConfigError("optimizer: peak_lr must be positive");
    if (warmup_steps < 0) throw ConfigError("optimizer: warmup_steps must be >= 0");
    if (total_steps < warmup_steps) throw ConfigError("optimizer: total_steps must be >= warmup_steps");
    if (weight_decay < 0.0) throw ConfigError("optimizer: weight_decay must be >= 0");
    if (min_lr < 0.0 || min_lr > peak_lr) throw ConfigError("optimizer: min_lr must lie in [0, peak_lr]");
  }
};

// Linear warmup reaching the peak at step `warmup_steps`, then cosine decay
// to min_lr at `total_steps`. Steps are 0-based update indices.
inline double learning_rate(const OptimizerConfig& c, std::int64_t step) {
  if (step < c.warmup_steps) return c.peak_lr * static_cast<double>(step + 1) / static_cast<double>(c.warmup_steps);
  const auto span = c.total_steps - c.warmup_steps;
  if (span <= 0) return c.peak_lr;
  const double t = std::min(1.0, static_cast<double>(step - c.warmup_steps) / static_cast<double>(span));
  constexpr double kPi = 3.141592653589793;
  return c.min_lr + 0.5 * (c.peak_lr - c.min_lr) * (1.0 + std::cos(kPi * t));
}

// Adam with L2 weight decay folded into the gradient.
template <class T>
class Adam {
 public:
  struct Moments {
    Matrix<T> m, v;
  };

  explicit Adam(OptimizerConfig cfg) : cfg_(cfg) {}

  // Rescales gradients in place when their global norm exceeds the clip;
  // returns the pre-clip norm.
  double clip(const std::vector<Parameter<T>*>& params) const {
    double sq = 0.0;
    for (const auto* p : params)
      if (p->grad.size()) sq += static_cast<double>(p->grad.squaredNorm());
    const double norm = std::sqrt(sq);
    if (cfg_.grad_clip > 0.0 && norm > cfg_.grad_clip) {
      const T s = T(cfg_.grad_clip / norm);
      for (auto* p : params)
        if (p->grad.size()) p->grad *= s;
    }
    return norm;
  }

  void step(const std::vector<Parameter<T>*>& params, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const T b1 = T(cfg_.beta1), b2 = T(cfg_.beta2);
    for (auto* p : params) {
      if (!p->trainable) throw InvalidArgument("optimizer step on frozen parameter " + p->name);
      Matrix<T> g = p->grad.size() ? p->grad : Matrix<T>::Zero(p->value.rows(), p->value.cols());
      if (cfg_.weight_decay > 0.0) g += T(cfg_.weight_decay) * p->value;
      auto& mo = state_[p->name];
      if (mo.m.size() == 0) {
        mo.m = Matrix<T>::Zero(g.rows(), g.cols());
        mo.v = Matrix<T>::Zero(g.rows(), g.cols());
      }
      mo.m = b1 * mo.m + (T(1) - b1) * g;
      mo.v = b2 * mo.v + (T(1) - b2) * g.cwiseAbs2();
      const T step_size = T(lr / bc1);
      const T denom_scale = T(1.0 / std::sqrt(bc2));
      p->value.array() -= step_size * mo.m.array() / (mo.v.array().sqrt() * denom_scale + T(cfg_.eps));
    }
  }

  std::int64_t steps_taken() const { return t_; }
  void set_steps_taken(std::int64_t t) { t_ = t; }
  std::map<std::string, Moments>& state() { return state_; }
  const std::map<std::string, Moments>& state() const { return state_; }
  const OptimizerConfig& config() const { return cfg_; }

 private:
  OptimizerConfig cfg_;
  std::int64_t t_ = 0;
  std::map<std::string, Moments> state_;
};

}  // namespace vtb::nn
