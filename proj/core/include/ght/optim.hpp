#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "ght/tensor.hpp"

namespace ght {

// Linear warmup to peak, then peak * sqrt(warmup / step).
struct LrSchedule {
  int64_t warmup_steps = 4000;
  double peak_lr = 5e-4;

  double lr(int64_t step) const {
    if (step < 1) throw ContractError("LrSchedule: step must be >= 1");
    if (step <= warmup_steps)
      return peak_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
    return peak_lr * std::sqrt(static_cast<double>(warmup_steps) / static_cast<double>(step));
  }
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
  double weight_decay = 1e-4;  // decoupled, not folded into the moments
};

// Bias-corrected Adam with decoupled weight decay over a fixed parameter list.
template <class S>
class Adam {
 public:
  Adam() = default;
  Adam(std::vector<Tensor<S>> params, AdamConfig cfg) : cfg_(cfg), params_(std::move(params)) {
    for (const auto& p : params_) {
      m_.emplace_back(p.numel(), S(0));
      v_.emplace_back(p.numel(), S(0));
    }
  }

  int64_t step_count() const { return step_; }
  const AdamConfig& config() const { return cfg_; }
  std::vector<Tensor<S>>& params() { return params_; }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  void step(double lr) {
    ++step_;
    double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (size_t pi = 0; pi < params_.size(); ++pi) {
      auto& p = params_[pi];
      if (!p.has_grad()) continue;
      auto& val = p.data();
      auto& g = p.grad();
      auto& m = m_[pi];
      auto& v = v_[pi];
      if (g.size() != val.size() || m.size() != val.size())
        throw ShapeError("Adam: gradient/state shape mismatch");
      for (size_t i = 0; i < val.size(); ++i) {
        double gi = static_cast<double>(g[i]);
        double mi = cfg_.beta1 * static_cast<double>(m[i]) + (1.0 - cfg_.beta1) * gi;
        double vi = cfg_.beta2 * static_cast<double>(v[i]) + (1.0 - cfg_.beta2) * gi * gi;
        m[i] = static_cast<S>(mi);
        v[i] = static_cast<S>(vi);
        double mhat = mi / bc1;
        double vhat = vi / bc2;
        double upd = lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        if (cfg_.weight_decay > 0.0) upd += lr * cfg_.weight_decay * static_cast<double>(val[i]);
        val[i] = static_cast<S>(static_cast<double>(val[i]) - upd);
      }
    }
  }

  // Global L2 gradient norm clip; returns the pre-clip norm.
  double clip_grad_norm(double max_norm) {
    double sq = 0.0;
    for (auto& p : params_) {
      if (!p.has_grad()) continue;
      for (S g : p.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
    }
    double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
      S factor = static_cast<S>(max_norm / norm);
      for (auto& p : params_) {
        if (!p.has_grad()) continue;
        for (S& g : p.grad()) g *= factor;
      }
    }
    return norm;
  }

  // Moment accumulators, exposed for checkpointing.
  std::vector<std::vector<S>>& first_moments() { return m_; }
  std::vector<std::vector<S>>& second_moments() { return v_; }
  void set_step_count(int64_t s) { step_ = s; }

 private:
  AdamConfig cfg_;
  std::vector<Tensor<S>> params_;
  std::vector<std::vector<S>> m_, v_;
  int64_t step_ = 0;
};

}  // namespace ght
