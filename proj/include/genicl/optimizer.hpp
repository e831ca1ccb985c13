#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "genicl/model.hpp"

namespace genicl {

struct AdamWConfig {
  double lr = 5e-6;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  int warmup_steps = 0;
  /// When > 0 the rate decays linearly to zero at this step after warmup.
  int total_steps = 0;
};

/// Adam with decoupled weight decay and linear warmup, restricted to `ranges`.
template <class T>
class AdamW {
 public:
  AdamW(std::size_t n, AdamWConfig cfg) : cfg_(cfg), m_(n, 0.0), v_(n, 0.0) {}

  double lr_at(int step) const {
    double scale = 1.0;
    if (cfg_.warmup_steps > 0 && step < cfg_.warmup_steps) {
      scale = static_cast<double>(step + 1) / static_cast<double>(cfg_.warmup_steps);
    } else if (cfg_.total_steps > cfg_.warmup_steps) {
      const double span = cfg_.total_steps - cfg_.warmup_steps;
      scale = std::max(0.0, 1.0 - static_cast<double>(step - cfg_.warmup_steps) / span);
    }
    return cfg_.lr * scale;
  }

  /// Applies one update with the schedule's current rate and returns that rate.
  double step(std::span<T> params, std::span<const T> grad, const std::vector<ParamRange>& ranges) {
    const double lr = lr_at(t_);
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
    for (const auto& r : ranges) {
      for (std::size_t i = r.begin; i < r.end; ++i) {
        const double g = grad[i];
        m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
        v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g * g;
        if (lr == 0.0) continue;
        const double mhat = m_[i] / bc1;
        const double vhat = v_[i] / bc2;
        const double p = params[i];
        params[i] = static_cast<T>(p - lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * p));
      }
    }
    return lr;
  }

  int steps_taken() const { return t_; }
  const AdamWConfig& config() const { return cfg_; }

 private:
  AdamWConfig cfg_;
  std::vector<double> m_, v_;
  int t_ = 0;
};

}  // namespace genicl
