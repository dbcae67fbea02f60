#pragma once

#include <cmath>
#include <map>
#include <numbers>
#include <string>

#include "btc/nn.hpp"

namespace btc {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-5;  // L2 term folded into the gradient
};

// Linear warm-up 0 -> peak over `warmup_steps`, then cosine decay to 0 at
// `total_steps`.
inline double lr_schedule(long step, long warmup_steps, long total_steps, double peak) {
  if (!(warmup_steps > 0 && warmup_steps < total_steps))
    throw InvalidInput("lr_schedule requires 0 < warmup_steps < total_steps");
  if (step <= 0) return 0.0;
  if (step < warmup_steps) return peak * static_cast<double>(step) / static_cast<double>(warmup_steps);
  if (step >= total_steps) return 0.0;
  const double progress =
      static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - warmup_steps);
  return peak * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

template <typename T>
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  // Updates trainable parameters from their accumulated grads. Frozen
  // parameters are never touched.
  void step(ParamStore<T>& store, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (Parameter<T>* p : store.all()) {
      if (!p->trainable || p->grad.size() == 0) continue;
      auto& st = state_[p->name];
      if (st.m.size() == 0) {
        st.m = Matrix<T>::Zero(p->value.rows(), p->value.cols());
        st.v = Matrix<T>::Zero(p->value.rows(), p->value.cols());
      }
      Matrix<T> g = p->grad + p->value * static_cast<T>(cfg_.weight_decay);
      st.m = st.m * static_cast<T>(cfg_.beta1) + g * static_cast<T>(1.0 - cfg_.beta1);
      st.v = st.v * static_cast<T>(cfg_.beta2) + g.cwiseProduct(g) * static_cast<T>(1.0 - cfg_.beta2);
      const T step_size = static_cast<T>(lr / bc1);
      const T inv_bc2 = static_cast<T>(1.0 / bc2);
      const T eps = static_cast<T>(cfg_.eps);
      p->value.array() -= step_size * st.m.array() / ((st.v.array() * inv_bc2).sqrt() + eps);
    }
  }

  long steps() const { return t_; }

 private:
  struct State {
    Matrix<T> m, v;
  };
  AdamConfig cfg_;
  long t_ = 0;
  std::map<std::string, State> state_;
};

}  // namespace btc
