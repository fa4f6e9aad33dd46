#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "depthgrow/errors.hpp"
#include "depthgrow/tensor.hpp"

namespace depthgrow {

// Inverse-square-root schedule with linear warmup:
// d_model^-0.5 * min(step^-0.5, step * warmup^-1.5), peak at step == warmup.
inline double lr_schedule(int64_t step, int d_model, int warmup) {
  if (step < 1) throw ContractError("lr_schedule: step must be >= 1");
  if (warmup < 1) throw ContractError("lr_schedule: warmup must be >= 1");
  double s = static_cast<double>(step);
  double w = static_cast<double>(warmup);
  return std::pow(static_cast<double>(d_model), -0.5) * std::min(std::pow(s, -0.5), s * std::pow(w, -1.5));
}

// Adam with bias correction. Moment buffers exist only for trainable
// parameters; a frozen parameter is never read nor written.
template <typename T>
class AdamOptimizer {
 public:
  AdamOptimizer(std::vector<Parameter<T>*> params, double beta1 = 0.9, double beta2 = 0.98,
                double eps = 1e-9)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (auto* p : params) {
      if (!p->trainable) continue;
      Slot s;
      s.param = p;
      s.m.assign(static_cast<size_t>(p->tensor.numel()), 0.0);
      s.v.assign(static_cast<size_t>(p->tensor.numel()), 0.0);
      slots_.push_back(std::move(s));
    }
  }

  // One update from the gradients currently stored on the parameters.
  void step(double lr) {
    ++t_;
    double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (auto& s : slots_) {
      T* x = s.param->tensor.data();
      const T* g = s.param->tensor.grad();
      if (!g) throw ContractError("adam: trainable parameter " + s.param->name + " has no grad");
      for (size_t i = 0; i < s.m.size(); ++i) {
        double gi = static_cast<double>(g[i]);
        if (std::isnan(gi))
          throw NumericError("adam: NaN gradient in " + s.param->name + " at step " +
                             std::to_string(t_));
        s.m[i] = beta1_ * s.m[i] + (1.0 - beta1_) * gi;
        s.v[i] = beta2_ * s.v[i] + (1.0 - beta2_) * gi * gi;
        double mhat = s.m[i] / bc1;
        double vhat = s.v[i] / bc2;
        x[i] = static_cast<T>(static_cast<double>(x[i]) - lr * mhat / (std::sqrt(vhat) + eps_));
      }
    }
  }

  int64_t steps_taken() const { return t_; }

  std::vector<std::string> parameter_names() const {
    std::vector<std::string> names;
    names.reserve(slots_.size());
    for (const auto& s : slots_) names.push_back(s.param->name);
    return names;
  }

 private:
  struct Slot {
    Parameter<T>* param = nullptr;
    std::vector<double> m, v;
  };
  std::vector<Slot> slots_;
  double beta1_, beta2_, eps_;
  int64_t t_ = 0;
};

}  // namespace depthgrow
