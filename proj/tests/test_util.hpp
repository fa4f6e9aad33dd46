#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "depthgrow/rng.hpp"
#include "depthgrow/tensor.hpp"

namespace depthgrow::test {

// Central finite difference of a re-runnable scalar forward `f` with respect
// to one entry of `x`. Independent of the autodiff tape by construction.
template <typename T>
double central_difference(const std::function<double()>& f, T* x, double h = 1e-5) {
  T saved = *x;
  *x = static_cast<T>(static_cast<double>(saved) + h);
  double up = f();
  *x = static_cast<T>(static_cast<double>(saved) - h);
  double down = f();
  *x = saved;
  return (up - down) / (2.0 * h);
}

// |a - n| / max(1, |a|, |n|): relative above 1, absolute below.
inline double grad_error(double analytic, double numeric) {
  double denom = std::max({1.0, std::fabs(analytic), std::fabs(numeric)});
  return std::fabs(analytic - numeric) / denom;
}

struct GradCheckStats {
  double max_err = 0.0;
  std::string worst;
};

// Checks every entry of `t` (typically a leaf with requires_grad) against
// central differences of `forward`, which must recompute the scalar loss
// from current tensor contents. Analytic grads must already be populated.
template <typename T>
GradCheckStats check_grads(const std::function<double()>& forward, depthgrow::Tensor<T>& t,
                           const std::string& label, double h = 1e-5) {
  GradCheckStats stats;
  for (int64_t i = 0; i < t.numel(); ++i) {
    double numeric = central_difference(forward, t.data() + i, h);
    double analytic = static_cast<double>(t.grad()[i]);
    double err = grad_error(analytic, numeric);
    if (err > stats.max_err) {
      stats.max_err = err;
      stats.worst = label + "[" + std::to_string(i) + "]";
    }
  }
  return stats;
}

template <typename T>
depthgrow::Tensor<T> random_tensor(depthgrow::Shape shape, depthgrow::Rng& rng, double lo = -1.0,
                                   double hi = 1.0) {
  depthgrow::Tensor<T> t(shape);
  for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

}  // namespace depthgrow::test
