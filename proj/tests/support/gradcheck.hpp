#pragma once

// Central finite-difference check of reverse-mode gradients. The scalar
// probed is L = sum(w * f(inputs)) with a fixed random weight w.

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "styledl/optim.hpp"

namespace styledl::support {

struct GradcheckResult {
  bool ok = true;
  double worst = 0.0;  // largest |a-n| / (1e-3*max(|a|,|n|) + 1e-6)
  std::size_t checked = 0;
  std::string detail;
};

using GradFn = std::function<Tensor(const std::vector<Tensor>&)>;

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = d(rng);
  return Tensor::from(std::move(shape), std::move(v));
}

/// Values bounded away from zero, for ops with a kink there.
inline Tensor away_from_zero(Shape shape, Rng& rng, double gap = 0.1) {
  Tensor t = random_tensor(std::move(shape), rng);
  for (double& x : t.data_mut()) x = x < 0 ? x - gap : x + gap;
  return t;
}

inline GradcheckResult gradcheck(const GradFn& f, std::vector<Tensor> inputs, std::uint64_t seed = 1,
                                 double h = 1e-4, double tol = 1e-3, double floor = 1e-6,
                                 double sign = 1.0) {
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  Tensor out = f(inputs);
  Rng rng(seed);
  Tensor w = random_tensor(out.shape(), rng);
  backward(sum(mul(w, out)));

  auto probe = [&] {
    NoGradGuard guard;
    Tensor o = f(inputs);
    double acc = 0.0;
    for (std::size_t i = 0; i < o.numel(); ++i) acc += w.data()[i] * o.data()[i];
    return acc;
  };

  GradcheckResult res;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor& t = inputs[k];
    std::vector<double> analytic(t.numel(), 0.0);
    if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic.begin());
    auto data = t.data_mut();
    for (std::size_t i = 0; i < t.numel(); ++i) {
      double orig = data[i];
      data[i] = orig + h;
      double up = probe();
      data[i] = orig - h;
      double down = probe();
      data[i] = orig;
      double numeric = sign * (up - down) / (2.0 * h);
      double a = analytic[i];
      double ratio = std::abs(a - numeric) / (tol * std::max(std::abs(a), std::abs(numeric)) + floor);
      ++res.checked;
      if (ratio > res.worst) res.worst = ratio;
      if (ratio > 1.0 && res.ok) {
        res.ok = false;
        res.detail = "input " + std::to_string(k) + " element " + std::to_string(i) + ": analytic " +
                     std::to_string(a) + " numeric " + std::to_string(numeric);
      }
    }
  }
  return res;
}

}  // namespace styledl::support
