#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "styledl/tensor.hpp"

namespace styledl {

using Rng = std::mt19937_64;

/// Named trainable tensors in registration order. Modules keep their own
/// handles; the store shares the same nodes.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor value;
  };

  Tensor add(std::string name, Tensor t) {
    for (const auto& e : entries_)
      if (e.name == name) throw ContractViolation("param store: duplicate name " + name);
    t.set_requires_grad(true);
    entries_.push_back({std::move(name), t});
    return t;
  }

  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  const Tensor* find(const std::string& name) const {
    for (const auto& e : entries_)
      if (e.name == name) return &e.value;
    return nullptr;
  }
  Tensor* find(const std::string& name) {
    for (auto& e : entries_)
      if (e.name == name) return &e.value;
    return nullptr;
  }

  void zero_grad() {
    for (auto& e : entries_) e.value.zero_grad();
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.numel();
    return n;
  }

 private:
  std::vector<Entry> entries_;
};

/// He-normal initialization, std = sqrt(2 / fan_in).
inline Tensor kaiming_normal(Shape shape, std::size_t fan_in, Rng& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor::from(std::move(shape), std::move(v));
}

/// SGD with heavy-ball momentum and L2 weight decay:
///   v <- m*v + g + wd*p ;  p <- p - lr*v
class Sgd {
 public:
  Sgd(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}

  void step(ParamStore& params, double lr) {
    auto& entries = params.entries();
    if (velocity_.size() != entries.size()) {
      velocity_.clear();
      for (const auto& e : entries) velocity_.emplace_back(e.value.numel(), 0.0);
    }
    for (std::size_t k = 0; k < entries.size(); ++k) {
      Tensor p = entries[k].value;
      auto data = p.data_mut();
      auto grad = p.grad();
      auto& v = velocity_[k];
      for (std::size_t i = 0; i < data.size(); ++i) {
        double g = grad.empty() ? 0.0 : grad[i];
        v[i] = momentum_ * v[i] + g + weight_decay_ * data[i];
        data[i] -= lr * v[i];
      }
    }
  }

  std::vector<std::vector<double>>& velocity() { return velocity_; }
  const std::vector<std::vector<double>>& velocity() const { return velocity_; }

 private:
  double momentum_;
  double weight_decay_;
  std::vector<std::vector<double>> velocity_;
};

inline void sgd_step(ParamStore& params, Sgd& opt, double lr) { opt.step(params, lr); }

/// Global L2 norm over all parameter gradients.
inline double grad_norm(const ParamStore& params) {
  double acc = 0.0;
  for (const auto& e : params.entries())
    for (double g : e.value.grad()) acc += g * g;
  return std::sqrt(acc);
}

/// Rescales all gradients so their global norm is at most `max_norm`.
/// Returns the norm before clipping; `max_norm <= 0` disables it.
inline double clip_grad_norm(ParamStore& params, double max_norm) {
  double norm = grad_norm(params);
  if (max_norm > 0.0 && norm > max_norm) {
    double s = max_norm / norm;
    for (const auto& e : params.entries()) {
      Tensor t = e.value;
      for (double& g : t.grad_mut()) g *= s;
    }
  }
  return norm;
}

}  // namespace styledl
