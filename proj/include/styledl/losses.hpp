#pragma once

// KL training losses, the adaptive adversarial balance and the final
// style/emotion combination.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "styledl/tensor.hpp"

namespace styledl {

inline constexpr double kSimplexTolerance = 1e-6;
inline constexpr double kProbabilityFloor = 1e-12;

inline bool is_simplex(std::span<const double> p, double tol = kSimplexTolerance) {
  if (p.empty()) return false;
  double s = 0.0;
  for (double v : p) {
    if (!(v >= 0.0) || !std::isfinite(v)) return false;
    s += v;
  }
  return std::abs(s - 1.0) <= tol;
}

/// Length-C vector on the probability simplex.
class LabelDistribution {
 public:
  LabelDistribution() = default;
  explicit LabelDistribution(std::vector<double> values) : values_(std::move(values)) {
    if (!is_simplex(values_)) throw ContractViolation("label distribution: values are not on the simplex");
  }

  std::span<const double> values() const { return values_; }
  std::size_t size() const { return values_.size(); }
  double operator[](std::size_t i) const { return values_[i]; }
  bool operator==(const LabelDistribution&) const = default;

 private:
  std::vector<double> values_;
};

/// sum_i t_i ln(t_i / max(p_i, 1e-12)); zero-mass target entries contribute 0.
inline double kl_divergence(std::span<const double> target, std::span<const double> pred) {
  require(target.size() == pred.size(), "kl: length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i)
    if (target[i] > 0.0) acc += target[i] * std::log(target[i] / std::max(pred[i], kProbabilityFloor));
  return acc;
}

inline double kl_loss(const LabelDistribution& target, const LabelDistribution& pred) {
  return kl_divergence(target.values(), pred.values());
}

/// Row-wise KL(target || pred) over the last axis; result drops that axis.
/// Only `pred` is differentiated.
inline Tensor kl_div(const Tensor& target, const Tensor& pred) {
  if (target.shape() != pred.shape())
    throw ContractViolation("kl_div: shape mismatch " + shape_str(target.shape()) + " vs " + shape_str(pred.shape()));
  std::size_t c = pred.dim(-1);
  std::size_t rows = pred.numel() / c;
  auto tv = target.data();
  auto pv = pred.data();
  std::vector<double> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    auto t = tv.subspan(r * c, c);
    auto p = pv.subspan(r * c, c);
    if (!is_simplex(p)) throw ContractViolation("kl_div: prediction row " + std::to_string(r) + " is off the simplex");
    if (!is_simplex(t)) throw ContractViolation("kl_div: target row " + std::to_string(r) + " is off the simplex");
    out[r] = kl_divergence(t, p);
  }
  Shape s = pred.shape();
  s.pop_back();
  if (s.empty()) s = {1};
  detail::Node* pn = pred.node();
  std::vector<double> tcopy(tv.begin(), tv.end());
  return detail::make_result(s, std::move(out), {pred}, "kl_div", [=, tcopy = std::move(tcopy)](detail::Node& o) {
    auto& g = pn->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t i = 0; i < c; ++i) {
        std::size_t idx = r * c + i;
        double t = tcopy[idx], p = pn->data[idx];
        if (t > 0.0 && p > kProbabilityFloor) g[idx] -= o.grad[r] * t / p;
      }
  });
}

/// Batch mean of (1/R) sum_r KL(target || y_e^r) + KL(target || y_emotion).
/// `y_emotion` may be undefined (no graph branch), leaving only the
/// per-order term.
inline Tensor pred_loss(const Tensor& per_order, const Tensor& y_emotion, const Tensor& target) {
  require(per_order.rank() == 3, "pred_loss: per-order predictions must be [R,B,C]");
  std::size_t r = per_order.dim(0);
  Tensor targets = expand(target, 0, r);
  Tensor loss = mean(kl_div(targets, per_order));  // mean over R and B
  if (y_emotion.defined()) loss = add(loss, mean(kl_div(target, y_emotion)));
  return loss;
}

inline constexpr double kAdversaryFloor = 1e-8;

/// L = L_pred + c * L_adv with c = L_pred / max(L_adv, 1e-8) held constant.
inline Tensor total_loss(const Tensor& l_pred, const Tensor& l_adv) {
  double c = l_pred.item() / std::max(l_adv.item(), kAdversaryFloor);
  return add(l_pred, scale(l_adv, c));
}

/// y = mu * y_emotion + (1 - mu) * y_style
inline Tensor combine_final(const Tensor& y_emotion, const Tensor& y_style, double mu) {
  if (!(mu >= 0.0 && mu <= 1.0)) throw ConfigError("combine_final: mu must lie in [0,1]");
  return add(scale(y_emotion, mu), scale(y_style, 1.0 - mu));
}

}  // namespace styledl
