#pragma once

// High-order attention over X2, order-wise encoding through the deferred
// backbone stages, the FPN lateral fusion and the order-diversity adversary.

#include <string>
#include <vector>

#include "styledl/backbone.hpp"

namespace styledl {

/// For each order r = 1..R: r inner 1x1 convs (the Z branches) and r outer
/// 1x1 convs, one per summand. All preserve the channel count.
struct HoaParams {
  struct Order {
    std::vector<Conv> inner;
    std::vector<Conv> outer;
  };
  std::vector<Order> orders;

  static HoaParams make(std::size_t order_count, std::size_t channels, ParamStore& ps, Rng& rng,
                        const std::string& prefix = "hoa") {
    if (order_count == 0) throw ConfigError("hoa: order count R must be >= 1");
    HoaParams p;
    for (std::size_t r = 1; r <= order_count; ++r) {
      Order o;
      for (std::size_t s = 1; s <= r; ++s) {
        std::string base = prefix + ".order" + std::to_string(r) + ".";
        o.inner.push_back(Conv::make(ps, base + "inner" + std::to_string(s), channels, channels, 1, 1, 0, rng));
        o.outer.push_back(Conv::make(ps, base + "outer" + std::to_string(s), channels, channels, 1, 1, 0, rng));
      }
      p.orders.push_back(std::move(o));
    }
    return p;
  }

  std::size_t order_count() const { return orders.size(); }
};

/// X_att^r = sum_s Outer_s(Z_1 * ... * Z_r), Z_s = Inner_s(X2).
inline std::vector<Tensor> hoa_forward(const Tensor& x2, const HoaParams& p) {
  std::vector<Tensor> atts;
  for (const auto& order : p.orders) {
    Tensor product = order.inner[0](x2);
    for (std::size_t s = 1; s < order.inner.size(); ++s) product = mul(product, order.inner[s](x2));
    Tensor att = order.outer[0](product);
    for (std::size_t s = 1; s < order.outer.size(); ++s) att = add(att, order.outer[s](product));
    atts.push_back(att);
  }
  return atts;
}

namespace detail {
inline Tensor fold_orders(const Tensor& x) {  // [R,B,...] -> [R*B,...]
  Shape s(x.shape().begin() + 1, x.shape().end());
  s[0] *= x.dim(0);
  return reshape(x, s);
}
inline Tensor unfold_orders(const Tensor& x, std::size_t orders) {  // [R*B,...] -> [R,B,...]
  Shape s = x.shape();
  s[0] /= orders;
  s.insert(s.begin(), orders);
  return reshape(x, s);
}
}  // namespace detail

struct EncodedOrders {
  Tensor x3;  // [R,B,c3,w3,h3]
  Tensor x4;  // [R,B,c4,w4,h4]
};

/// Runs f3 then f4 on every order; the order axis leads.
inline EncodedOrders encode_orders(const std::vector<Tensor>& atts, const FeatureTaps& taps) {
  require(!atts.empty(), "encode_orders: R must be >= 1");
  std::size_t r = atts.size();
  Tensor folded = concat(atts, 0);
  Tensor x3 = taps.f3(folded);
  Tensor x4 = taps.f4(x3);
  return {detail::unfold_orders(x3, r), detail::unfold_orders(x4, r)};
}

/// F_content = Conv1x1(Upsample(X4)) + X3, per order.
inline Tensor fpn_fuse(const Tensor& x3, const Tensor& x4, const Conv& lateral) {
  require(x3.rank() == 5 && x4.rank() == 5 && x3.dim(0) == x4.dim(0), "fpn_fuse: expected [R,B,c,w,h] inputs");
  std::size_t r = x3.dim(0);
  Tensor up = upsample_nearest(detail::fold_orders(x4), x3.dim(3), x3.dim(4));
  return add(detail::unfold_orders(lateral(up), r), x3);
}

/// Two fully-connected layers (ReLU between) projecting a flattened order
/// feature to a small embedding.
struct AdversaryHead {
  Linear fc1;
  Linear fc2;

  static AdversaryHead make(ParamStore& ps, const std::string& prefix, std::size_t in, std::size_t hidden,
                            std::size_t out, Rng& rng) {
    return {Linear::make(ps, prefix + ".fc1", in, hidden, rng), Linear::make(ps, prefix + ".fc2", hidden, out, rng)};
  }

  Tensor operator()(const Tensor& x) const { return fc2(relu(fc1(x))); }
};

/// Batch mean of sum over ordered pairs s != s' of ||p_s - p_s'||^2, for
/// projections [R,B,P]. Exactly zero when R == 1.
inline Tensor pairwise_order_distance(const Tensor& proj) {
  require(proj.rank() == 3, "pairwise_order_distance: expected [R,B,P]");
  std::size_t r = proj.dim(0);
  if (r < 2) return Tensor::scalar(0.0);
  std::vector<Tensor> per_order;
  for (std::size_t s = 0; s < r; ++s) per_order.push_back(select(proj, s));
  Tensor total;
  for (std::size_t s = 0; s < r; ++s)
    for (std::size_t t = 0; t < r; ++t) {
      if (s == t) continue;
      Tensor d = sub(per_order[s], per_order[t]);
      Tensor term = sum(mul(d, d));
      total = total.defined() ? add(total, term) : term;
    }
  return scale(total, 1.0 / static_cast<double>(proj.dim(1)));
}

/// Projects each order slice of an [R,B,...] stage output through `head`.
/// When `reverse` is set a gradient-reversal sits before the head, so one
/// descent step trains the head to collapse the orders while pushing the
/// upstream attention to separate them.
inline Tensor project_orders(const Tensor& xk, const AdversaryHead& head, bool reverse) {
  std::size_t r = xk.dim(0), b = xk.dim(1);
  Tensor flat = reshape(xk, {r * b, xk.numel() / (r * b)});
  if (reverse) flat = grad_reverse(flat);
  Tensor proj = head(flat);
  return reshape(proj, {r, b, proj.dim(1)});
}

/// L_adv = L_adv^3 + L_adv^4.
inline Tensor adversary_loss(const Tensor& x3, const Tensor& x4, const AdversaryHead& head3,
                             const AdversaryHead& head4, bool reverse = true) {
  if (x3.dim(0) < 2) return Tensor::scalar(0.0);
  return add(pairwise_order_distance(project_orders(x3, head3, reverse)),
             pairwise_order_distance(project_orders(x4, head4, reverse)));
}

}  // namespace styledl
