#pragma once

// Style/content fusion into the stylistic-aware representation F_e and the
// pooled per-order distributions.

#include <string>
#include <vector>

#include "styledl/hoa.hpp"

namespace styledl {

struct PoolingConfig {
  double lambda = 0.8;

  void validate() const {
    if (!std::isfinite(lambda) || lambda < 0.0) throw ConfigError("pooling: lambda must be finite and >= 0");
  }
};

/// The two 1x1 fusion convs, each emitting C channels. Shared across orders.
class FusionHead {
 public:
  FusionHead() = default;
  /// `style_channels == 0` builds the content-only variant.
  FusionHead(std::size_t style_channels, std::size_t c3, std::size_t c4, std::size_t labels, ParamStore& ps,
             Rng& rng, const std::string& prefix = "fusion")
      : style_channels_(style_channels), labels_(labels) {
    sc_ = Conv::make(ps, prefix + ".sc", style_channels + c3, labels, 1, 1, 0, rng);
    s4_ = Conv::make(ps, prefix + ".s4", style_channels + c4, labels, 1, 1, 0, rng);
  }

  std::size_t labels() const { return labels_; }
  Conv& sc() { return sc_; }
  Conv& s4() { return s4_; }

  /// F_e [R,B,C,D_e] with D_e = w3*h3 + w4*h4. `style` may be undefined.
  Tensor fuse_pairs(const Tensor& style, const Tensor& content, const Tensor& x4) const {
    require(content.rank() == 5 && x4.rank() == 5, "fuse_pairs: content and X4 must be [R,B,c,w,h]");
    std::size_t r = content.dim(0), b = content.dim(1);
    require(x4.dim(0) == r && x4.dim(1) == b, "fuse_pairs: order/batch mismatch");
    bool with_style = style_channels_ > 0;
    require(with_style == style.defined(), "fuse_pairs: style input does not match head configuration");
    auto pair = [&](const Conv& conv, const Tensor& partner) {
      Tensor folded = detail::fold_orders(partner);
      if (with_style) {
        Tensor aligned = resample_nearest(style, partner.dim(3), partner.dim(4));
        Tensor repeated = detail::fold_orders(expand(aligned, 0, r));
        folded = concat({repeated, folded}, 1);
      }
      Tensor out = conv(folded);  // [R*B,C,w,h]
      return reshape(out, {r, b, labels_, out.dim(2) * out.dim(3)});
    };
    return concat({pair(sc_, content), pair(s4_, x4)}, -1);
  }

 private:
  std::size_t style_channels_ = 0;
  std::size_t labels_ = 0;
  Conv sc_;
  Conv s4_;
};

/// softmax(mean + lambda * max) over the last axis, softmax over labels.
/// Used for both F_e [R,B,C,D_e] and F_dgcn [B,C,D'].
inline Tensor pooled_distribution(const Tensor& features, double lambda) {
  if (lambda < 0.0) throw ConfigError("pooled_distribution: lambda must be >= 0");
  Tensor logits = add(reduce_mean(features, -1), scale(reduce_max(features, -1), lambda));
  return softmax(logits, -1);
}

/// Arithmetic mean of the per-order distributions [R,B,C] -> [B,C].
inline Tensor style_distribution(const Tensor& per_order) { return reduce_mean(per_order, 0); }

/// F~_e [B,C,R*D_e]: orders concatenated along the feature axis.
inline Tensor concat_orders(const Tensor& fe) {
  std::vector<Tensor> parts;
  for (std::size_t r = 0; r < fe.dim(0); ++r) parts.push_back(select(fe, r));
  return concat(parts, -1);
}

}  // namespace styledl
