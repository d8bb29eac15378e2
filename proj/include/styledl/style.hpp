#pragma once

// Stylistic statistics: per-layer GRAM matrices, their upsampled stack and
// the inter-layer correlation network that turns the stack into F_style.

#include <algorithm>
#include <string>
#include <vector>

#include "styledl/layers.hpp"

namespace styledl {

/// G = B B^T per sample, with B the [c, w*h] flattening of x[B,c,w,h].
/// `normalize` divides by w*h.
inline Tensor gram(const Tensor& x, bool normalize = false) {
  require(x.rank() == 4, "gram: expected [B,c,w,h], got " + shape_str(x.shape()));
  std::size_t b = x.dim(0), c = x.dim(1), m = x.dim(2) * x.dim(3);
  Tensor flat = reshape(x, {b, c, m});
  Tensor g = matmul(flat, transpose_last2(flat));
  return normalize ? scale(g, 1.0 / static_cast<double>(m)) : g;
}

/// Keeps only the diagonal of batched square matrices (channel energies,
/// no cross-channel correlation).
inline Tensor diagonal_only(const Tensor& g) {
  std::size_t c = g.dim(-1);
  std::vector<double> mask(g.numel(), 0.0);
  for (std::size_t b = 0; b < g.numel() / (c * c); ++b)
    for (std::size_t i = 0; i < c; ++i) mask[b * c * c + i * c + i] = 1.0;
  return mul(g, Tensor::from(g.shape(), std::move(mask)));
}

/// Side S shared by every slice of the stack: the largest source side.
inline std::size_t gram_stack_side(const std::vector<Tensor>& grams) {
  std::size_t s = 0;
  for (const auto& g : grams) s = std::max(s, g.dim(-1));
  return s;
}

/// Upsamples each [B,c_k,c_k] GRAM to [B,S,S] and stacks them as channels
/// of a [B,K,S,S] tensor.
inline Tensor stack_grams(const std::vector<Tensor>& grams) {
  require(!grams.empty(), "stack_grams: no inputs");
  std::size_t side = gram_stack_side(grams);
  std::size_t batch = grams[0].dim(0);
  std::vector<Tensor> slices;
  for (const auto& g : grams) {
    require(g.rank() == 3 && g.dim(1) == g.dim(2) && g.dim(0) == batch,
            "stack_grams: expected batched square matrices, got " + shape_str(g.shape()));
    slices.push_back(reshape(upsample_nearest(g, side, side), {batch, 1, side, side}));
  }
  return concat(slices, 1);
}

struct StyleConfig {
  bool gram_normalize = false;
  std::size_t hidden_channels = 16;
  std::size_t out_channels = 32;
};

/// f_cc: two (3x3 stride-2 conv -> LN -> ReLU) units over the GRAM stack.
class InterLayerCorrelation {
 public:
  InterLayerCorrelation() = default;
  InterLayerCorrelation(std::size_t in_channels, const StyleConfig& cfg, ParamStore& ps, Rng& rng,
                        const std::string& prefix = "style.fcc") {
    first_ = ConvLnRelu::make(ps, prefix + ".0", in_channels, cfg.hidden_channels, 2, rng);
    second_ = ConvLnRelu::make(ps, prefix + ".1", cfg.hidden_channels, cfg.out_channels, 2, rng);
  }

  Tensor operator()(const Tensor& stack) const {
    require(stack.rank() == 4, "inter_layer_correlation: expected [B,K,S,S]");
    if (stack.dim(2) % 4 != 0)
      throw ConfigError("inter_layer_correlation: GRAM side " + std::to_string(stack.dim(2)) +
                        " not divisible by 4");
    return second_(first_(stack));
  }

 private:
  ConvLnRelu first_;
  ConvLnRelu second_;
};

/// Full style path from the three style taps to F_style. With
/// `intra_layer == false` the GRAMs are reduced to their diagonals.
class StyleBranch {
 public:
  StyleBranch() = default;
  StyleBranch(const StyleConfig& cfg, ParamStore& ps, Rng& rng) : cfg_(cfg), fcc_(3, cfg, ps, rng) {}

  const StyleConfig& config() const { return cfg_; }

  Tensor operator()(const std::vector<Tensor>& taps, bool intra_layer = true) const {
    std::vector<Tensor> grams;
    for (const auto& x : taps) {
      Tensor g = gram(x, cfg_.gram_normalize);
      grams.push_back(intra_layer ? g : diagonal_only(g));
    }
    return fcc_(stack_grams(grams));
  }

 private:
  StyleConfig cfg_;
  InterLayerCorrelation fcc_;
};

}  // namespace styledl
