#pragma once

// Five-stage CNN with the tap points "Conv1", "Layer1", "Layer2" (style
// taps X0..X2) and the deferred stages "Layer3" / "Layer4" used to encode
// attention outputs.

#include <array>
#include <string>
#include <vector>

#include "styledl/layers.hpp"

namespace styledl {

struct BackboneConfig {
  std::size_t in_channels = 3;
  std::array<std::size_t, 5> stage_channels{8, 16, 32, 64, 128};
  std::size_t input_size = 64;

  void validate() const {
    if (in_channels == 0) throw ConfigError("backbone: in_channels must be positive");
    if (input_size == 0 || input_size % 32 != 0)
      throw ConfigError("backbone: input_size " + std::to_string(input_size) + " not divisible by 32");
    for (std::size_t i = 0; i < 5; ++i) {
      if (stage_channels[i] == 0) throw ConfigError("backbone: stage channels must be positive");
      if (i > 0 && stage_channels[i] < stage_channels[i - 1])
        throw ConfigError("backbone: stage channels must be nondecreasing");
    }
  }

  /// Spatial side of stage k's output.
  std::size_t side(std::size_t stage) const { return input_size >> (stage + 1); }
};

class Backbone;

struct FeatureTaps {
  Tensor x0, x1, x2;
  const Backbone* backbone = nullptr;

  Tensor f3(const Tensor& x) const;
  Tensor f4(const Tensor& x) const;
};

class Backbone {
 public:
  Backbone() = default;
  Backbone(const BackboneConfig& cfg, ParamStore& ps, Rng& rng, const std::string& prefix = "backbone")
      : cfg_(cfg) {
    cfg_.validate();
    std::size_t cin = cfg_.in_channels;
    for (std::size_t i = 0; i < 5; ++i) {
      std::string p = prefix + ".stage" + std::to_string(i);
      std::size_t c = cfg_.stage_channels[i];
      stages_[i].down = ConvLnRelu::make(ps, p + ".down", cin, c, 2, rng);
      stages_[i].refine = ConvLnRelu::make(ps, p + ".refine", c, c, 1, rng);
      cin = c;
    }
  }

  const BackboneConfig& config() const { return cfg_; }

  Tensor stage(std::size_t i, const Tensor& x) const {
    require(i < 5, "backbone: stage index out of range");
    return stages_[i].refine(stages_[i].down(x));
  }

  FeatureTaps forward_taps(const Tensor& images) const {
    require(images.rank() == 4 && images.dim(1) == cfg_.in_channels,
            "backbone: images must be [B," + std::to_string(cfg_.in_channels) + ",H,W], got " +
                shape_str(images.shape()));
    if (images.dim(2) != cfg_.input_size || images.dim(3) != cfg_.input_size)
      throw ContractViolation("backbone: expected " + std::to_string(cfg_.input_size) + "x" +
                              std::to_string(cfg_.input_size) + " input, got " + shape_str(images.shape()));
    FeatureTaps t;
    t.x0 = stage(0, images);
    t.x1 = stage(1, t.x0);
    t.x2 = stage(2, t.x1);
    t.backbone = this;
    return t;
  }

  /// Shape of stage k's output for a batch of `batch` images.
  Shape tap_shape(std::size_t k, std::size_t batch) const {
    return {batch, cfg_.stage_channels[k], cfg_.side(k), cfg_.side(k)};
  }

 private:
  struct Stage {
    ConvLnRelu down;
    ConvLnRelu refine;
    Tensor operator()(const Tensor& x) const { return refine(down(x)); }
  };

  BackboneConfig cfg_;
  std::array<Stage, 5> stages_;
};

inline Tensor FeatureTaps::f3(const Tensor& x) const { return backbone->stage(3, x); }
inline Tensor FeatureTaps::f4(const Tensor& x) const { return backbone->stage(4, x); }

/// Fresh backbone whose parameters are drawn deterministically from `seed`.
inline Backbone build_backbone(const BackboneConfig& cfg, std::uint64_t seed, ParamStore& ps) {
  Rng rng(seed);
  return Backbone(cfg, ps, rng);
}

}  // namespace styledl
