#pragma once

// End-to-end assembly: backbone -> style path -> attention/content path ->
// fusion head -> stylistic GCN -> final combination.

#include <optional>
#include <string>
#include <vector>

#include "styledl/config.hpp"
#include "styledl/gcn.hpp"
#include "styledl/style.hpp"

namespace styledl {

struct ModelOutputs {
  Tensor y;          // [B,C] final distribution
  Tensor y_style;    // [B,C]
  Tensor y_emotion;  // [B,C]; undefined without the graph branch
  Tensor per_order;  // [R,B,C] y_e^r
  Tensor x3, x4;     // [R,B,...] encoded orders
  Tensor f_style, f_content, f_e, f_sgcn, a_dynamic, f_dgcn;
};

struct LossTerms {
  Tensor pred;   // L_pred
  Tensor adv;    // L_adv (zero scalar when inactive)
  Tensor total;  // balanced objective
  double kl_final = 0.0;  // batch-mean KL(target || y), monitoring only
};

class StyleEdlModel {
 public:
  StyleEdlModel(const TrainConfig& cfg, std::vector<std::string> labels, Tensor static_adjacency)
      : cfg_(cfg), labels_(std::move(labels)), parts_(Components::of(cfg.ablation)) {
    cfg_.validate();
    std::size_t c = labels_.size();
    require(c >= 2, "model: need at least two labels");
    require(static_adjacency.rank() == 2 && static_adjacency.dim(0) == c && static_adjacency.dim(1) == c,
            "model: static adjacency must be [C,C]");
    adjacency_ = static_adjacency.detach();

    Rng rng(cfg_.seed);
    BackboneConfig bcfg;
    bcfg.stage_channels = cfg_.stage_channels;
    bcfg.input_size = cfg_.input_size;
    backbone_ = Backbone(bcfg, params_, rng);
    const auto& ch = cfg_.stage_channels;

    if (parts_.style) {
      StyleConfig scfg{cfg_.gram_normalize, cfg_.style_hidden, cfg_.style_channels};
      std::size_t side = std::max({ch[0], ch[1], ch[2]});
      if (side % 4 != 0) throw ConfigError("model: GRAM side " + std::to_string(side) + " not divisible by 4");
      style_ = StyleBranch(scfg, params_, rng);
    }
    if (parts_.attention) {
      hoa_ = HoaParams::make(cfg_.R, ch[2], params_, rng);
      lateral_ = Conv::make(params_, "fpn.lateral", ch[4], ch[3], 1, 1, 0, rng);
      if (parts_.adversary && cfg_.R >= 2) {
        std::size_t d3 = ch[3] * bcfg.side(3) * bcfg.side(3), d4 = ch[4] * bcfg.side(4) * bcfg.side(4);
        adv3_ = AdversaryHead::make(params_, "adversary.stage3", d3, cfg_.adv_hidden, cfg_.adv_out, rng);
        adv4_ = AdversaryHead::make(params_, "adversary.stage4", d4, cfg_.adv_hidden, cfg_.adv_out, rng);
      }
    }
    fusion_ = FusionHead(parts_.style ? cfg_.style_channels : 0, ch[3], ch[4], c, params_, rng);
    if (parts_.gcn) {
      std::size_t de = bcfg.side(3) * bcfg.side(3) + bcfg.side(4) * bcfg.side(4);
      gcn_ = GcnParams::make(order_count() * de, cfg_.gcn_dim, c, params_, rng);
    }
  }

  const TrainConfig& config() const { return cfg_; }
  const std::vector<std::string>& labels() const { return labels_; }
  std::size_t label_count() const { return labels_.size(); }
  const Components& components() const { return parts_; }
  const Tensor& static_adjacency() const { return adjacency_; }
  Tensor& static_adjacency() { return adjacency_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  std::size_t order_count() const { return parts_.attention ? cfg_.R : 1; }
  bool adversary_active() const { return parts_.attention && parts_.adversary && cfg_.R >= 2; }

  ModelOutputs forward(const Tensor& images) const {
    ModelOutputs out;
    FeatureTaps taps = backbone_.forward_taps(images);
    if (parts_.style) out.f_style = style_({taps.x0, taps.x1, taps.x2}, parts_.intra_layer);

    std::vector<Tensor> atts = parts_.attention ? hoa_forward(taps.x2, hoa_) : std::vector<Tensor>{taps.x2};
    EncodedOrders enc = encode_orders(atts, taps);
    out.x3 = enc.x3;
    out.x4 = enc.x4;
    out.f_content = parts_.attention ? fpn_fuse(enc.x3, enc.x4, lateral_) : enc.x3;

    out.f_e = fusion_.fuse_pairs(out.f_style, out.f_content, enc.x4);
    out.per_order = pooled_distribution(out.f_e, cfg_.lambda);
    out.y_style = style_distribution(out.per_order);

    if (parts_.gcn) {
      out.f_sgcn = static_gcn(adjacency_, concat_orders(out.f_e), gcn_.w_static);
      if (parts_.dynamic) {
        out.a_dynamic = dynamic_adjacency(out.f_sgcn, gcn_.w_adjacency);
        out.f_dgcn = dynamic_gcn(out.a_dynamic, out.f_sgcn, gcn_.w_dynamic);
        out.y_emotion = emotion_distribution(out.f_dgcn, cfg_.lambda);
      } else {
        out.y_emotion = emotion_distribution(out.f_sgcn, cfg_.lambda);
      }
      out.y = combine_final(out.y_emotion, out.y_style, cfg_.mu);
    } else {
      out.y = out.y_style;
    }
    return out;
  }

  /// Adversary loss of a forward pass; `reverse` controls the
  /// gradient-reversal insertion.
  Tensor adversary(const ModelOutputs& out, bool reverse = true) const {
    if (!adversary_active()) return Tensor::scalar(0.0);
    return adversary_loss(out.x3, out.x4, adv3_, adv4_, reverse);
  }

  LossTerms losses(const ModelOutputs& out, const Tensor& target) const {
    LossTerms t;
    t.pred = pred_loss(out.per_order, out.y_emotion, target);
    t.adv = adversary(out);
    t.total = adversary_active() ? total_loss(t.pred, t.adv) : t.pred;
    auto y = out.y.data();
    auto tv = target.data();
    std::size_t c = label_count(), b = out.y.dim(0);
    for (std::size_t i = 0; i < b; ++i) t.kl_final += kl_divergence(tv.subspan(i * c, c), y.subspan(i * c, c));
    t.kl_final /= static_cast<double>(b);
    return t;
  }

  HoaParams& hoa() { return hoa_; }
  GcnParams& gcn() { return gcn_; }
  FusionHead& fusion() { return fusion_; }

 private:
  TrainConfig cfg_;
  std::vector<std::string> labels_;
  Components parts_;
  Tensor adjacency_;
  ParamStore params_;
  Backbone backbone_;
  StyleBranch style_;
  HoaParams hoa_;
  Conv lateral_;
  AdversaryHead adv3_, adv4_;
  FusionHead fusion_;
  GcnParams gcn_;
};

}  // namespace styledl
