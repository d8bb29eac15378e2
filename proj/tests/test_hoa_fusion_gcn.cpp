#include <gtest/gtest.h>

#include <cmath>

#include "styledl/gcn.hpp"

using namespace styledl;

namespace {

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

Tensor randn(Shape s, std::uint64_t seed) {
  Rng rng(seed);
  return kaiming_normal(std::move(s), 1, rng);
}

HoaParams identity_hoa(std::size_t r, std::size_t ch, ParamStore& ps) {
  Rng rng(0);
  HoaParams p = HoaParams::make(r, ch, ps, rng);
  for (auto& o : p.orders) {
    for (auto& c : o.inner) set_identity_1x1(c);
    for (auto& c : o.outer) set_identity_1x1(c);
  }
  return p;
}

AdversaryHead constant_head(ParamStore& ps, const std::string& name, std::size_t in, std::vector<double> out) {
  Rng rng(0);
  AdversaryHead h = AdversaryHead::make(ps, name, in, 4, out.size(), rng);
  fill(h.fc1.weight, 0.0);
  fill(h.fc2.weight, 0.0);
  assign(h.fc2.bias, out);
  return h;
}

}  // namespace

TEST(Hoa, FirstOrderIdentityReturnsInput) {
  ParamStore ps;
  HoaParams p = identity_hoa(1, 3, ps);
  Tensor x = randn({2, 3, 4, 4}, 1);
  EXPECT_EQ(values(hoa_forward(x, p)[0]), values(x));
}

TEST(Hoa, SecondOrderIdentityIsTwiceSquare) {
  ParamStore ps;
  HoaParams p = identity_hoa(2, 3, ps);
  Tensor x = randn({1, 3, 2, 2}, 2);
  auto atts = hoa_forward(x, p);
  ASSERT_EQ(atts.size(), 2u);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_DOUBLE_EQ(atts[1].data()[i], 2.0 * x.data()[i] * x.data()[i]);
}

TEST(Hoa, ZeroOuterConvsGiveZero) {
  ParamStore ps;
  Rng rng(3);
  HoaParams p = HoaParams::make(3, 2, ps, rng);
  for (auto& o : p.orders)
    for (auto& c : o.outer) fill(c.weight, 0.0);
  for (const auto& a : hoa_forward(randn({1, 2, 3, 3}, 4), p))
    for (double v : values(a)) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(HoaParams::make(0, 2, ps, rng), ConfigError);
}

TEST(EncodeOrders, ShapesAndIdenticalSlices) {
  ParamStore ps;
  Backbone bb = build_backbone(BackboneConfig{}, 1, ps);
  FeatureTaps taps;
  taps.backbone = &bb;
  Tensor x2 = randn({2, 32, 8, 8}, 5);
  EncodedOrders e = encode_orders({x2, x2}, taps);
  EXPECT_EQ(e.x3.shape(), (Shape{2, 2, 64, 4, 4}));
  EXPECT_EQ(e.x4.shape(), (Shape{2, 2, 128, 2, 2}));
  EXPECT_EQ(values(select(e.x4, 0)), values(select(e.x4, 1)));
  EXPECT_EQ(encode_orders({x2}, taps).x3.dim(0), 1u);
}

TEST(Fpn, ZeroLateralReturnsX3) {
  ParamStore ps;
  Rng rng(1);
  Conv lateral = Conv::make(ps, "lat", 4, 2, 1, 1, 0, rng);
  Tensor x3 = randn({2, 1, 2, 4, 4}, 6), x4 = randn({2, 1, 4, 2, 2}, 7);
  fill(lateral.weight, 0.0);
  Tensor f = fpn_fuse(x3, x4, lateral);
  EXPECT_EQ(f.shape(), x3.shape());
  EXPECT_EQ(values(f), values(x3));
}

TEST(Fpn, ZeroX3ReturnsLateralPath) {
  ParamStore ps;
  Rng rng(1);
  Conv lateral = Conv::make(ps, "lat", 2, 2, 1, 1, 0, rng);
  set_identity_1x1(lateral);
  Tensor x4 = Tensor::from({1, 1, 2, 1, 1}, {3, -1});
  Tensor f = fpn_fuse(Tensor::zeros({1, 1, 2, 2, 2}), x4, lateral);
  EXPECT_EQ(values(f), (std::vector<double>{3, 3, 3, 3, -1, -1, -1, -1}));
}

TEST(Adversary, SingleOrderIsExactlyZero) {
  ParamStore ps;
  Rng rng(1);
  AdversaryHead h3 = AdversaryHead::make(ps, "a3", 8, 4, 2, rng), h4 = AdversaryHead::make(ps, "a4", 4, 4, 2, rng);
  EXPECT_EQ(adversary_loss(randn({1, 2, 2, 2, 2}, 1), randn({1, 2, 1, 2, 2}, 2), h3, h4).item(), 0.0);
}

TEST(Adversary, EqualProjectionsGiveZero) {
  ParamStore ps;
  AdversaryHead h3 = constant_head(ps, "a3", 8, {1, 2}), h4 = constant_head(ps, "a4", 4, {1, 2});
  EXPECT_EQ(adversary_loss(randn({2, 1, 2, 2, 2}, 1), randn({2, 1, 1, 2, 2}, 2), h3, h4).item(), 0.0);
}

TEST(Adversary, HandProjectionsGiveHundred) {
  ParamStore ps;
  Rng rng(1);
  auto identity_head = [&](const std::string& name) {
    AdversaryHead h = AdversaryHead::make(ps, name, 2, 2, 2, rng);
    assign(h.fc1.weight, std::vector<double>{1, 0, 0, 1});
    assign(h.fc2.weight, std::vector<double>{1, 0, 0, 1});
    return h;
  };
  AdversaryHead h3 = identity_head("a3"), h4 = identity_head("a4");
  Tensor x = Tensor::from({2, 1, 2, 1, 1}, {0, 0, 3, 4});
  EXPECT_EQ(pairwise_order_distance(Tensor::from({2, 1, 2}, {0, 0, 3, 4})).item(), 50.0);
  EXPECT_EQ(adversary_loss(x, x, h3, h4).item(), 100.0);
}

TEST(Pooling, HandSoftmax) {
  Tensor f = Tensor::from({1, 1, 2, 1}, {0.0, std::log(3.0)});
  Tensor y = pooled_distribution(f, 0.0);
  EXPECT_NEAR(y.data()[0], 0.25, 1e-15);
  EXPECT_NEAR(y.data()[1], 0.75, 1e-15);
  for (double v : values(pooled_distribution(Tensor::full({2, 1, 4, 3}, 1.3), 0.8))) EXPECT_NEAR(v, 0.25, 1e-15);
  EXPECT_THROW(pooled_distribution(f, -0.1), ConfigError);
}

TEST(Pooling, LambdaZeroIsMeanPool) {
  Tensor f = Tensor::from({1, 2, 2}, {0, 2, 1, 1});
  Tensor y = pooled_distribution(f, 0.0);
  EXPECT_NEAR(y.data()[0], 0.5, 1e-15);
}

TEST(StyleDistribution, MeanOfOrders) {
  Tensor a = style_distribution(Tensor::from({2, 1, 2}, {1, 0, 0, 1}));
  EXPECT_EQ(values(a), (std::vector<double>{0.5, 0.5}));
  Tensor b = style_distribution(Tensor::from({2, 1, 2}, {0.25, 0.75, 0.75, 0.25}));
  EXPECT_EQ(values(b), (std::vector<double>{0.5, 0.5}));
  Tensor single = Tensor::from({1, 1, 2}, {0.3, 0.7});
  EXPECT_EQ(values(style_distribution(single)), (std::vector<double>{0.3, 0.7}));
}

TEST(FusionHead, ZeroConvsGiveZeroAndFeatureWidth) {
  ParamStore ps;
  Rng rng(1);
  FusionHead head(32, 64, 128, 8, ps, rng);
  fill(head.sc().weight, 0.0);
  fill(head.s4().weight, 0.0);
  Tensor fe = head.fuse_pairs(randn({1, 32, 8, 8}, 1), randn({2, 1, 64, 4, 4}, 2), randn({2, 1, 128, 2, 2}, 3));
  EXPECT_EQ(fe.shape(), (Shape{2, 1, 8, 4 * 4 + 2 * 2}));
  for (double v : values(fe)) EXPECT_EQ(v, 0.0);
}

TEST(FusionHead, SingleOrderConcatIsReshape) {
  Tensor fe = randn({1, 2, 3, 5}, 4);
  EXPECT_EQ(values(concat_orders(fe)), values(fe));
  EXPECT_EQ(concat_orders(randn({3, 2, 3, 5}, 4)).shape(), (Shape{2, 3, 15}));
}

TEST(StaticGcn, IdentityAndZero) {
  Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  Tensor f = Tensor::from({1, 2, 2}, {1, -2, -3, 4});
  std::vector<double> expected{1, -0.4, -0.6, 4};
  Tensor y = static_gcn(eye, f, eye);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(y.data()[i], expected[i]);
  for (double v : values(static_gcn(eye, f, Tensor::zeros({2, 3})))) EXPECT_EQ(v, 0.0);
}

TEST(StaticGcn, UniformAdjacencyEqualizesRows) {
  Tensor a = Tensor::full({3, 3}, 1.0 / 3.0);
  Tensor y = static_gcn(a, randn({1, 3, 4}, 5), randn({4, 2}, 6));
  for (std::size_t r = 1; r < 3; ++r)
    for (std::size_t j = 0; j < 2; ++j) EXPECT_NEAR(y.data()[r * 2 + j], y.data()[j], 1e-12);
}

TEST(DynamicAdjacency, ZeroWeightsGiveHalf) {
  Tensor a = dynamic_adjacency(randn({2, 3, 4}, 1), Tensor::zeros({8, 3}));
  EXPECT_EQ(a.shape(), (Shape{2, 3, 3}));
  for (double v : values(a)) EXPECT_EQ(v, 0.5);
}

TEST(DynamicAdjacency, IdenticalRowsAndOpenInterval) {
  Tensor f = expand(randn({1, 4}, 2), 1, 3);  // [1,3,4] identical label rows
  Tensor a = dynamic_adjacency(f, randn({8, 3}, 3));
  for (std::size_t r = 1; r < 3; ++r)
    for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(a.data()[r * 3 + j], a.data()[j]);
  for (double v : values(dynamic_adjacency(randn({2, 3, 4}, 4), randn({8, 3}, 5)))) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
}

TEST(DynamicGcn, IdentityZeroAndLinearity) {
  Tensor eye = Tensor::from({1, 2, 2}, {1, 0, 0, 1});
  Tensor f = Tensor::from({1, 2, 2}, {1, -2, 3, 4});
  Tensor w = Tensor::from({2, 2}, {1, 0, 0, 1});
  EXPECT_EQ(values(dynamic_gcn(eye, f, w)), (std::vector<double>{1, -0.4, 3, 4}));
  for (double v : values(dynamic_gcn(eye, Tensor::zeros({1, 2, 2}), w))) EXPECT_EQ(v, 0.0);
  Tensor a = Tensor::from({1, 2, 2}, {0.2, 0.7, 0.4, 0.1});
  Tensor pre1 = matmul(matmul(a, f), w), pre2 = matmul(matmul(scale(a, 2.0), f), w);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(pre2.data()[i], 2.0 * pre1.data()[i]);
}

TEST(EmotionDistribution, UniformAndHandCase) {
  for (double v : values(emotion_distribution(Tensor::full({2, 4, 3}, 0.7), 0.8))) EXPECT_NEAR(v, 0.25, 1e-15);
  Tensor y = emotion_distribution(Tensor::from({1, 2, 1}, {0.0, std::log(3.0) / 1.8}), 0.8);
  EXPECT_NEAR(y.data()[0], 0.25, 1e-15);
  EXPECT_NEAR(y.data()[1], 0.75, 1e-15);
}
