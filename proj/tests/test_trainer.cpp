#include <gtest/gtest.h>

#include <filesystem>

#include "styledl/trainer.hpp"

using namespace styledl;
namespace fs = std::filesystem;

namespace {

TrainConfig small_config(std::uint64_t seed = 1) {
  TrainConfig c;
  c.input_size = 32;
  c.seed = seed;
  c.epochs = 2;
  c.batch_size = 4;
  return c;
}

Tensor identity(std::size_t c) {
  std::vector<double> v(c * c, 0.0);
  for (std::size_t i = 0; i < c; ++i) v[i * c + i] = 1.0;
  return Tensor::from({c, c}, v);
}

Tensor random_images(std::size_t b, std::size_t s, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> v(b * 3 * s * s);
  for (auto& x : v) x = u(rng);
  return Tensor::from({b, 3, s, s}, std::move(v));
}

const Dataset& corpus() {
  static const Dataset d = [] {
    fs::path dir = fs::temp_directory_path() / "styledl_test_trainer";
    fs::remove_all(dir);
    return load_dataset(synth_generate(5, 8, 4, 32, dir), 32);
  }();
  return d;
}

const std::vector<std::string>& labels() {
  static const std::vector<std::string> l = default_label_names(4);
  return l;
}

double variance(std::span<const double> v) {
  double m = 0.0, s = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size());
}

}  // namespace

TEST(Model, ForwardShapesAndSimplex) {
  StyleEdlModel model(small_config(), labels(), identity(4));
  ModelOutputs out = model.forward(random_images(2, 32, 1));
  EXPECT_EQ(out.y.shape(), (Shape{2, 4}));
  EXPECT_EQ(out.per_order.shape(), (Shape{2, 2, 4}));
  EXPECT_EQ(out.f_style.shape(), (Shape{2, 32, 8, 8}));
  EXPECT_EQ(out.a_dynamic.shape(), (Shape{2, 4, 4}));
  for (std::size_t b = 0; b < 2; ++b) EXPECT_TRUE(is_simplex(out.y.data().subspan(b * 4, 4)));
  EXPECT_TRUE(model.adversary_active());
}

TEST(Model, MuOneReturnsEmotionBranch) {
  TrainConfig c = small_config();
  c.mu = 1.0;
  StyleEdlModel model(c, labels(), identity(4));
  ModelOutputs out = model.forward(random_images(1, 32, 2));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(out.y.data()[i], out.y_emotion.data()[i]);
}

TEST(Model, BaselinePresetDropsBranches) {
  TrainConfig c = small_config();
  c.ablation = Ablation::b;
  StyleEdlModel model(c, labels(), identity(4));
  ModelOutputs out = model.forward(random_images(2, 32, 3));
  EXPECT_FALSE(out.f_style.defined());
  EXPECT_FALSE(out.y_emotion.defined());
  EXPECT_EQ(out.per_order.dim(0), 1u);
  EXPECT_FALSE(model.adversary_active());
  EXPECT_EQ(model.params().find("adversary.stage3.fc1.weight"), nullptr);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(out.y.data()[i], out.y_style.data()[i]);
  EXPECT_EQ(model.losses(out, Tensor::full({2, 4}, 0.25)).adv.item(), 0.0);
}

TEST(Model, EveryPresetBuildsAndRuns) {
  for (auto [a, name] : kAblationNames) {
    TrainConfig c = small_config();
    c.ablation = a;
    StyleEdlModel model(c, labels(), identity(4));
    ModelOutputs out = model.forward(random_images(1, 32, 4));
    EXPECT_TRUE(is_simplex(out.y.data())) << name;
  }
}

TEST(Model, DynamicAdjacencyLearnsFromConstant) {
  TrainConfig c = small_config();
  c.lr = 0.05;
  StyleEdlModel model(c, labels(), identity(4));
  fill(model.gcn().w_adjacency, 0.0);
  auto [x, t] = make_batch(corpus(), std::vector<std::size_t>{0, 1, 2, 3});
  ModelOutputs out = model.forward(x);
  EXPECT_EQ(variance(out.a_dynamic.data()), 0.0);
  LossTerms loss = model.losses(out, t);
  accumulate_gradients(model.params(), loss, model.adversary_active(), c.adv_grad_cap);
  Sgd opt(c.momentum, c.weight_decay);
  opt.step(model.params(), c.lr);
  EXPECT_GT(variance(model.forward(x).a_dynamic.data()), 0.0);
}

TEST(Model, AdversaryGradientIsReversed) {
  TrainConfig c = small_config();
  StyleEdlModel model(c, labels(), identity(4));
  Tensor x = random_images(2, 32, 5);
  Tensor* w = model.params().find("hoa.order2.inner1.weight");
  ASSERT_NE(w, nullptr);
  auto grad_of = [&](bool reverse) {
    model.params().zero_grad();
    backward(model.adversary(model.forward(x), reverse));
    return std::vector<double>(w->grad().begin(), w->grad().end());
  };
  auto plain = grad_of(false), reversed = grad_of(true);
  double norm = 0.0;
  for (std::size_t i = 0; i < plain.size(); ++i) {
    EXPECT_NEAR(reversed[i], -plain[i], 1e-12 * (1.0 + std::abs(plain[i])));
    norm += plain[i] * plain[i];
  }
  EXPECT_GT(norm, 0.0);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  TrainConfig c = small_config();
  c.epochs = 1;
  TrainResult res = train(c, corpus(), identity(4), labels());
  fs::path path = fs::temp_directory_path() / "styledl_test_ckpt.bin";
  save_checkpoint(path, *res.state.model, res.state.optimizer.get(), res.state.epoch);
  TrainState back = load_checkpoint(path);
  EXPECT_EQ(back.epoch, 1u);
  EXPECT_EQ(back.model->labels(), labels());
  EXPECT_EQ(back.optimizer->velocity(), res.state.optimizer->velocity());
  Tensor x = random_images(2, 32, 6);
  NoGradGuard guard;
  Tensor a = res.state.model->forward(x).y, b = back.model->forward(x).y;
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(a.data()[i], b.data()[i]);
  EXPECT_EQ(encode_checkpoint(*back.model, back.optimizer.get(), back.epoch), read_file(path));
}

TEST(Checkpoint, RejectsCorruption) {
  StyleEdlModel model(small_config(), labels(), identity(4));
  std::string bytes = encode_checkpoint(model, nullptr, 0);
  EXPECT_THROW(decode_checkpoint("XXXXX" + bytes.substr(5)), FormatError);
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), FormatError);
  EXPECT_THROW(decode_checkpoint(bytes + "x"), FormatError);
  EXPECT_NO_THROW(decode_checkpoint(bytes));
}

TEST(Trainer, SameSeedSameLog) {
  TrainConfig c = small_config(7);
  TrainResult a = train(c, corpus(), identity(4), labels());
  TrainResult b = train(c, corpus(), identity(4), labels());
  ASSERT_EQ(a.log.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_EQ(a.log[i].to_text(), b.log[i].to_text());
  EXPECT_EQ(encode_checkpoint(*a.state.model, a.state.optimizer.get(), a.state.epoch),
            encode_checkpoint(*b.state.model, b.state.optimizer.get(), b.state.epoch));
}

TEST(Trainer, OverfitPresetDecreasesPredictionLoss) {
  TrainConfig c = TrainConfig::overfit();
  c.input_size = 32;
  c.epochs = 10;
  c.seed = 2;
  TrainResult res = train(c, corpus(), identity(4), labels());
  ASSERT_EQ(res.log.size(), 10u);
  double first = 0.0, second = 0.0;
  for (std::size_t i = 0; i < 5; ++i) {
    first += res.log[i].l_pred;
    second += res.log[i + 5].l_pred;
  }
  EXPECT_LT(second, first);
  EXPECT_LT(res.log.back().l_pred, res.log.front().l_pred);
}

TEST(Trainer, NonFiniteLossRollsBack) {
  TrainConfig c = small_config();
  c.epochs = 5;
  c.lr = 1e200;
  c.grad_clip = 0.0;
  c.adv_grad_cap = 0.0;
  TrainResult res = train(c, corpus(), identity(4), labels());
  EXPECT_TRUE(res.aborted);
  EXPECT_FALSE(res.abort_reason.empty());
  for (const auto& e : res.state.model->params().entries())
    for (double v : e.value.data()) ASSERT_TRUE(std::isfinite(v)) << e.name;
}

TEST(Trainer, EvaluateRejectsLabelMismatch) {
  StyleEdlModel model(small_config(), default_label_names(3), identity(3));
  EXPECT_THROW(evaluate(model, corpus()), ConfigError);
}

TEST(Trainer, EvaluateReportsPerSampleMeans) {
  StyleEdlModel model(small_config(), labels(), identity(4));
  MetricReport r = evaluate(model, corpus());
  EXPECT_EQ(r.size(), corpus().size());
  double acc = 0.0;
  for (const auto& s : r.samples()) acc += s.kl;
  EXPECT_NEAR(r.mean().kl, acc / static_cast<double>(r.size()), 1e-15);
}

TEST(Trainer, PredictionIsIndependentOfBatching) {
  StyleEdlModel model(small_config(), labels(), identity(4));
  auto chunked = predict_dataset(model, corpus(), 3);
  auto whole = predict_dataset(model, corpus(), 16);
  ASSERT_EQ(chunked.size(), whole.size());
  for (std::size_t i = 0; i < whole.size(); ++i)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(chunked[i][j], whole[i][j], 1e-12);
}
