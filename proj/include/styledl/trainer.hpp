#pragma once

// Mini-batch SGD training, evaluation and single-image prediction.

#include <algorithm>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "styledl/checkpoint.hpp"
#include "styledl/metrics.hpp"

namespace styledl {

/// Images [N,3,S,S] and targets [N,C] held in memory.
struct Dataset {
  std::vector<Tensor> images;  // each [3,S,S]
  std::vector<std::vector<double>> targets;
  std::size_t labels = 0;

  std::size_t size() const { return images.size(); }
};

inline Dataset load_dataset(const Manifest& m, std::size_t input_size) {
  Dataset d;
  d.labels = m.label_count();
  for (const auto& r : m.records) {
    d.images.push_back(load_ppm(m.resolve(r), input_size));
    d.targets.push_back(r.distribution);
  }
  return d;
}

/// Stacks the selected samples into a batch, optionally mirroring some.
inline std::pair<Tensor, Tensor> make_batch(const Dataset& d, std::span<const std::size_t> idx,
                                            const std::vector<bool>& flip = {}) {
  require(!idx.empty(), "make_batch: empty batch");
  Shape s = d.images[idx[0]].shape();
  std::vector<double> img, tgt;
  img.reserve(idx.size() * shape_numel(s));
  for (std::size_t k = 0; k < idx.size(); ++k) {
    Tensor x = (!flip.empty() && flip[k]) ? hflip(d.images[idx[k]]) : d.images[idx[k]];
    img.insert(img.end(), x.data().begin(), x.data().end());
    tgt.insert(tgt.end(), d.targets[idx[k]].begin(), d.targets[idx[k]].end());
  }
  return {Tensor::from({idx.size(), s[0], s[1], s[2]}, std::move(img)),
          Tensor::from({idx.size(), d.labels}, std::move(tgt))};
}

struct EpochLog {
  std::size_t epoch = 0;
  double lr = 0.0;
  double l_pred = 0.0;  // batch means
  double l_adv = 0.0;
  double kl = 0.0;      // KL(target || y)

  std::string to_text() const {
    return "epoch=" + std::to_string(epoch) + " lr=" + detail::format_double(lr) +
           " L_pred=" + detail::format_double(l_pred) + " L_adv=" + detail::format_double(l_adv) +
           " kl=" + detail::format_double(kl);
  }
};

struct TrainResult {
  TrainState state;
  std::vector<EpochLog> log;
  bool aborted = false;
  std::string abort_reason;
};

using EpochCallback = std::function<void(const EpochLog&)>;

namespace detail {

inline std::vector<std::vector<double>> snapshot(const ParamStore& ps) {
  std::vector<std::vector<double>> out;
  for (const auto& e : ps.entries()) out.emplace_back(e.value.data().begin(), e.value.data().end());
  return out;
}

inline std::vector<std::vector<double>> snapshot_grads(const ParamStore& ps) {
  std::vector<std::vector<double>> out;
  for (const auto& e : ps.entries()) out.emplace_back(e.value.grad().begin(), e.value.grad().end());
  return out;
}

inline void restore(ParamStore& ps, const std::vector<std::vector<double>>& snap) {
  auto& entries = ps.entries();
  for (std::size_t k = 0; k < entries.size(); ++k) {
    Tensor t = entries[k].value;
    std::copy(snap[k].begin(), snap[k].end(), t.data_mut().begin());
  }
}

}  // namespace detail

/// Fills parameter gradients for one batch. With a positive `adv_cap` the
/// adversarial term is back-propagated separately and its gradient rescaled
/// to at most `adv_cap` times the norm of the prediction gradient.
inline void accumulate_gradients(ParamStore& params, const LossTerms& loss, bool adversary_active, double adv_cap) {
  params.zero_grad();
  if (!adversary_active || adv_cap <= 0.0) {
    backward(loss.total);
    return;
  }
  backward(loss.pred);
  auto g_pred = detail::snapshot_grads(params);
  double n_pred = grad_norm(params);
  params.zero_grad();
  backward(sub(loss.total, loss.pred));
  double n_adv = grad_norm(params);
  double k = n_adv > adv_cap * n_pred ? adv_cap * n_pred / n_adv : 1.0;
  auto& entries = params.entries();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    Tensor p = entries[i].value;
    auto g = p.grad_mut();
    for (std::size_t j = 0; j < g.size(); ++j) g[j] = k * g[j] + (g_pred[i].empty() ? 0.0 : g_pred[i][j]);
  }
}

/// Trains from scratch. A non-finite loss stops training and rolls the
/// parameters back to the end of the last completed epoch.
inline TrainResult train(const TrainConfig& cfg, const Dataset& data, const Tensor& static_adjacency,
                         const std::vector<std::string>& labels, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (data.size() == 0) throw ValidationError("train: empty training set");
  if (labels.size() != data.labels) throw ConfigError("train: label names do not match the dataset");
  TrainResult res;
  res.state.model = std::make_unique<StyleEdlModel>(cfg, labels, static_adjacency);
  res.state.optimizer = std::make_unique<Sgd>(cfg.momentum, cfg.weight_decay);
  StyleEdlModel& model = *res.state.model;
  Sgd& opt = *res.state.optimizer;
  ParamStore& params = model.params();

  Rng order_rng(cfg.seed ^ 0x5eed5eedULL);
  std::bernoulli_distribution coin(0.5);
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    auto good_params = detail::snapshot(params);
    auto good_velocity = opt.velocity();
    EpochLog log;
    log.epoch = epoch;
    log.lr = cfg.lr_at(epoch);
    std::shuffle(idx.begin(), idx.end(), order_rng);
    std::size_t batches = 0;
    try {
      for (std::size_t start = 0; start < idx.size(); start += cfg.batch_size) {
        std::size_t len = std::min(cfg.batch_size, idx.size() - start);
        std::span<const std::size_t> sel(idx.data() + start, len);
        std::vector<bool> flip(len, false);
        if (cfg.flip)
          for (std::size_t k = 0; k < len; ++k) flip[k] = coin(order_rng);
        auto [x, t] = make_batch(data, sel, flip);
        ModelOutputs out = model.forward(x);
        for (const Tensor* t : {&out.per_order, &out.y})
          for (double v : t->data())
            if (!std::isfinite(v)) throw TrainingError("non-finite prediction");
        LossTerms loss = model.losses(out, t);
        if (!std::isfinite(loss.total.item()))
          throw TrainingError("non-finite loss " + detail::format_double(loss.total.item()));
        accumulate_gradients(params, loss, model.adversary_active(), cfg.adv_grad_cap);
        clip_grad_norm(params, cfg.grad_clip);
        opt.step(params, log.lr);
        log.l_pred += loss.pred.item();
        log.l_adv += loss.adv.item();
        log.kl += loss.kl_final;
        ++batches;
      }
    } catch (const TrainingError& e) {
      detail::restore(params, good_params);
      opt.velocity() = good_velocity;
      res.aborted = true;
      res.abort_reason = "epoch " + std::to_string(epoch) + ": " + e.what();
      res.state.epoch = static_cast<std::uint32_t>(epoch - 1);
      return res;
    }
    log.l_pred /= static_cast<double>(batches);
    log.l_adv /= static_cast<double>(batches);
    log.kl /= static_cast<double>(batches);
    res.log.push_back(log);
    res.state.epoch = static_cast<std::uint32_t>(epoch);
    if (on_epoch) on_epoch(log);
  }
  return res;
}

/// Forward pass without gradient tracking, in chunks.
inline std::vector<std::vector<double>> predict_dataset(const StyleEdlModel& model, const Dataset& data,
                                                        std::size_t chunk = 16) {
  NoGradGuard guard;
  std::vector<std::vector<double>> out;
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::size_t c = model.label_count();
  for (std::size_t start = 0; start < idx.size(); start += chunk) {
    std::size_t len = std::min(chunk, idx.size() - start);
    auto [x, t] = make_batch(data, std::span<const std::size_t>(idx.data() + start, len));
    Tensor yt = model.forward(x).y;
    auto y = yt.data();
    for (std::size_t i = 0; i < len; ++i) out.emplace_back(y.begin() + i * c, y.begin() + (i + 1) * c);
  }
  return out;
}

inline MetricReport evaluate(const StyleEdlModel& model, const Dataset& data) {
  if (data.labels != model.label_count())
    throw ConfigError("evaluate: manifest has " + std::to_string(data.labels) + " labels, checkpoint has " +
                      std::to_string(model.label_count()));
  MetricReport report;
  auto preds = predict_dataset(model, data);
  for (std::size_t i = 0; i < preds.size(); ++i) report.add(evaluate_metrics(data.targets[i], preds[i]));
  return report;
}

/// Mean KL(target || y) over a dataset.
inline double mean_kl(const StyleEdlModel& model, const Dataset& data) { return evaluate(model, data).mean().kl; }

inline std::vector<double> predict_image(const StyleEdlModel& model, const std::filesystem::path& path) {
  NoGradGuard guard;
  Tensor x = load_ppm(path, model.config().input_size);
  Tensor batch = reshape(x, {1, x.dim(0), x.dim(1), x.dim(2)});
  Tensor y = model.forward(batch).y;
  return {y.data().begin(), y.data().end()};
}

}  // namespace styledl
