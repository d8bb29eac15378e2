#pragma once

// Training configuration, ablation presets and the flat key=value format.

#include <array>
#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <sstream>
#include <string>

#include "styledl/dataio.hpp"

namespace styledl {

enum class Ablation { full, b, b_g, b_v, b_e, b_g_v, static_gcn_only, inter_only, no_an };

inline constexpr std::array<std::pair<Ablation, const char*>, 9> kAblationNames{{
    {Ablation::full, "full"},
    {Ablation::b, "B"},
    {Ablation::b_g, "B+G"},
    {Ablation::b_v, "B+V"},
    {Ablation::b_e, "B+E"},
    {Ablation::b_g_v, "B+G+V"},
    {Ablation::static_gcn_only, "static_gcn_only"},
    {Ablation::inter_only, "inter_only"},
    {Ablation::no_an, "noAN"},
}};

inline std::string to_string(Ablation a) {
  for (auto [k, n] : kAblationNames)
    if (k == a) return n;
  return "full";
}

inline Ablation parse_ablation(const std::string& s) {
  for (auto [k, n] : kAblationNames)
    if (s == n) return k;
  throw ConfigError("unknown ablation preset '" + s + "'");
}

/// Which subgraphs a preset keeps.
struct Components {
  bool style = true;        // GRAM path and F_style
  bool intra_layer = true;  // full GRAMs (false: diagonals only)
  bool attention = true;    // HOA orders + FPN lateral
  bool adversary = true;    // order-diversity loss
  bool gcn = true;          // stylistic GCN branch
  bool dynamic = true;      // dynamic GCN on top of the static one

  static Components of(Ablation a) {
    Components c;
    switch (a) {
      case Ablation::full: break;
      case Ablation::b: c = {false, false, false, false, false, false}; break;
      case Ablation::b_g: c = {true, true, false, false, false, false}; break;
      case Ablation::b_v: c = {false, false, true, true, false, false}; break;
      case Ablation::b_e: c = {false, false, false, false, true, true}; break;
      case Ablation::b_g_v: c = {true, true, true, true, false, false}; break;
      case Ablation::static_gcn_only: c.dynamic = false; break;
      case Ablation::inter_only: c.intra_layer = false; break;
      case Ablation::no_an: c.adversary = false; break;
    }
    return c;
  }
};

struct TrainConfig {
  std::size_t R = 2;
  double lambda = 0.8;
  double mu = 0.6;
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::size_t batch_size = 8;
  std::size_t epochs = 90;
  double grad_clip = 5.0;     // global gradient-norm cap; 0 disables
  double adv_grad_cap = 0.1;  // adversary gradient norm <= cap * prediction gradient norm; 0 disables
  std::string lr_decay = "step";  // "step": /10 every 20 epochs after epoch 10; "none"
  std::uint64_t seed = 0;
  Ablation ablation = Ablation::full;

  // architecture
  std::size_t input_size = 64;
  std::array<std::size_t, 5> stage_channels{8, 16, 32, 64, 128};
  std::size_t style_hidden = 16;
  std::size_t style_channels = 32;
  bool gram_normalize = false;
  std::size_t adv_hidden = 64;
  std::size_t adv_out = 16;
  std::size_t gcn_dim = 128;

  // data
  double tau = 0.1;
  double threshold = 0.3;
  bool flip = true;

  /// Memorization preset: 300 epochs at constant learning rate, no flips.
  static TrainConfig overfit() {
    TrainConfig c;
    c.epochs = 300;
    c.lr_decay = "none";
    c.flip = false;
    return c;
  }

  void validate() const {
    if (R == 0) throw ConfigError("config: R must be >= 1");
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("config: lambda must be >= 0");
    if (!(mu >= 0.0 && mu <= 1.0)) throw ConfigError("config: mu must lie in [0,1]");
    if (!(lr >= 0.0)) throw ConfigError("config: lr must be >= 0");
    if (!(momentum >= 0.0) || !(weight_decay >= 0.0)) throw ConfigError("config: momentum/weight_decay must be >= 0");
    if (!(grad_clip >= 0.0)) throw ConfigError("config: grad_clip must be >= 0");
    if (!(adv_grad_cap >= 0.0)) throw ConfigError("config: adv_grad_cap must be >= 0");
    if (batch_size == 0) throw ConfigError("config: batch_size must be positive");
    if (lr_decay != "step" && lr_decay != "none") throw ConfigError("config: lr_decay must be 'step' or 'none'");
    if (style_hidden == 0 || style_channels == 0 || adv_hidden == 0 || adv_out == 0 || gcn_dim == 0)
      throw ConfigError("config: layer widths must be positive");
  }

  /// Learning rate for a 1-based epoch.
  double lr_at(std::size_t epoch) const {
    if (lr_decay == "none" || epoch <= 10) return lr;
    auto drops = (epoch - 10 + 19) / 20;
    return lr / std::pow(10.0, static_cast<double>(drops));
  }

  std::map<std::string, std::string> to_map() const {
    std::map<std::string, std::string> m;
    auto num = [](double v) { return detail::format_double(v); };
    m["R"] = std::to_string(R);
    m["lambda"] = num(lambda);
    m["mu"] = num(mu);
    m["lr"] = num(lr);
    m["momentum"] = num(momentum);
    m["weight_decay"] = num(weight_decay);
    m["batch_size"] = std::to_string(batch_size);
    m["epochs"] = std::to_string(epochs);
    m["grad_clip"] = num(grad_clip);
    m["adv_grad_cap"] = num(adv_grad_cap);
    m["lr_decay"] = lr_decay;
    m["seed"] = std::to_string(seed);
    m["ablation"] = to_string(ablation);
    m["input_size"] = std::to_string(input_size);
    std::string sc;
    for (std::size_t i = 0; i < 5; ++i) sc += (i ? "," : "") + std::to_string(stage_channels[i]);
    m["stage_channels"] = sc;
    m["style_hidden"] = std::to_string(style_hidden);
    m["style_channels"] = std::to_string(style_channels);
    m["gram_normalize"] = gram_normalize ? "1" : "0";
    m["adv_hidden"] = std::to_string(adv_hidden);
    m["adv_out"] = std::to_string(adv_out);
    m["gcn_dim"] = std::to_string(gcn_dim);
    m["tau"] = num(tau);
    m["threshold"] = num(threshold);
    m["flip"] = flip ? "1" : "0";
    return m;
  }

  std::string to_text() const {
    std::string out;
    for (const auto& [k, v] : to_map()) out += k + "=" + v + "\n";
    return out;
  }

  void set(const std::string& key, const std::string& value) {
    auto to_size = [&](const std::string& v) -> std::size_t {
      std::size_t pos = 0;
      long long n = 0;
      try {
        n = std::stoll(v, &pos);
      } catch (const std::exception&) {
        throw ConfigError("config: " + key + " expects an integer, got '" + v + "'");
      }
      if (pos != v.size() || n < 0) throw ConfigError("config: " + key + " expects a nonnegative integer");
      return static_cast<std::size_t>(n);
    };
    auto to_double = [&](const std::string& v) {
      double d = 0.0;
      if (!detail::parse_double(v, d)) throw ConfigError("config: " + key + " expects a number, got '" + v + "'");
      return d;
    };
    auto to_bool = [&](const std::string& v) {
      if (v == "1" || v == "true") return true;
      if (v == "0" || v == "false") return false;
      throw ConfigError("config: " + key + " expects 0/1");
    };
    if (key == "R") R = to_size(value);
    else if (key == "lambda") lambda = to_double(value);
    else if (key == "mu") mu = to_double(value);
    else if (key == "lr") lr = to_double(value);
    else if (key == "momentum") momentum = to_double(value);
    else if (key == "weight_decay") weight_decay = to_double(value);
    else if (key == "batch_size") batch_size = to_size(value);
    else if (key == "epochs") epochs = to_size(value);
    else if (key == "grad_clip") grad_clip = to_double(value);
    else if (key == "adv_grad_cap") adv_grad_cap = to_double(value);
    else if (key == "lr_decay") lr_decay = value;
    else if (key == "seed") seed = to_size(value);
    else if (key == "ablation") ablation = parse_ablation(value);
    else if (key == "input_size") input_size = to_size(value);
    else if (key == "stage_channels") {
      auto parts = detail::split(value, ',');
      if (parts.size() != 5) throw ConfigError("config: stage_channels needs five values");
      for (std::size_t i = 0; i < 5; ++i) stage_channels[i] = to_size(std::string(detail::trim(parts[i])));
    } else if (key == "style_hidden") style_hidden = to_size(value);
    else if (key == "style_channels") style_channels = to_size(value);
    else if (key == "gram_normalize") gram_normalize = to_bool(value);
    else if (key == "adv_hidden") adv_hidden = to_size(value);
    else if (key == "adv_out") adv_out = to_size(value);
    else if (key == "gcn_dim") gcn_dim = to_size(value);
    else if (key == "tau") tau = to_double(value);
    else if (key == "threshold") threshold = to_double(value);
    else if (key == "flip") flip = to_bool(value);
    else throw ConfigError("config: unknown key '" + key + "'");
  }
};

/// Flat key=value lines; '#' starts a comment. A `preset=overfit` line
/// resets to the overfit preset before the remaining keys apply.
inline TrainConfig parse_config(std::istream& in) {
  std::vector<std::pair<std::string, std::string>> kv;
  std::string line;
  std::size_t line_no = 0;
  TrainConfig cfg;
  while (std::getline(in, line)) {
    ++line_no;
    auto hash = line.find('#');
    std::string_view lv = detail::trim(std::string_view(line).substr(0, hash));
    if (lv.empty()) continue;
    auto eq = lv.find('=');
    if (eq == std::string_view::npos) throw ParseError("expected key=value", line_no);
    std::string key(detail::trim(lv.substr(0, eq))), value(detail::trim(lv.substr(eq + 1)));
    if (key == "preset") {
      if (value == "overfit") cfg = TrainConfig::overfit();
      else if (value != "default") throw ConfigError("config: unknown preset '" + value + "'");
      continue;
    }
    kv.emplace_back(key, value);
  }
  for (const auto& [k, v] : kv) cfg.set(k, v);
  cfg.validate();
  return cfg;
}

inline TrainConfig parse_config_text(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in);
}

inline TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  return parse_config(in);
}

}  // namespace styledl
