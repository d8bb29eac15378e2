#pragma once

// The six label-distribution evaluation measures and their report format.

#include <array>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "styledl/losses.hpp"

namespace styledl {

enum class Direction { lower, higher };

inline constexpr std::array<const char*, 6> kMetricNames{"kl", "chebyshev", "clark", "canberra", "cosine",
                                                         "intersection"};
inline constexpr std::array<Direction, 6> kMetricDirections{Direction::lower, Direction::lower, Direction::lower,
                                                            Direction::lower, Direction::higher, Direction::higher};

struct MetricValues {
  double kl = 0.0;
  double chebyshev = 0.0;
  double clark = 0.0;
  double canberra = 0.0;
  double cosine = 0.0;
  double intersection = 0.0;

  std::array<double, 6> as_array() const { return {kl, chebyshev, clark, canberra, cosine, intersection}; }
};

/// Clark and Canberra are divided by sqrt(C) and C respectively unless
/// `normalized` is false.
inline MetricValues evaluate_metrics(std::span<const double> target, std::span<const double> pred,
                                     bool normalized = true) {
  if (target.size() != pred.size() || target.empty())
    throw ContractViolation("evaluate_metrics: length mismatch (" + std::to_string(target.size()) + " vs " +
                            std::to_string(pred.size()) + ")");
  MetricValues m;
  m.kl = kl_divergence(target, pred);
  double clark_sq = 0.0, dot = 0.0, nt = 0.0, np = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    double t = target[i], p = pred[i];
    double diff = std::abs(t - p);
    double denom = t + p;
    m.chebyshev = std::max(m.chebyshev, diff);
    if (denom > 0.0) {
      clark_sq += (diff / denom) * (diff / denom);
      m.canberra += diff / denom;
    }
    dot += t * p;
    nt += t * t;
    np += p * p;
    m.intersection += std::min(t, p);
  }
  m.clark = std::sqrt(clark_sq);
  m.cosine = (nt > 0.0 && np > 0.0) ? dot / (std::sqrt(nt) * std::sqrt(np)) : 0.0;
  if (normalized) {
    auto c = static_cast<double>(target.size());
    m.clark /= std::sqrt(c);
    m.canberra /= c;
  }
  return m;
}

inline MetricValues evaluate_metrics(const LabelDistribution& target, const LabelDistribution& pred,
                                     bool normalized = true) {
  return evaluate_metrics(target.values(), pred.values(), normalized);
}

/// Per-sample measures plus their dataset means.
class MetricReport {
 public:
  void add(const MetricValues& v) { samples_.push_back(v); }

  std::size_t size() const { return samples_.size(); }
  const std::vector<MetricValues>& samples() const { return samples_; }

  MetricValues mean() const {
    std::array<double, 6> acc{};
    for (const auto& s : samples_) {
      auto a = s.as_array();
      for (std::size_t i = 0; i < 6; ++i) acc[i] += a[i];
    }
    if (!samples_.empty())
      for (auto& v : acc) v /= static_cast<double>(samples_.size());
    return {acc[0], acc[1], acc[2], acc[3], acc[4], acc[5]};
  }

  nlohmann::json to_json(const std::string& method = {}) const {
    nlohmann::json j;
    if (!method.empty()) j["method"] = method;
    j["n"] = samples_.size();
    auto m = mean().as_array();
    for (std::size_t i = 0; i < 6; ++i) {
      j["means"][kMetricNames[i]] = m[i];
      std::vector<double> column;
      for (const auto& s : samples_) column.push_back(s.as_array()[i]);
      j["per_sample"][kMetricNames[i]] = column;
    }
    return j;
  }

  std::string to_text() const {
    std::ostringstream os;
    os << std::fixed << std::setprecision(6);
    auto m = mean().as_array();
    for (std::size_t i = 0; i < 6; ++i)
      os << std::left << std::setw(14) << kMetricNames[i] << m[i] << "\n";
    return os.str();
  }

 private:
  std::vector<MetricValues> samples_;
};

}  // namespace styledl
