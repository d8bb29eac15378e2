#pragma once

// Competition ranking across methods and the "Average Rank" summary row.

#include <cmath>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "styledl/metrics.hpp"

namespace styledl {

struct RankResult {
  std::vector<std::vector<double>> ranks;  // [method][metric]; NaN for excluded cells
  std::vector<double> average;             // mean over each method's ranked metrics
  std::vector<double> average_rank;        // competition rank of `average`
  std::vector<std::string> warnings;
};

/// Competition ("min") ranks: 1 + number of strictly better entries. NaN
/// entries get a NaN rank.
inline std::vector<double> competition_ranks(const std::vector<double>& values, Direction dir, double tol = 1e-12) {
  std::vector<double> out(values.size(), std::nan(""));
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (std::isnan(values[i])) continue;
    std::size_t better = 0;
    for (std::size_t j = 0; j < values.size(); ++j) {
      if (j == i || std::isnan(values[j])) continue;
      double gap = dir == Direction::lower ? values[i] - values[j] : values[j] - values[i];
      if (gap > tol * std::max(1.0, std::abs(values[i]))) ++better;
    }
    out[i] = static_cast<double>(better + 1);
  }
  return out;
}

/// scores[method][metric]
inline RankResult average_rank(const std::vector<std::vector<double>>& scores, const std::vector<Direction>& directions) {
  RankResult res;
  std::size_t methods = scores.size(), metrics = directions.size();
  for (const auto& row : scores)
    if (row.size() != metrics) throw ValidationError("average_rank: every method needs one score per metric");
  res.ranks.assign(methods, std::vector<double>(metrics, std::nan("")));
  for (std::size_t k = 0; k < metrics; ++k) {
    std::vector<double> column(methods);
    for (std::size_t m = 0; m < methods; ++m) {
      column[m] = scores[m][k];
      if (std::isnan(column[m]))
        res.warnings.push_back("method " + std::to_string(m) + " metric " + std::to_string(k) +
                               ": NaN score excluded from ranking");
    }
    auto r = competition_ranks(column, directions[k]);
    for (std::size_t m = 0; m < methods; ++m) res.ranks[m][k] = r[m];
  }
  res.average.assign(methods, std::nan(""));
  for (std::size_t m = 0; m < methods; ++m) {
    double acc = 0.0;
    std::size_t n = 0;
    for (double r : res.ranks[m])
      if (!std::isnan(r)) {
        acc += r;
        ++n;
      }
    if (n > 0) res.average[m] = acc / static_cast<double>(n);
  }
  res.average_rank = competition_ranks(res.average, Direction::lower, 1e-9);
  return res;
}

/// One column of a comparison table: a method and its metric means.
struct MethodScores {
  std::string method;
  std::map<std::string, double> means;
};

inline MethodScores method_scores_from_json(const nlohmann::json& j, const std::string& fallback_name) {
  MethodScores s;
  s.method = j.contains("method") ? j.at("method").get<std::string>() : fallback_name;
  if (!j.contains("means") || !j.at("means").is_object())
    throw ValidationError("report " + fallback_name + ": missing \"means\" object");
  for (const auto& [k, v] : j.at("means").items())
    s.means[k] = v.is_null() ? std::nan("") : v.get<double>();
  return s;
}

/// Ranks the given methods over the six standard measures and renders a
/// table with parenthesized ranks, one row per measure plus Average Rank.
inline std::string rank_table(const std::vector<MethodScores>& columns, RankResult* out = nullptr) {
  if (columns.empty()) throw ValidationError("rank_table: no reports");
  for (const auto& c : columns) {
    if (c.means.size() != columns[0].means.size())
      throw ValidationError("rank_table: inconsistent metric sets (" + c.method + ")");
    for (const auto& [k, v] : columns[0].means)
      if (!c.means.count(k)) throw ValidationError("rank_table: " + c.method + " lacks metric " + k);
  }
  std::vector<std::string> names;
  std::vector<Direction> dirs;
  for (std::size_t i = 0; i < kMetricNames.size(); ++i)
    if (columns[0].means.count(kMetricNames[i])) {
      names.emplace_back(kMetricNames[i]);
      dirs.push_back(kMetricDirections[i]);
    }
  if (names.size() != columns[0].means.size())
    throw ValidationError("rank_table: reports contain unknown metric names");
  std::vector<std::vector<double>> scores;
  for (const auto& c : columns) {
    std::vector<double> row;
    for (const auto& n : names) row.push_back(c.means.at(n));
    scores.push_back(row);
  }
  RankResult res = average_rank(scores, dirs);

  std::ostringstream os;
  os << std::fixed << std::left << std::setw(16) << "Measures";
  for (const auto& c : columns) os << std::setw(14) << c.method;
  os << "\n";
  auto cell = [](double v, double r) {
    std::ostringstream c;
    c << std::fixed << std::setprecision(2) << v << "(";
    if (std::isnan(r))
      c << "-";
    else
      c << static_cast<long>(r);
    c << ")";
    return c.str();
  };
  for (std::size_t k = 0; k < names.size(); ++k) {
    os << std::setw(16) << (names[k] + (dirs[k] == Direction::lower ? " (lower)" : " (higher)"));
    for (std::size_t m = 0; m < columns.size(); ++m) os << std::setw(14) << cell(scores[m][k], res.ranks[m][k]);
    os << "\n";
  }
  os << std::setw(16) << "Average Rank";
  for (std::size_t m = 0; m < columns.size(); ++m) os << std::setw(14) << cell(res.average[m], res.average_rank[m]);
  os << "\n";
  if (out) *out = res;
  return os.str();
}

}  // namespace styledl
