#pragma once

// AA-kNN: mean label distribution of the k nearest training images, with
// images reduced to 8x8 grayscale block means.

#include <algorithm>
#include <numeric>
#include <string>
#include <vector>

#include "styledl/dataio.hpp"

namespace styledl {

inline constexpr std::size_t kKnnGrid = 8;

/// 64-d feature: luma averaged over an 8x8 grid of blocks.
inline std::vector<double> knn_feature(const Image& img) {
  std::vector<double> sum(kKnnGrid * kKnnGrid, 0.0), count(kKnnGrid * kKnnGrid, 0.0);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x) {
      const unsigned char* px = &img.rgb[(y * img.width + x) * 3];
      double luma = (0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2]) / 255.0;
      std::size_t cell = (y * kKnnGrid / img.height) * kKnnGrid + x * kKnnGrid / img.width;
      sum[cell] += luma;
      count[cell] += 1.0;
    }
  for (std::size_t i = 0; i < sum.size(); ++i)
    if (count[i] > 0.0) sum[i] /= count[i];
  return sum;
}

class KnnBaseline {
 public:
  void add(std::vector<double> feature, std::vector<double> distribution) {
    if (!features_.empty() && (feature.size() != features_[0].size() || distribution.size() != targets_[0].size()))
      throw ContractViolation("knn: inconsistent feature or label length");
    features_.push_back(std::move(feature));
    targets_.push_back(std::move(distribution));
  }

  std::size_t size() const { return features_.size(); }

  /// Ties in distance resolve to the earlier training record.
  std::vector<double> predict(std::span<const double> query, std::size_t k,
                              std::vector<std::string>* warnings = nullptr) const {
    if (features_.empty()) throw ValidationError("knn: empty training set");
    if (k == 0) throw ConfigError("knn: k must be positive");
    if (k > features_.size()) {
      if (warnings)
        warnings->push_back("knn: k=" + std::to_string(k) + " exceeds training size " +
                            std::to_string(features_.size()) + ", clamped");
      k = features_.size();
    }
    std::vector<std::pair<double, std::size_t>> dist;
    for (std::size_t i = 0; i < features_.size(); ++i) {
      require(query.size() == features_[i].size(), "knn: query feature length mismatch");
      double d = 0.0;
      for (std::size_t j = 0; j < query.size(); ++j) d += (query[j] - features_[i][j]) * (query[j] - features_[i][j]);
      dist.emplace_back(d, i);
    }
    std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
    std::vector<double> out(targets_[0].size(), 0.0);
    for (std::size_t n = 0; n < k; ++n)
      for (std::size_t j = 0; j < out.size(); ++j) out[j] += targets_[dist[n].second][j];
    for (auto& v : out) v /= static_cast<double>(k);
    return out;
  }

 private:
  std::vector<std::vector<double>> features_;
  std::vector<std::vector<double>> targets_;
};

inline KnnBaseline knn_fit(const Manifest& train) {
  KnnBaseline knn;
  for (const auto& r : train.records) knn.add(knn_feature(decode_ppm(read_file(train.resolve(r)))), r.distribution);
  return knn;
}

}  // namespace styledl
