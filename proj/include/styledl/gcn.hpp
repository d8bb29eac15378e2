#pragma once

// Static label-graph convolution followed by a per-sample dynamic one whose
// adjacency is generated from the static output.

#include <string>

#include "styledl/fusion.hpp"

namespace styledl {

struct GcnParams {
  Tensor w_static;     // [D, D']
  Tensor w_dynamic;    // [D', D']
  Tensor w_adjacency;  // [2D', C]

  static GcnParams make(std::size_t in_dim, std::size_t hidden, std::size_t labels, ParamStore& ps, Rng& rng,
                        const std::string& prefix = "gcn") {
    GcnParams p;
    p.w_static = ps.add(prefix + ".w_static", kaiming_normal({in_dim, hidden}, in_dim, rng));
    p.w_dynamic = ps.add(prefix + ".w_dynamic", kaiming_normal({hidden, hidden}, hidden, rng));
    p.w_adjacency = ps.add(prefix + ".w_adjacency", kaiming_normal({2 * hidden, labels}, 2 * hidden, rng));
    return p;
  }
};

/// LeakyReLU_0.2(A_s F~_e W_s), A_s [C,C] shared over the batch.
inline Tensor static_gcn(const Tensor& adjacency, const Tensor& features, const Tensor& w_static) {
  require(adjacency.rank() == 2 && features.rank() == 3, "static_gcn: expected A [C,C] and F [B,C,D]");
  return leaky_relu(matmul(matmul(adjacency, features), w_static), 0.2);
}

/// sigmoid([F_sgcn, mean_labels(F_sgcn)] W_A), one [C,C] matrix per sample.
inline Tensor dynamic_adjacency(const Tensor& f_sgcn, const Tensor& w_adjacency) {
  require(f_sgcn.rank() == 3, "dynamic_adjacency: expected [B,C,D']");
  Tensor global = expand(reduce_mean(f_sgcn, 1), 1, f_sgcn.dim(1));
  return sigmoid(matmul(concat({f_sgcn, global}, -1), w_adjacency));
}

/// LeakyReLU_0.2(A_d F_sgcn W_d)
inline Tensor dynamic_gcn(const Tensor& adjacency, const Tensor& f_sgcn, const Tensor& w_dynamic) {
  require(adjacency.rank() == 3 && f_sgcn.rank() == 3, "dynamic_gcn: expected batched inputs");
  return leaky_relu(matmul(matmul(adjacency, f_sgcn), w_dynamic), 0.2);
}

inline Tensor emotion_distribution(const Tensor& f_dgcn, double lambda) {
  return pooled_distribution(f_dgcn, lambda);
}

}  // namespace styledl
