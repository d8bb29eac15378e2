#pragma once

#include <string>

#include "styledl/optim.hpp"

namespace styledl {

/// k x k convolution with bias.
struct Conv {
  Tensor weight;
  Tensor bias;
  std::size_t stride = 1;
  std::size_t pad = 0;

  static Conv make(ParamStore& ps, const std::string& prefix, std::size_t cin, std::size_t cout, std::size_t k,
                   std::size_t stride, std::size_t pad, Rng& rng) {
    Conv c;
    c.weight = ps.add(prefix + ".weight", kaiming_normal({cout, cin, k, k}, cin * k * k, rng));
    c.bias = ps.add(prefix + ".bias", Tensor::zeros({cout}));
    c.stride = stride;
    c.pad = pad;
    return c;
  }

  Tensor operator()(const Tensor& x) const { return conv2d(x, weight, bias, stride, pad); }
};

/// conv -> layer norm -> ReLU
struct ConvLnRelu {
  Conv conv;
  Tensor gamma;
  Tensor beta;

  static ConvLnRelu make(ParamStore& ps, const std::string& prefix, std::size_t cin, std::size_t cout,
                         std::size_t stride, Rng& rng) {
    ConvLnRelu u;
    u.conv = Conv::make(ps, prefix + ".conv", cin, cout, 3, stride, 1, rng);
    u.gamma = ps.add(prefix + ".ln.gamma", Tensor::full({cout}, 1.0));
    u.beta = ps.add(prefix + ".ln.beta", Tensor::zeros({cout}));
    return u;
  }

  Tensor operator()(const Tensor& x) const { return relu(layer_norm(conv(x), gamma, beta)); }
};

/// x[N,in] -> x W + b
struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]

  static Linear make(ParamStore& ps, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng) {
    Linear l;
    l.weight = ps.add(prefix + ".weight", kaiming_normal({in, out}, in, rng));
    l.bias = ps.add(prefix + ".bias", Tensor::zeros({out}));
    return l;
  }

  Tensor operator()(const Tensor& x) const { return add_bias(matmul(x, weight), bias, -1); }
};

/// Overwrites a tensor's values in place (tests and checkpoint loading).
inline void assign(Tensor& t, std::span<const double> values) {
  require(values.size() == t.numel(), "assign: size mismatch");
  std::copy(values.begin(), values.end(), t.data_mut().begin());
}

inline void fill(Tensor& t, double v) { std::fill(t.data_mut().begin(), t.data_mut().end(), v); }

/// Sets a square 1x1 conv to the identity map.
inline void set_identity_1x1(Conv& c) {
  std::size_t n = c.weight.dim(0);
  require(c.weight.dim(1) == n && c.weight.dim(2) == 1, "set_identity_1x1: weight must be [C,C,1,1]");
  fill(c.weight, 0.0);
  for (std::size_t i = 0; i < n; ++i) c.weight.data_mut()[i * n + i] = 1.0;
  fill(c.bias, 0.0);
}

}  // namespace styledl
