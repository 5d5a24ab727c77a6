#pragma once

#include <cmath>
#include <vector>

#include "procst/core/graph.hpp"

namespace procst {

template <typename T>
inline double grad_norm(const std::vector<Var<T>>& grads) {
  double acc = 0;
  for (const auto& g : grads)
    for (std::size_t i = 0; i < g->value.numel(); ++i)
      acc += static_cast<double>(g->value[i]) * g->value[i];
  return std::sqrt(acc);
}

template <typename T>
struct Sgd {
  double lr;

  explicit Sgd(double lr_) : lr(lr_) {
    if (lr_ <= 0) throw ConfigError("sgd: lr must be positive");
  }

  void step(const std::vector<Var<T>>& params, const std::vector<Var<T>>& grads) {
    if (params.size() != grads.size()) throw ArgError("sgd: params/grads size mismatch");
    for (std::size_t p = 0; p < params.size(); ++p) {
      auto& val = params[p]->value;
      const auto& g = grads[p]->value;
      check_same_shape(val, g, "sgd");
      for (std::size_t i = 0; i < val.numel(); ++i)
        val[i] -= static_cast<T>(lr * static_cast<double>(g[i]));
    }
  }
};

/// Adam with the GAN-friendly first moment; state is lazily bound to the
/// first param list it sees and stays with it.
template <typename T>
struct Adam {
  double lr, beta1, beta2, eps;
  long t = 0;
  std::vector<Tensor<double>> m, v;

  explicit Adam(double lr_, double beta1_ = 0.5, double beta2_ = 0.999, double eps_ = 1e-8)
      : lr(lr_), beta1(beta1_), beta2(beta2_), eps(eps_) {
    if (lr_ <= 0) throw ConfigError("adam: lr must be positive");
  }

  void step(const std::vector<Var<T>>& params, const std::vector<Var<T>>& grads) {
    if (params.size() != grads.size()) throw ArgError("adam: params/grads size mismatch");
    if (m.empty()) {
      for (const auto& p : params) {
        m.emplace_back(p->value.shape(), 0.0);
        v.emplace_back(p->value.shape(), 0.0);
      }
    }
    if (m.size() != params.size()) throw StateError("adam: bound to a different parameter set");
    ++t;
    double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t p = 0; p < params.size(); ++p) {
      auto& val = params[p]->value;
      const auto& g = grads[p]->value;
      check_same_shape(val, g, "adam");
      if (m[p].shape() != val.shape()) throw StateError("adam: parameter shape changed");
      for (std::size_t i = 0; i < val.numel(); ++i) {
        double gi = static_cast<double>(g[i]);
        m[p][i] = beta1 * m[p][i] + (1.0 - beta1) * gi;
        v[p][i] = beta2 * v[p][i] + (1.0 - beta2) * gi * gi;
        val[i] -= static_cast<T>(lr * (m[p][i] / bc1) / (std::sqrt(v[p][i] / bc2) + eps));
      }
    }
  }
};

}  // namespace procst
