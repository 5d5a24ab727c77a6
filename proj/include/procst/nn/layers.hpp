#pragma once

#include <string>
#include <vector>

#include "procst/core/ops.hpp"
#include "procst/core/rng.hpp"

namespace procst {

template <typename T>
inline Tensor<T> gaussian_init(Rng& rng, const std::vector<int>& shape, double std) {
  Tensor<T> t(shape);
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.normal() * std);
  return t;
}

template <typename T>
struct Conv2dLayer {
  int ci = 0, co = 0, k = 3, stride = 1, pad = 1;
  Var<T> w, b;

  Conv2dLayer() = default;
  Conv2dLayer(int ci_, int co_, int k_, int stride_, int pad_, Rng& rng)
      : ci(ci_), co(co_), k(k_), stride(stride_), pad(pad_) {
    double std = std::sqrt(2.0 / (static_cast<double>(ci) * k * k));
    w = make_leaf<T>(gaussian_init<T>(rng, {co, ci, k, k}, std));
    b = make_leaf<T>(Tensor<T>({co}, T(0)));
  }

  Var<T> forward(const Var<T>& x) const { return add_ch(conv2d(x, w, stride, pad), b); }

  template <typename F>
  void visit(const std::string& prefix, F&& fn) {
    fn(prefix + ".w", w);
    fn(prefix + ".b", b);
  }
};

enum class NormMode { batch, group };

inline const char* norm_mode_name(NormMode m) { return m == NormMode::batch ? "batch" : "group"; }

template <typename T>
struct NormLayer {
  NormMode mode = NormMode::group;
  int channels = 0;
  int groups = 8;
  T eps = T(1e-5);
  T momentum = T(0.1);
  Var<T> gamma, beta;
  Tensor<T> running_mean, running_var;  // batch mode inference statistics

  NormLayer() = default;
  NormLayer(NormMode mode_, int channels_) : mode(mode_), channels(channels_) {
    if (mode == NormMode::group && channels % groups != 0)
      throw ConfigError("group norm: width " + std::to_string(channels) +
                        " not divisible by " + std::to_string(groups));
    gamma = make_leaf<T>(Tensor<T>({channels}, T(1)));
    beta = make_leaf<T>(Tensor<T>({channels}, T(0)));
    running_mean = Tensor<T>({channels}, T(0));
    running_var = Tensor<T>({channels}, T(1));
  }

  Var<T> forward(const Var<T>& x, bool training) {
    int b = x->value.dim(0), c = x->value.dim(1), h = x->value.dim(2), w = x->value.dim(3);
    if (c != channels) throw ShapeError("norm: channel mismatch");
    Var<T> y;
    if (mode == NormMode::group) {
      int m = (c / groups) * h * w;
      auto mean = scale(group_sum(x, groups), T(1) / static_cast<T>(m));
      auto cent = group_center(x, mean, groups);
      auto var = scale(group_sumsq(cent, groups), T(1) / static_cast<T>(m));
      auto inv = pow_scalar(add_scalar(var, eps), T(-0.5));
      y = group_scale(cent, inv, groups);
    } else if (training) {
      T n = static_cast<T>(b) * h * w;
      auto mean = scale(channel_sum(x), T(1) / n);
      auto cent = sub(x, channel_broadcast(mean, b, h, w));
      auto var = scale(channel_sum(square(cent)), T(1) / n);
      auto inv = pow_scalar(add_scalar(var, eps), T(-0.5));
      y = mul(cent, channel_broadcast(inv, b, h, w));
      for (int j = 0; j < c; ++j) {
        auto js = static_cast<std::size_t>(j);
        running_mean[js] = (T(1) - momentum) * running_mean[js] + momentum * mean->value[js];
        running_var[js] = (T(1) - momentum) * running_var[js] + momentum * var->value[js];
      }
    } else {
      Tensor<T> inv_t({c});
      for (int j = 0; j < c; ++j)
        inv_t[static_cast<std::size_t>(j)] =
            T(1) / std::sqrt(running_var[static_cast<std::size_t>(j)] + eps);
      auto cent = sub(x, channel_broadcast(make_const<T>(running_mean), b, h, w));
      y = mul(cent, channel_broadcast(make_const<T>(std::move(inv_t)), b, h, w));
    }
    return affine_ch(y, gamma, beta);
  }

  template <typename F>
  void visit(const std::string& prefix, F&& fn) {
    fn(prefix + ".gamma", gamma);
    fn(prefix + ".beta", beta);
  }
};

/// conv->norm->leaky blocks followed by one linear conv; the common body of
/// generators and discriminators.
template <typename T>
struct ConvStack {
  std::vector<Conv2dLayer<T>> convs;
  std::vector<NormLayer<T>> norms;
  T slope = T(0.2);

  ConvStack() = default;
  /// depth counts every conv including the linear output layer.
  ConvStack(int in_ch, int width, int out_ch, int depth, int pad, NormMode norm, Rng& rng) {
    if (depth < 2) throw ConfigError("conv stack: depth must be >= 2");
    for (int i = 0; i < depth; ++i) {
      int ci = i == 0 ? in_ch : width;
      int co = i == depth - 1 ? out_ch : width;
      convs.emplace_back(ci, co, 3, 1, pad, rng);
      if (i != depth - 1) norms.emplace_back(norm, co);
    }
  }

  Var<T> forward(Var<T> x, bool training) {
    for (std::size_t i = 0; i + 1 < convs.size(); ++i)
      x = leaky_relu(norms[i].forward(convs[i].forward(x), training), slope);
    return convs.back().forward(x);
  }

  template <typename F>
  void visit(const std::string& prefix, F&& fn) {
    for (std::size_t i = 0; i < convs.size(); ++i) {
      convs[i].visit(prefix + ".conv" + std::to_string(i), fn);
      if (i < norms.size()) norms[i].visit(prefix + ".norm" + std::to_string(i), fn);
    }
  }
};

template <typename T, typename Net>
inline std::vector<Var<T>> collect_params(Net& net) {
  std::vector<Var<T>> out;
  net.visit("", [&](const std::string&, Var<T>& v) { out.push_back(v); });
  return out;
}

template <typename T, typename Net>
inline void set_trainable(Net& net, bool trainable) {
  net.visit("", [&](const std::string&, Var<T>& v) { v->requires_grad = trainable; });
}

/// Deep copy: fresh leaves with the same values and trainability, so the
/// copy trains independently of the original.
template <typename T, typename Net>
inline Net cloned(const Net& src) {
  Net dst = src;
  dst.visit("", [](const std::string&, Var<T>& v) {
    auto leaf = make_leaf<T>(Tensor<T>(v->value));
    leaf->requires_grad = v->requires_grad;
    v = leaf;
  });
  return dst;
}

}  // namespace procst
