#pragma once

#include <array>
#include <cmath>

#include "procst/core/conv_kernels.hpp"
#include "procst/core/graph.hpp"
#include "procst/core/resample.hpp"

namespace procst {

namespace detail {

template <typename T>
inline Var<T> make_node(Tensor<T> value, std::vector<Var<T>> parents, const char* op) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->op = op;
  for (const auto& p : parents)
    if (p->requires_grad) {
      n->requires_grad = true;
      break;
    }
  if (n->requires_grad) n->parents = std::move(parents);
  return n;
}

}  // namespace detail

// ---- elementwise arithmetic ------------------------------------------------

template <typename T>
inline Var<T> add(const Var<T>& a, const Var<T>& b) {
  check_same_shape(a->value, b->value, "add");
  auto v = Tensor<T>::uninit(a->value.shape());
  const T* x = a->value.data();
  const T* y = b->value.data();
  T* o = v.data();
  for (std::size_t i = 0; i < v.numel(); ++i) o[i] = x[i] + y[i];
  auto n = detail::make_node<T>(std::move(v), {a, b}, "add");
  if (n->requires_grad)
    n->backward = [](const Var<T>& g, const std::vector<char>&) {
      return std::vector<Var<T>>{g, g};
    };
  return n;
}

template <typename T>
inline Var<T> neg(const Var<T>& a) {
  auto v = Tensor<T>::uninit(a->value.shape());
  for (std::size_t i = 0; i < v.numel(); ++i) v[i] = -a->value[i];
  auto n = detail::make_node<T>(std::move(v), {a}, "neg");
  if (n->requires_grad)
    n->backward = [](const Var<T>& g, const std::vector<char>&) {
      return std::vector<Var<T>>{neg(g)};
    };
  return n;
}

template <typename T>
inline Var<T> sub(const Var<T>& a, const Var<T>& b) {
  check_same_shape(a->value, b->value, "sub");
  auto v = Tensor<T>::uninit(a->value.shape());
  const T* x = a->value.data();
  const T* y = b->value.data();
  T* o = v.data();
  for (std::size_t i = 0; i < v.numel(); ++i) o[i] = x[i] - y[i];
  auto n = detail::make_node<T>(std::move(v), {a, b}, "sub");
  if (n->requires_grad)
    n->backward = [](const Var<T>& g, const std::vector<char>& need) {
      std::vector<Var<T>> out(2);
      if (need[0]) out[0] = g;
      if (need[1]) out[1] = neg(g);
      return out;
    };
  return n;
}

template <typename T>
inline Var<T> mul(const Var<T>& a, const Var<T>& b) {
  check_same_shape(a->value, b->value, "mul");
  auto v = Tensor<T>::uninit(a->value.shape());
  const T* x = a->value.data();
  const T* y = b->value.data();
  T* o = v.data();
  for (std::size_t i = 0; i < v.numel(); ++i) o[i] = x[i] * y[i];
  auto n = detail::make_node<T>(std::move(v), {a, b}, "mul");
  if (n->requires_grad)
    n->backward = [a, b](const Var<T>& g, const std::vector<char>& need) {
      std::vector<Var<T>> out(2);
      if (need[0]) out[0] = mul(g, b);
      if (need[1]) out[1] = mul(g, a);
      return out;
    };
  return n;
}

template <typename T>
inline Var<T> scale(const Var<T>& a, T c) {
  auto v = Tensor<T>::uninit(a->value.shape());
  const T* x = a->value.data();
  T* o = v.data();
  for (std::size_t i = 0; i < v.numel(); ++i) o[i] = c * x[i];
  auto n = detail::make_node<T>(std::move(v), {a}, "scale");
  if (n->requires_grad)
    n->backward = [c](const Var<T>& g, const std::vector<char>&) {
      return std::vector<Var<T>>{scale(g, c)};
    };
  return n;
}

template <typename T>
inline Var<T> add_scalar(const Var<T>& a, T c) {
  auto v = Tensor<T>::uninit(a->value.shape());
  for (std::size_t i = 0; i < v.numel(); ++i) v[i] = a->value[i] + c;
  auto n = detail::make_node<T>(std::move(v), {a}, "add_scalar");
  if (n->requires_grad)
    n->backward = [](const Var<T>& g, const std::vector<char>&) {
      return std::vector<Var<T>>{g};
    };
  return n;
}

template <typename T>
inline Var<T> pow_scalar(const Var<T>& a, T p) {
  auto v = Tensor<T>::uninit(a->value.shape());
  for (std::size_t i = 0; i < v.numel(); ++i) v[i] = std::pow(a->value[i], p);
  auto n = detail::make_node<T>(std::move(v), {a}, "pow");
  if (n->requires_grad)
    n->backward = [a, p](const Var<T>& g, const std::vector<char>&) {
      return std::vector<Var<T>>{mul(g, scale(pow_scalar(a, p - T(1)), p))};
    };
  return n;
}

template <typename T>
inline Var<T> square(const Var<T>& a) {
  auto v = Tensor<T>::uninit(a->value.shape());
  const T* x = a->value.data();
  T* o = v.data();
  for (std::size_t i = 0; i < v.numel(); ++i) o[i] = x[i] * x[i];
  auto n = detail::make_node<T>(std::move(v), {a}, "square");
  if (n->requires_grad)
    n->backward = [a](const Var<T>& g, const std::vector<char>&) {
      return std::vector<Var<T>>{scale(mul(g, a), T(2))};
    };
  return n;
}

template <typename T>
inline Var<T> sqrt_v(const Var<T>& a) {
  return pow_scalar(a, T(0.5));
}

template <typename T>
inline Var<T> exp_v(const Var<T>& a) {
  auto v = Tensor<T>::uninit(a->value.shape());
  for (std::size_t i = 0; i < v.numel(); ++i) v[i] = std::exp(a->value[i]);
  auto n = detail::make_node<T>(std::move(v), {a}, "exp");
  if (n->requires_grad)
    n->backward = [a](const Var<T>& g, const std::vector<char>&) {
      return std::vector<Var<T>>{mul(g, exp_v(a))};
    };
  return n;
}

template <typename T>
inline Var<T> log_v(const Var<T>& a) {
  auto v = Tensor<T>::uninit(a->value.shape());
  for (std::size_t i = 0; i < v.numel(); ++i) v[i] = std::log(a->value[i]);
  auto n = detail::make_node<T>(std::move(v), {a}, "log");
  if (n->requires_grad)
    n->backward = [a](const Var<T>& g, const std::vector<char>&) {
      return std::vector<Var<T>>{mul(g, pow_scalar(a, T(-1)))};
    };
  return n;
}

template <typename T>
inline Var<T> tanh_v(const Var<T>& a) {
  auto v = Tensor<T>::uninit(a->value.shape());
  for (std::size_t i = 0; i < v.numel(); ++i) v[i] = std::tanh(a->value[i]);
  auto n = detail::make_node<T>(std::move(v), {a}, "tanh");
  if (n->requires_grad)
    n->backward = [a](const Var<T>& g, const std::vector<char>&) {
      auto t = tanh_v(a);
      return std::vector<Var<T>>{mul(g, add_scalar(neg(square(t)), T(1)))};
    };
  return n;
}

// Piecewise-linear activations: the derivative mask is a constant of the
// input values, which is the a.e.-correct second-order behaviour.

/// g masked by leaky_relu's derivative at ref. ref is not a parent: the mask
/// is a constant of ref's values, exactly like a materialized mask tensor.
template <typename T>
inline Var<T> leaky_mask_mul(const Var<T>& ref, const Var<T>& g, T slope) {
  check_same_shape(ref->value, g->value, "leaky_mask_mul");
  auto v = Tensor<T>::uninit(g->value.shape());
  const T* r = ref->value.data();
  const T* x = g->value.data();
  T* y = v.data();
  for (std::size_t i = 0; i < v.numel(); ++i) y[i] = r[i] > T(0) ? x[i] : slope * x[i];
  auto n = detail::make_node<T>(std::move(v), {g}, "leaky_mask_mul");
  if (n->requires_grad)
    n->backward = [ref, slope](const Var<T>& gg, const std::vector<char>&) {
      return std::vector<Var<T>>{leaky_mask_mul(ref, gg, slope)};
    };
  return n;
}

template <typename T>
inline Var<T> leaky_relu(const Var<T>& a, T slope) {
  auto v = Tensor<T>::uninit(a->value.shape());
  const T* x = a->value.data();
  T* y = v.data();
  for (std::size_t i = 0; i < v.numel(); ++i) y[i] = x[i] > T(0) ? x[i] : slope * x[i];
  auto n = detail::make_node<T>(std::move(v), {a}, "leaky_relu");
  if (n->requires_grad)
    n->backward = [a, slope](const Var<T>& g, const std::vector<char>&) {
      return std::vector<Var<T>>{leaky_mask_mul(a, g, slope)};
    };
  return n;
}

template <typename T>
inline Var<T> clamp_min(const Var<T>& a, T lo) {
  auto v = Tensor<T>::uninit(a->value.shape());
  for (std::size_t i = 0; i < v.numel(); ++i) v[i] = a->value[i] > lo ? a->value[i] : lo;
  auto n = detail::make_node<T>(std::move(v), {a}, "clamp_min");
  if (n->requires_grad) {
    auto mask = Tensor<T>::uninit(a->value.shape());
    for (std::size_t i = 0; i < mask.numel(); ++i) mask[i] = a->value[i] > lo ? T(1) : T(0);
    auto mvar = make_const<T>(std::move(mask));
    n->backward = [mvar](const Var<T>& g, const std::vector<char>&) {
      return std::vector<Var<T>>{mul(g, mvar)};
    };
  }
  return n;
}

template <typename T>
inline Var<T> abs_v(const Var<T>& a) {
  auto v = Tensor<T>::uninit(a->value.shape());
  for (std::size_t i = 0; i < v.numel(); ++i) v[i] = std::abs(a->value[i]);
  auto n = detail::make_node<T>(std::move(v), {a}, "abs");
  if (n->requires_grad) {
    auto sign = Tensor<T>::uninit(a->value.shape());
    for (std::size_t i = 0; i < sign.numel(); ++i)
      sign[i] = a->value[i] > T(0) ? T(1) : (a->value[i] < T(0) ? T(-1) : T(0));
    auto svar = make_const<T>(std::move(sign));
    n->backward = [svar](const Var<T>& g, const std::vector<char>&) {
      return std::vector<Var<T>>{mul(g, svar)};
    };
  }
  return n;
}

// ---- reductions and broadcasts ----------------------------------------------

template <typename T>
inline Var<T> broadcast_all(const Var<T>& a, const std::vector<int>& shape);

template <typename T>
inline Var<T> sum_all(const Var<T>& a) {
  T acc(0);
  for (std::size_t i = 0; i < a->value.numel(); ++i) acc += a->value[i];
  auto n = detail::make_node<T>(Tensor<T>::scalar(acc), {a}, "sum_all");
  if (n->requires_grad) {
    auto shape = a->value.shape();
    n->backward = [shape](const Var<T>& g, const std::vector<char>&) {
      return std::vector<Var<T>>{broadcast_all(g, shape)};
    };
  }
  return n;
}

template <typename T>
inline Var<T> broadcast_all(const Var<T>& a, const std::vector<int>& shape) {
  if (a->value.numel() != 1) throw ShapeError("broadcast_all: scalar input required");
  Tensor<T> v(shape, a->value[0]);
  auto n = detail::make_node<T>(std::move(v), {a}, "broadcast_all");
  if (n->requires_grad)
    n->backward = [](const Var<T>& g, const std::vector<char>&) {
      return std::vector<Var<T>>{sum_all(g)};
    };
  return n;
}

template <typename T>
inline Var<T> mean_all(const Var<T>& a) {
  return scale(sum_all(a), T(1) / static_cast<T>(a->value.numel()));
}

template <typename T>
inline Var<T> broadcast_last(const Var<T>& a, int m);

/// [..., M] -> [..., 1]
template <typename T>
inline Var<T> sum_last(const Var<T>& a) {
  auto shape = a->value.shape();
  int m = shape.back();
  std::size_t outer = a->value.numel() / static_cast<std::size_t>(m);
  auto oshape = shape;
  oshape.back() = 1;
  auto v = Tensor<T>::uninit(oshape);
  const T* src = a->value.data();
  for (std::size_t o = 0; o < outer; ++o) {
    T acc(0);
    for (int j = 0; j < m; ++j) acc += src[o * m + j];
    v[o] = acc;
  }
  auto n = detail::make_node<T>(std::move(v), {a}, "sum_last");
  if (n->requires_grad)
    n->backward = [m](const Var<T>& g, const std::vector<char>&) {
      return std::vector<Var<T>>{broadcast_last(g, m)};
    };
  return n;
}

/// [..., 1] -> [..., M]
template <typename T>
inline Var<T> broadcast_last(const Var<T>& a, int m) {
  auto shape = a->value.shape();
  if (shape.back() != 1) throw ShapeError("broadcast_last: trailing dim must be 1");
  auto oshape = shape;
  oshape.back() = m;
  auto v = Tensor<T>::uninit(oshape);
  std::size_t outer = a->value.numel();
  for (std::size_t o = 0; o < outer; ++o)
    for (int j = 0; j < m; ++j) v[o * static_cast<std::size_t>(m) + j] = a->value[o];
  auto n = detail::make_node<T>(std::move(v), {a}, "broadcast_last");
  if (n->requires_grad)
    n->backward = [](const Var<T>& g, const std::vector<char>&) {
      return std::vector<Var<T>>{sum_last(g)};
    };
  return n;
}

template <typename T>
inline Var<T> channel_broadcast(const Var<T>& a, int b, int h, int w);

/// [B,C,H,W] -> [C]
template <typename T>
inline Var<T> channel_sum(const Var<T>& a) {
  if (a->value.rank() != 4) throw ShapeError("channel_sum: rank-4 input required");
  int b = a->value.dim(0), c = a->value.dim(1), h = a->value.dim(2), w = a->value.dim(3);
  Tensor<T> v({c});
  std::size_t hw = static_cast<std::size_t>(h) * w;
  for (int i = 0; i < b; ++i)
    for (int j = 0; j < c; ++j) {
      const T* p = a->value.data() + (static_cast<std::size_t>(i) * c + j) * hw;
      T acc(0);
      for (std::size_t k = 0; k < hw; ++k) acc += p[k];
      v[static_cast<std::size_t>(j)] += acc;
    }
  auto n = detail::make_node<T>(std::move(v), {a}, "channel_sum");
  if (n->requires_grad)
    n->backward = [b, h, w](const Var<T>& g, const std::vector<char>&) {
      return std::vector<Var<T>>{channel_broadcast(g, b, h, w)};
    };
  return n;
}

/// [C] -> [B,C,H,W]
template <typename T>
inline Var<T> channel_broadcast(const Var<T>& a, int b, int h, int w) {
  if (a->value.rank() != 1) throw ShapeError("channel_broadcast: rank-1 input required");
  int c = a->value.dim(0);
  auto v = Tensor<T>::uninit({b, c, h, w});
  std::size_t hw = static_cast<std::size_t>(h) * w;
  for (int i = 0; i < b; ++i)
    for (int j = 0; j < c; ++j) {
      T* p = v.data() + (static_cast<std::size_t>(i) * c + j) * hw;
      for (std::size_t k = 0; k < hw; ++k) p[k] = a->value[static_cast<std::size_t>(j)];
    }
  auto n = detail::make_node<T>(std::move(v), {a}, "channel_broadcast");
  if (n->requires_grad)
    n->backward = [](const Var<T>& g, const std::vector<char>&) {
      return std::vector<Var<T>>{channel_sum(g)};
    };
  return n;
}

// ---- fused channel/group primitives -------------------------------------------
// Norm layers are built from these instead of reshape/broadcast chains; each
// backward is itself graph ops, so every rule stays differentiable to any
// order (the critic's gradient penalty needs second derivatives through them).

namespace detail {

template <typename T>
inline std::size_t group_rows(const Tensor<T>& x, int groups, const char* where) {
  if (x.rank() != 4) throw ShapeError(std::string(where) + ": rank-4 input required");
  if (groups < 1 || x.dim(1) % groups != 0)
    throw ShapeError(std::string(where) + ": channels not divisible by groups");
  return static_cast<std::size_t>(x.dim(0)) * groups;
}

}  // namespace detail

template <typename T>
inline Var<T> group_bcast(const Var<T>& s, const std::vector<int>& shape, int groups);

/// [B,C,H,W] -> [B*G], summing each group's (C/G)*H*W block.
template <typename T>
inline Var<T> group_sum(const Var<T>& a, int groups) {
  std::size_t rows = detail::group_rows(a->value, groups, "group_sum");
  std::size_t m = a->value.numel() / rows;
  auto v = Tensor<T>::uninit({static_cast<int>(rows)});
  const T* x = a->value.data();
  for (std::size_t r = 0; r < rows; ++r) {
    T acc(0);
    for (std::size_t j = 0; j < m; ++j) acc += x[r * m + j];
    v[r] = acc;
  }
  auto n = detail::make_node<T>(std::move(v), {a}, "group_sum");
  if (n->requires_grad) {
    auto shape = a->value.shape();
    n->backward = [shape, groups](const Var<T>& g, const std::vector<char>&) {
      return std::vector<Var<T>>{group_bcast(g, shape, groups)};
    };
  }
  return n;
}

/// [B*G] -> [B,C,H,W], each group filled with its statistic.
template <typename T>
inline Var<T> group_bcast(const Var<T>& s, const std::vector<int>& shape, int groups) {
  auto v = Tensor<T>::uninit(shape);
  std::size_t rows = detail::group_rows(v, groups, "group_bcast");
  if (s->value.numel() != rows) throw ShapeError("group_bcast: stat length mismatch");
  std::size_t m = v.numel() / rows;
  T* y = v.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < m; ++j) y[r * m + j] = s->value[r];
  auto n = detail::make_node<T>(std::move(v), {s}, "group_bcast");
  if (n->requires_grad)
    n->backward = [groups](const Var<T>& g, const std::vector<char>&) {
      return std::vector<Var<T>>{group_sum(g, groups)};
    };
  return n;
}

/// x - s broadcast over each group.
template <typename T>
inline Var<T> group_center(const Var<T>& a, const Var<T>& s, int groups) {
  std::size_t rows = detail::group_rows(a->value, groups, "group_center");
  if (s->value.numel() != rows) throw ShapeError("group_center: stat length mismatch");
  std::size_t m = a->value.numel() / rows;
  auto v = Tensor<T>::uninit(a->value.shape());
  const T* x = a->value.data();
  T* y = v.data();
  for (std::size_t r = 0; r < rows; ++r) {
    T c = s->value[r];
    for (std::size_t j = 0; j < m; ++j) y[r * m + j] = x[r * m + j] - c;
  }
  auto n = detail::make_node<T>(std::move(v), {a, s}, "group_center");
  if (n->requires_grad)
    n->backward = [groups](const Var<T>& g, const std::vector<char>& need) {
      std::vector<Var<T>> out(2);
      if (need[0]) out[0] = g;
      if (need[1]) out[1] = neg(group_sum(g, groups));
      return out;
    };
  return n;
}

template <typename T>
inline Var<T> group_dot(const Var<T>& a, const Var<T>& b, int groups);

/// x * s broadcast over each group.
template <typename T>
inline Var<T> group_scale(const Var<T>& a, const Var<T>& s, int groups) {
  std::size_t rows = detail::group_rows(a->value, groups, "group_scale");
  if (s->value.numel() != rows) throw ShapeError("group_scale: stat length mismatch");
  std::size_t m = a->value.numel() / rows;
  auto v = Tensor<T>::uninit(a->value.shape());
  const T* x = a->value.data();
  T* y = v.data();
  for (std::size_t r = 0; r < rows; ++r) {
    T c = s->value[r];
    for (std::size_t j = 0; j < m; ++j) y[r * m + j] = x[r * m + j] * c;
  }
  auto n = detail::make_node<T>(std::move(v), {a, s}, "group_scale");
  if (n->requires_grad)
    n->backward = [a, s, groups](const Var<T>& g, const std::vector<char>& need) {
      std::vector<Var<T>> out(2);
      if (need[0]) out[0] = group_scale(g, s, groups);
      if (need[1]) out[1] = group_dot(g, a, groups);
      return out;
    };
  return n;
}

/// Per-group inner product -> [B*G].
template <typename T>
inline Var<T> group_dot(const Var<T>& a, const Var<T>& b, int groups) {
  check_same_shape(a->value, b->value, "group_dot");
  std::size_t rows = detail::group_rows(a->value, groups, "group_dot");
  std::size_t m = a->value.numel() / rows;
  auto v = Tensor<T>::uninit({static_cast<int>(rows)});
  const T* x = a->value.data();
  const T* y = b->value.data();
  for (std::size_t r = 0; r < rows; ++r) {
    T acc(0);
    for (std::size_t j = 0; j < m; ++j) acc += x[r * m + j] * y[r * m + j];
    v[r] = acc;
  }
  auto n = detail::make_node<T>(std::move(v), {a, b}, "group_dot");
  if (n->requires_grad)
    n->backward = [a, b, groups](const Var<T>& g, const std::vector<char>& need) {
      std::vector<Var<T>> out(2);
      if (need[0]) out[0] = group_scale(b, g, groups);
      if (need[1]) out[1] = group_scale(a, g, groups);
      return out;
    };
  return n;
}

/// Per-group sum of squares -> [B*G].
template <typename T>
inline Var<T> group_sumsq(const Var<T>& a, int groups) {
  std::size_t rows = detail::group_rows(a->value, groups, "group_sumsq");
  std::size_t m = a->value.numel() / rows;
  auto v = Tensor<T>::uninit({static_cast<int>(rows)});
  const T* x = a->value.data();
  for (std::size_t r = 0; r < rows; ++r) {
    T acc(0);
    for (std::size_t j = 0; j < m; ++j) acc += x[r * m + j] * x[r * m + j];
    v[r] = acc;
  }
  auto n = detail::make_node<T>(std::move(v), {a}, "group_sumsq");
  if (n->requires_grad)
    n->backward = [a, groups](const Var<T>& g, const std::vector<char>&) {
      return std::vector<Var<T>>{group_scale(a, scale(g, T(2)), groups)};
    };
  return n;
}

template <typename T>
inline Var<T> mul_ch(const Var<T>& a, const Var<T>& s);
template <typename T>
inline Var<T> channel_dot(const Var<T>& a, const Var<T>& b);

/// x + b[C] per channel; the conv bias.
template <typename T>
inline Var<T> add_ch(const Var<T>& a, const Var<T>& bias) {
  if (a->value.rank() != 4 || bias->value.rank() != 1 || bias->value.dim(0) != a->value.dim(1))
    throw ShapeError("add_ch: [B,C,H,W] plus [C] required");
  int b = a->value.dim(0), c = a->value.dim(1);
  std::size_t hw = a->value.numel() / (static_cast<std::size_t>(b) * c);
  auto v = Tensor<T>::uninit(a->value.shape());
  const T* x = a->value.data();
  T* y = v.data();
  for (int i = 0; i < b; ++i)
    for (int j = 0; j < c; ++j) {
      std::size_t at = (static_cast<std::size_t>(i) * c + j) * hw;
      T bv = bias->value[static_cast<std::size_t>(j)];
      for (std::size_t k = 0; k < hw; ++k) y[at + k] = x[at + k] + bv;
    }
  auto n = detail::make_node<T>(std::move(v), {a, bias}, "add_ch");
  if (n->requires_grad)
    n->backward = [](const Var<T>& g, const std::vector<char>& need) {
      std::vector<Var<T>> out(2);
      if (need[0]) out[0] = g;
      if (need[1]) out[1] = channel_sum(g);
      return out;
    };
  return n;
}

/// x * s[C] per channel.
template <typename T>
inline Var<T> mul_ch(const Var<T>& a, const Var<T>& s) {
  if (a->value.rank() != 4 || s->value.rank() != 1 || s->value.dim(0) != a->value.dim(1))
    throw ShapeError("mul_ch: [B,C,H,W] times [C] required");
  int b = a->value.dim(0), c = a->value.dim(1);
  std::size_t hw = a->value.numel() / (static_cast<std::size_t>(b) * c);
  auto v = Tensor<T>::uninit(a->value.shape());
  const T* x = a->value.data();
  T* y = v.data();
  for (int i = 0; i < b; ++i)
    for (int j = 0; j < c; ++j) {
      std::size_t at = (static_cast<std::size_t>(i) * c + j) * hw;
      T sv = s->value[static_cast<std::size_t>(j)];
      for (std::size_t k = 0; k < hw; ++k) y[at + k] = x[at + k] * sv;
    }
  auto n = detail::make_node<T>(std::move(v), {a, s}, "mul_ch");
  if (n->requires_grad)
    n->backward = [a, s](const Var<T>& g, const std::vector<char>& need) {
      std::vector<Var<T>> out(2);
      if (need[0]) out[0] = mul_ch(g, s);
      if (need[1]) out[1] = channel_dot(g, a);
      return out;
    };
  return n;
}

/// Per-channel inner product -> [C], summed over batch and space.
template <typename T>
inline Var<T> channel_dot(const Var<T>& a, const Var<T>& b) {
  check_same_shape(a->value, b->value, "channel_dot");
  if (a->value.rank() != 4) throw ShapeError("channel_dot: rank-4 required");
  int nb = a->value.dim(0), c = a->value.dim(1);
  std::size_t hw = a->value.numel() / (static_cast<std::size_t>(nb) * c);
  Tensor<T> v({c});
  const T* x = a->value.data();
  const T* y = b->value.data();
  for (int i = 0; i < nb; ++i)
    for (int j = 0; j < c; ++j) {
      std::size_t at = (static_cast<std::size_t>(i) * c + j) * hw;
      T acc(0);
      for (std::size_t k = 0; k < hw; ++k) acc += x[at + k] * y[at + k];
      v[static_cast<std::size_t>(j)] += acc;
    }
  auto n = detail::make_node<T>(std::move(v), {a, b}, "channel_dot");
  if (n->requires_grad)
    n->backward = [a, b](const Var<T>& g, const std::vector<char>& need) {
      std::vector<Var<T>> out(2);
      if (need[0]) out[0] = mul_ch(b, g);
      if (need[1]) out[1] = mul_ch(a, g);
      return out;
    };
  return n;
}

/// x * gamma[C] + beta[C]; the norm affine tail in one pass.
template <typename T>
inline Var<T> affine_ch(const Var<T>& a, const Var<T>& gamma, const Var<T>& beta) {
  if (a->value.rank() != 4 || gamma->value.rank() != 1 || beta->value.rank() != 1 ||
      gamma->value.dim(0) != a->value.dim(1) || beta->value.dim(0) != a->value.dim(1))
    throw ShapeError("affine_ch: [B,C,H,W] with [C] scale and shift required");
  int b = a->value.dim(0), c = a->value.dim(1);
  std::size_t hw = a->value.numel() / (static_cast<std::size_t>(b) * c);
  auto v = Tensor<T>::uninit(a->value.shape());
  const T* x = a->value.data();
  T* y = v.data();
  for (int i = 0; i < b; ++i)
    for (int j = 0; j < c; ++j) {
      std::size_t at = (static_cast<std::size_t>(i) * c + j) * hw;
      T gv = gamma->value[static_cast<std::size_t>(j)];
      T bv = beta->value[static_cast<std::size_t>(j)];
      for (std::size_t k = 0; k < hw; ++k) y[at + k] = x[at + k] * gv + bv;
    }
  auto n = detail::make_node<T>(std::move(v), {a, gamma, beta}, "affine_ch");
  if (n->requires_grad)
    n->backward = [a, gamma](const Var<T>& g, const std::vector<char>& need) {
      std::vector<Var<T>> out(3);
      if (need[0]) out[0] = mul_ch(g, gamma);
      if (need[1]) out[1] = channel_dot(g, a);
      if (need[2]) out[2] = channel_sum(g);
      return out;
    };
  return n;
}

// ---- shape ops ---------------------------------------------------------------

template <typename T>
inline Var<T> reshape(const Var<T>& a, const std::vector<int>& shape) {
  auto v = Tensor<T>::uninit(shape);
  if (v.numel() != a->value.numel()) throw ShapeError("reshape: numel mismatch");
  std::copy(a->value.data(), a->value.data() + v.numel(), v.data());
  auto n = detail::make_node<T>(std::move(v), {a}, "reshape");
  if (n->requires_grad) {
    auto orig = a->value.shape();
    n->backward = [orig](const Var<T>& g, const std::vector<char>&) {
      return std::vector<Var<T>>{reshape(g, orig)};
    };
  }
  return n;
}

template <typename T>
inline Var<T> permute(const Var<T>& a, const std::vector<int>& perm) {
  int r = a->value.rank();
  if (static_cast<int>(perm.size()) != r) throw ShapeError("permute: rank mismatch");
  std::vector<int> oshape(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) oshape[static_cast<size_t>(i)] = a->value.dim(perm[static_cast<size_t>(i)]);
  auto v = Tensor<T>::uninit(oshape);
  std::vector<std::size_t> in_stride(static_cast<size_t>(r), 1);
  for (int i = r - 2; i >= 0; --i)
    in_stride[static_cast<size_t>(i)] =
        in_stride[static_cast<size_t>(i + 1)] * static_cast<std::size_t>(a->value.dim(i + 1));
  std::vector<std::size_t> stride_for_out(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i)
    stride_for_out[static_cast<size_t>(i)] = in_stride[static_cast<size_t>(perm[static_cast<size_t>(i)])];
  std::vector<int> idx(static_cast<size_t>(r), 0);
  for (std::size_t o = 0; o < v.numel(); ++o) {
    std::size_t src = 0;
    for (int i = 0; i < r; ++i) src += static_cast<std::size_t>(idx[static_cast<size_t>(i)]) * stride_for_out[static_cast<size_t>(i)];
    v[o] = a->value[src];
    for (int i = r - 1; i >= 0; --i) {
      if (++idx[static_cast<size_t>(i)] < oshape[static_cast<size_t>(i)]) break;
      idx[static_cast<size_t>(i)] = 0;
    }
  }
  auto n = detail::make_node<T>(std::move(v), {a}, "permute");
  if (n->requires_grad) {
    std::vector<int> inv(static_cast<size_t>(r));
    for (int i = 0; i < r; ++i) inv[static_cast<size_t>(perm[static_cast<size_t>(i)])] = i;
    n->backward = [inv](const Var<T>& g, const std::vector<char>&) {
      return std::vector<Var<T>>{permute(g, inv)};
    };
  }
  return n;
}

template <typename T>
inline Var<T> slice_ch(const Var<T>& a, int c0, int len);

template <typename T>
inline Var<T> concat_ch(const Var<T>& a, const Var<T>& b) {
  if (a->value.rank() != 4 || b->value.rank() != 4) throw ShapeError("concat_ch: rank-4 required");
  if (a->value.dim(0) != b->value.dim(0) || a->value.dim(2) != b->value.dim(2) ||
      a->value.dim(3) != b->value.dim(3))
    throw ShapeError("concat_ch: incompatible shapes " + a->value.shape_str() + " vs " +
                     b->value.shape_str());
  int n_b = a->value.dim(0), ca = a->value.dim(1), cb = b->value.dim(1);
  int h = a->value.dim(2), w = a->value.dim(3);
  std::size_t hw = static_cast<std::size_t>(h) * w;
  auto v = Tensor<T>::uninit({n_b, ca + cb, h, w});
  for (int i = 0; i < n_b; ++i) {
    std::copy(a->value.data() + static_cast<std::size_t>(i) * ca * hw,
              a->value.data() + static_cast<std::size_t>(i + 1) * ca * hw,
              v.data() + static_cast<std::size_t>(i) * (ca + cb) * hw);
    std::copy(b->value.data() + static_cast<std::size_t>(i) * cb * hw,
              b->value.data() + static_cast<std::size_t>(i + 1) * cb * hw,
              v.data() + static_cast<std::size_t>(i) * (ca + cb) * hw + ca * hw);
  }
  auto n = detail::make_node<T>(std::move(v), {a, b}, "concat_ch");
  if (n->requires_grad)
    n->backward = [ca, cb](const Var<T>& g, const std::vector<char>& need) {
      std::vector<Var<T>> out(2);
      if (need[0]) out[0] = slice_ch(g, 0, ca);
      if (need[1]) out[1] = slice_ch(g, ca, cb);
      return out;
    };
  return n;
}

template <typename T>
inline Var<T> zpad_ch(const Var<T>& a, int c_total, int c0);

template <typename T>
inline Var<T> slice_ch(const Var<T>& a, int c0, int len) {
  if (a->value.rank() != 4) throw ShapeError("slice_ch: rank-4 required");
  int b = a->value.dim(0), c = a->value.dim(1), h = a->value.dim(2), w = a->value.dim(3);
  if (c0 < 0 || c0 + len > c) throw ShapeError("slice_ch: range out of bounds");
  std::size_t hw = static_cast<std::size_t>(h) * w;
  auto v = Tensor<T>::uninit({b, len, h, w});
  for (int i = 0; i < b; ++i)
    std::copy(a->value.data() + (static_cast<std::size_t>(i) * c + c0) * hw,
              a->value.data() + (static_cast<std::size_t>(i) * c + c0 + len) * hw,
              v.data() + static_cast<std::size_t>(i) * len * hw);
  auto n = detail::make_node<T>(std::move(v), {a}, "slice_ch");
  if (n->requires_grad)
    n->backward = [c, c0](const Var<T>& g, const std::vector<char>&) {
      return std::vector<Var<T>>{zpad_ch(g, c, c0)};
    };
  return n;
}

template <typename T>
inline Var<T> zpad_ch(const Var<T>& a, int c_total, int c0) {
  int b = a->value.dim(0), c = a->value.dim(1), h = a->value.dim(2), w = a->value.dim(3);
  std::size_t hw = static_cast<std::size_t>(h) * w;
  Tensor<T> v({b, c_total, h, w});
  for (int i = 0; i < b; ++i)
    std::copy(a->value.data() + static_cast<std::size_t>(i) * c * hw,
              a->value.data() + static_cast<std::size_t>(i + 1) * c * hw,
              v.data() + (static_cast<std::size_t>(i) * c_total + c0) * hw);
  auto n = detail::make_node<T>(std::move(v), {a}, "zpad_ch");
  if (n->requires_grad)
    n->backward = [c, c0](const Var<T>& g, const std::vector<char>&) {
      return std::vector<Var<T>>{slice_ch(g, c0, c)};
    };
  return n;
}

template <typename T>
inline Var<T> zpad2d(const Var<T>& a, int h_total, int w_total, int y0, int x0);

/// Spatial crop of [B,C,H,W] starting at (y0, x0).
template <typename T>
inline Var<T> crop2d(const Var<T>& a, int y0, int x0, int h2, int w2) {
  int b = a->value.dim(0), c = a->value.dim(1), h = a->value.dim(2), w = a->value.dim(3);
  if (y0 + h2 > h || x0 + w2 > w) throw ShapeError("crop2d: range out of bounds");
  auto v = Tensor<T>::uninit({b, c, h2, w2});
  for (int i = 0; i < b; ++i)
    for (int j = 0; j < c; ++j)
      for (int y = 0; y < h2; ++y)
        std::copy(&a->value.at(i, j, y0 + y, x0), &a->value.at(i, j, y0 + y, x0) + w2,
                  &v.at(i, j, y, 0));
  auto n = detail::make_node<T>(std::move(v), {a}, "crop2d");
  if (n->requires_grad)
    n->backward = [h, w, y0, x0](const Var<T>& g, const std::vector<char>&) {
      return std::vector<Var<T>>{zpad2d(g, h, w, y0, x0)};
    };
  return n;
}

template <typename T>
inline Var<T> zpad2d(const Var<T>& a, int h_total, int w_total, int y0, int x0) {
  int b = a->value.dim(0), c = a->value.dim(1), h = a->value.dim(2), w = a->value.dim(3);
  Tensor<T> v({b, c, h_total, w_total});
  for (int i = 0; i < b; ++i)
    for (int j = 0; j < c; ++j)
      for (int y = 0; y < h; ++y)
        std::copy(&a->value.at(i, j, y, 0), &a->value.at(i, j, y, 0) + w,
                  &v.at(i, j, y0 + y, x0));
  auto n = detail::make_node<T>(std::move(v), {a}, "zpad2d");
  if (n->requires_grad)
    n->backward = [h, w, y0, x0](const Var<T>& g, const std::vector<char>&) {
      return std::vector<Var<T>>{crop2d(g, y0, x0, h, w)};
    };
  return n;
}

// ---- convolution -------------------------------------------------------------

template <typename T>
inline Var<T> conv2d_input_grad(const Var<T>& gy, const Var<T>& w, int stride, int pad, int h,
                                int wd);
template <typename T>
inline Var<T> conv2d_weight_grad(const Var<T>& x, const Var<T>& gy, int stride, int pad, int kh,
                                 int kw);

template <typename T>
inline Var<T> conv2d(const Var<T>& x, const Var<T>& w, int stride, int pad) {
  auto n = detail::make_node<T>(conv_forward_raw(x->value, w->value, stride, pad), {x, w}, "conv2d");
  if (n->requires_grad) {
    int h = x->value.dim(2), wd = x->value.dim(3);
    int kh = w->value.dim(2), kw = w->value.dim(3);
    n->backward = [x, w, stride, pad, h, wd, kh, kw](const Var<T>& g,
                                                     const std::vector<char>& need) {
      std::vector<Var<T>> out(2);
      if (need[0]) out[0] = conv2d_input_grad(g, w, stride, pad, h, wd);
      if (need[1]) out[1] = conv2d_weight_grad(x, g, stride, pad, kh, kw);
      return out;
    };
  }
  return n;
}

template <typename T>
inline Var<T> conv2d_input_grad(const Var<T>& gy, const Var<T>& w, int stride, int pad, int h,
                                int wd) {
  auto n = detail::make_node<T>(conv_input_grad_raw(gy->value, w->value, stride, pad, h, wd),
                                {gy, w}, "conv2d_input_grad");
  if (n->requires_grad) {
    int kh = w->value.dim(2), kw = w->value.dim(3);
    n->backward = [gy, w, stride, pad, kh, kw](const Var<T>& g, const std::vector<char>& need) {
      std::vector<Var<T>> out(2);
      if (need[0]) out[0] = conv2d(g, w, stride, pad);
      if (need[1]) out[1] = conv2d_weight_grad(g, gy, stride, pad, kh, kw);
      return out;
    };
  }
  return n;
}

template <typename T>
inline Var<T> conv2d_weight_grad(const Var<T>& x, const Var<T>& gy, int stride, int pad, int kh,
                                 int kw) {
  auto n = detail::make_node<T>(conv_weight_grad_raw(x->value, gy->value, stride, pad, kh, kw),
                                {x, gy}, "conv2d_weight_grad");
  if (n->requires_grad) {
    int h = x->value.dim(2), wd = x->value.dim(3);
    n->backward = [x, gy, stride, pad, h, wd](const Var<T>& g, const std::vector<char>& need) {
      std::vector<Var<T>> out(2);
      if (need[0]) out[0] = conv2d_input_grad(gy, g, stride, pad, h, wd);
      if (need[1]) out[1] = conv2d(x, g, stride, pad);
      return out;
    };
  }
  return n;
}

// ---- batched matmul ----------------------------------------------------------

/// [B,M,K] x [B,K,N] -> [B,M,N]
template <typename T>
inline Var<T> bmm(const Var<T>& a, const Var<T>& b) {
  if (a->value.rank() != 3 || b->value.rank() != 3 || a->value.dim(0) != b->value.dim(0) ||
      a->value.dim(2) != b->value.dim(1))
    throw ShapeError("bmm: incompatible shapes " + a->value.shape_str() + " vs " +
                     b->value.shape_str());
  int nb = a->value.dim(0), m = a->value.dim(1), k = a->value.dim(2), nn = b->value.dim(2);
  auto v = Tensor<T>::uninit({nb, m, nn});
  for (int i = 0; i < nb; ++i)
    gemm(false, false, m, nn, k, T(1), a->value.data() + static_cast<std::size_t>(i) * m * k, k,
         b->value.data() + static_cast<std::size_t>(i) * k * nn, nn, T(0),
         v.data() + static_cast<std::size_t>(i) * m * nn, nn);
  auto n = detail::make_node<T>(std::move(v), {a, b}, "bmm");
  if (n->requires_grad)
    n->backward = [a, b](const Var<T>& g, const std::vector<char>& need) {
      std::vector<Var<T>> out(2);
      if (need[0]) out[0] = bmm(g, permute(b, {0, 2, 1}));
      if (need[1]) out[1] = bmm(permute(a, {0, 2, 1}), g);
      return out;
    };
  return n;
}

// ---- resampling --------------------------------------------------------------

template <typename T>
inline Var<T> upsample_bilinear_adjoint(const Var<T>& g, int h, int w);

/// Half-pixel bilinear resize of [B,C,H,W] to (h2, w2).
template <typename T>
inline Var<T> upsample_bilinear(const Var<T>& a, int h2, int w2) {
  if (a->value.rank() != 4) throw ShapeError("upsample_bilinear: rank-4 required");
  int b = a->value.dim(0), c = a->value.dim(1), h = a->value.dim(2), w = a->value.dim(3);
  BilinearTaps ty(h, h2), tx(w, w2);
  auto v = Tensor<T>::uninit({b, c, h2, w2});
  std::size_t in_plane = static_cast<std::size_t>(h) * w;
  std::size_t out_plane = static_cast<std::size_t>(h2) * w2;
  for (int p = 0; p < b * c; ++p)
    bilinear_resize_plane(a->value.data() + static_cast<std::size_t>(p) * in_plane, h, w,
                          v.data() + static_cast<std::size_t>(p) * out_plane, h2, w2, ty, tx);
  auto n = detail::make_node<T>(std::move(v), {a}, "upsample_bilinear");
  if (n->requires_grad)
    n->backward = [h, w](const Var<T>& g, const std::vector<char>&) {
      return std::vector<Var<T>>{upsample_bilinear_adjoint(g, h, w)};
    };
  return n;
}

template <typename T>
inline Var<T> upsample_bilinear_adjoint(const Var<T>& a, int h, int w) {
  int b = a->value.dim(0), c = a->value.dim(1), h2 = a->value.dim(2), w2 = a->value.dim(3);
  BilinearTaps ty(h, h2), tx(w, w2);
  Tensor<T> v({b, c, h, w});
  std::size_t in_plane = static_cast<std::size_t>(h2) * w2;
  std::size_t out_plane = static_cast<std::size_t>(h) * w;
  for (int p = 0; p < b * c; ++p)
    bilinear_scatter_plane(a->value.data() + static_cast<std::size_t>(p) * in_plane, h2, w2,
                           v.data() + static_cast<std::size_t>(p) * out_plane, h, w, ty, tx);
  auto n = detail::make_node<T>(std::move(v), {a}, "upsample_bilinear_adjoint");
  if (n->requires_grad)
    n->backward = [h2, w2](const Var<T>& g, const std::vector<char>&) {
      return std::vector<Var<T>>{upsample_bilinear(g, h2, w2)};
    };
  return n;
}

template <typename T>
inline Var<T> avgunpool2(const Var<T>& a, int h, int w);

/// 2x2 average pooling, floor semantics (a trailing odd row/col is dropped).
template <typename T>
inline Var<T> avgpool2(const Var<T>& a) {
  int b = a->value.dim(0), c = a->value.dim(1), h = a->value.dim(2), w = a->value.dim(3);
  int h2 = h / 2, w2 = w / 2;
  if (h2 < 1 || w2 < 1) throw ShapeError("avgpool2: input too small");
  auto v = Tensor<T>::uninit({b, c, h2, w2});
  for (int i = 0; i < b; ++i)
    for (int j = 0; j < c; ++j)
      for (int y = 0; y < h2; ++y)
        for (int x = 0; x < w2; ++x)
          v.at(i, j, y, x) = (a->value.at(i, j, 2 * y, 2 * x) + a->value.at(i, j, 2 * y, 2 * x + 1) +
                              a->value.at(i, j, 2 * y + 1, 2 * x) +
                              a->value.at(i, j, 2 * y + 1, 2 * x + 1)) *
                             T(0.25);
  auto n = detail::make_node<T>(std::move(v), {a}, "avgpool2");
  if (n->requires_grad)
    n->backward = [h, w](const Var<T>& g, const std::vector<char>&) {
      return std::vector<Var<T>>{avgunpool2(g, h, w)};
    };
  return n;
}

template <typename T>
inline Var<T> avgunpool2(const Var<T>& a, int h, int w) {
  int b = a->value.dim(0), c = a->value.dim(1), h2 = a->value.dim(2), w2 = a->value.dim(3);
  Tensor<T> v({b, c, h, w});
  for (int i = 0; i < b; ++i)
    for (int j = 0; j < c; ++j)
      for (int y = 0; y < h2; ++y)
        for (int x = 0; x < w2; ++x) {
          T q = a->value.at(i, j, y, x) * T(0.25);
          v.at(i, j, 2 * y, 2 * x) = q;
          v.at(i, j, 2 * y, 2 * x + 1) = q;
          v.at(i, j, 2 * y + 1, 2 * x) = q;
          v.at(i, j, 2 * y + 1, 2 * x + 1) = q;
        }
  auto n = detail::make_node<T>(std::move(v), {a}, "avgunpool2");
  if (n->requires_grad)
    n->backward = [](const Var<T>& g, const std::vector<char>&) {
      return std::vector<Var<T>>{avgpool2(g)};
    };
  return n;
}

// ---- softmax over the channel dim of [B,K,H,W] --------------------------------

namespace detail {

// Per-pixel channel max as a constant; shift invariance of softmax makes the
// detached max exact for gradients of every order.
template <typename T>
inline Var<T> detached_max_last(const Var<T>& a) {
  auto shape = a->value.shape();
  int m = shape.back();
  std::size_t outer = a->value.numel() / static_cast<std::size_t>(m);
  auto oshape = shape;
  oshape.back() = 1;
  auto v = Tensor<T>::uninit(oshape);
  for (std::size_t o = 0; o < outer; ++o) {
    T best = a->value[o * static_cast<std::size_t>(m)];
    for (int j = 1; j < m; ++j) best = std::max(best, a->value[o * static_cast<std::size_t>(m) + j]);
    v[o] = best;
  }
  return make_const<T>(std::move(v));
}

}  // namespace detail

template <typename T>
inline Var<T> softmax_ch(const Var<T>& logits) {
  if (logits->value.rank() != 4) throw ShapeError("softmax_ch: rank-4 required");
  int k = logits->value.dim(1);
  auto xp = permute(logits, {0, 2, 3, 1});
  auto z = sub(xp, broadcast_last(detail::detached_max_last(xp), k));
  auto e = exp_v(z);
  auto s = sum_last(e);
  auto p = mul(e, broadcast_last(pow_scalar(s, T(-1)), k));
  return permute(p, {0, 3, 1, 2});
}

template <typename T>
inline Var<T> log_softmax_ch(const Var<T>& logits) {
  if (logits->value.rank() != 4) throw ShapeError("log_softmax_ch: rank-4 required");
  int k = logits->value.dim(1);
  auto xp = permute(logits, {0, 2, 3, 1});
  auto z = sub(xp, broadcast_last(detail::detached_max_last(xp), k));
  auto lse = log_v(sum_last(exp_v(z)));
  auto lp = sub(z, broadcast_last(lse, k));
  return permute(lp, {0, 3, 1, 2});
}

// ---- conveniences -------------------------------------------------------------

template <typename T>
inline T scalar_value(const Var<T>& a) {
  if (a->value.numel() != 1) throw ShapeError("scalar_value: non-scalar");
  return a->value[0];
}

template <typename T>
inline Var<T> mse(const Var<T>& a, const Var<T>& b) {
  return mean_all(square(sub(a, b)));
}

template <typename T>
inline Var<T> mean_abs(const Var<T>& a, const Var<T>& b) {
  return mean_all(abs_v(sub(a, b)));
}

}  // namespace procst
