#pragma once

#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "procst/core/ops.hpp"
#include "procst/core/rng.hpp"

namespace procst::testing {

using VarD = Var<double>;

inline Tensor<double> rand_tensor(Rng& rng, const std::vector<int>& shape, double lo = -1.0,
                                  double hi = 1.0) {
  Tensor<double> t(shape);
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

inline VarD rand_leaf(Rng& rng, const std::vector<int>& shape, double lo = -1.0, double hi = 1.0) {
  return make_leaf<double>(rand_tensor(rng, shape, lo, hi));
}

// Central-difference check of d(build())/d(leaf) against the analytic grads.
// `build` may itself call grad() internally, which makes this a second-order
// check for free.
inline void expect_gradients_match(const std::function<VarD()>& build,
                                   const std::vector<VarD>& leaves, double eps = 1e-5,
                                   double tol = 1e-6) {
  auto out = build();
  ASSERT_EQ(out->value.numel(), 1u) << "gradcheck needs a scalar objective";
  auto gs = grad(out, leaves);
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    const auto& leaf = leaves[li];
    ASSERT_TRUE(gs[li]->value.same_shape(leaf->value));
    for (std::size_t i = 0; i < leaf->value.numel(); ++i) {
      double orig = leaf->value[i];
      leaf->value[i] = orig + eps;
      double fp = scalar_value(build());
      leaf->value[i] = orig - eps;
      double fm = scalar_value(build());
      leaf->value[i] = orig;
      double num = (fp - fm) / (2.0 * eps);
      double ana = gs[li]->value[i];
      double bound = tol * std::max(1.0, std::max(std::abs(num), std::abs(ana)));
      EXPECT_NEAR(ana, num, bound) << "leaf " << li << " element " << i;
    }
  }
}

inline double dot(const Tensor<double>& a, const Tensor<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace procst::testing
