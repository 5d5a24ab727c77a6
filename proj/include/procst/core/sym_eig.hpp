#pragma once

#include <cmath>
#include <vector>

#include "procst/core/error.hpp"

namespace procst {

/// Cyclic Jacobi eigendecomposition of a small symmetric matrix (row-major
/// n*n). Eigenvectors come back as columns: evecs[r*n + c] is component r of
/// eigenvector c, paired with evals[c].
inline void sym_eig(std::vector<double> a, int n, std::vector<double>& evals,
                    std::vector<double>& evecs) {
  if (static_cast<int>(a.size()) != n * n) throw ArgError("sym_eig: size mismatch");
  evecs.assign(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) evecs[static_cast<std::size_t>(i) * n + i] = 1.0;
  auto at = [&](int r, int c) -> double& { return a[static_cast<std::size_t>(r) * n + c]; };
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0;
    for (int r = 0; r < n; ++r)
      for (int c = r + 1; c < n; ++c) off += at(r, c) * at(r, c);
    if (off < 1e-26) break;
    for (int p = 0; p < n - 1; ++p)
      for (int q = p + 1; q < n; ++q) {
        double apq = at(p, q);
        if (std::abs(apq) < 1e-300) continue;
        double theta = (at(q, q) - at(p, p)) / (2.0 * apq);
        double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        double c = 1.0 / std::sqrt(t * t + 1.0);
        double s = t * c;
        for (int k = 0; k < n; ++k) {
          double akp = at(k, p), akq = at(k, q);
          at(k, p) = c * akp - s * akq;
          at(k, q) = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          double apk = at(p, k), aqk = at(q, k);
          at(p, k) = c * apk - s * aqk;
          at(q, k) = s * apk + c * aqk;
        }
        for (int k = 0; k < n; ++k) {
          double vkp = evecs[static_cast<std::size_t>(k) * n + p];
          double vkq = evecs[static_cast<std::size_t>(k) * n + q];
          evecs[static_cast<std::size_t>(k) * n + p] = c * vkp - s * vkq;
          evecs[static_cast<std::size_t>(k) * n + q] = s * vkp + c * vkq;
        }
      }
  }
  evals.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) evals[static_cast<std::size_t>(i)] = at(i, i);
}

inline std::vector<double> sym_eigenvalues(const std::vector<double>& a, int n) {
  std::vector<double> evals, evecs;
  sym_eig(a, n, evals, evecs);
  return evals;
}

/// Symmetric PSD square root via eigendecomposition; negative eigenvalues
/// from roundoff are clipped to zero.
inline std::vector<double> sym_sqrt(const std::vector<double>& a, int n) {
  std::vector<double> evals, v;
  sym_eig(a, n, evals, v);
  std::vector<double> out(static_cast<std::size_t>(n) * n, 0.0);
  for (int c = 0; c < n; ++c) {
    double s = evals[static_cast<std::size_t>(c)] > 0 ? std::sqrt(evals[static_cast<std::size_t>(c)]) : 0.0;
    for (int r = 0; r < n; ++r)
      for (int k = 0; k < n; ++k)
        out[static_cast<std::size_t>(r) * n + k] +=
            s * v[static_cast<std::size_t>(r) * n + c] * v[static_cast<std::size_t>(k) * n + c];
  }
  return out;
}

}  // namespace procst
