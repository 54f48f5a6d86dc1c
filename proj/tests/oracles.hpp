// SPDX-License-Identifier: Apache-2.0
//
// Test-only reference routines. These deliberately avoid the library's own
// decompositions so that they can serve as independent checks.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <vector>

#include "galore/matrix.hpp"
#include "galore/projector.hpp"
#include "galore/rng.hpp"

namespace galore::oracle {

/// Eigenvalues of a symmetric matrix by the classical two-sided cyclic Jacobi
/// method, returned in non-increasing order.
inline std::vector<double> symmetric_eigenvalues(Matrix a) {
  const std::size_t n = a.rows();
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (i != j) {
          off += a(i, j) * a(i, j);
        }
      }
    }
    if (off < 1e-30) {
      break;
    }
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        if (a(p, q) == 0.0) {
          continue;
        }
        const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
        const double t =
            (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
      }
    }
  }
  std::vector<double> ev(n);
  for (std::size_t i = 0; i < n; ++i) {
    ev[i] = a(i, i);
  }
  std::sort(ev.begin(), ev.end(), std::greater<>());
  return ev;
}

/// Classical Gram-Schmidt orthonormal basis (test fixtures only).
inline Matrix gram_schmidt_columns(const Matrix &a) {
  Matrix q = a;
  for (std::size_t j = 0; j < q.cols(); ++j) {
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t k = 0; k < j; ++k) {
        double d = 0.0;
        for (std::size_t i = 0; i < q.rows(); ++i) {
          d += q(i, k) * q(i, j);
        }
        for (std::size_t i = 0; i < q.rows(); ++i) {
          q(i, j) -= d * q(i, k);
        }
      }
    }
    double nrm = 0.0;
    for (std::size_t i = 0; i < q.rows(); ++i) {
      nrm += q(i, j) * q(i, j);
    }
    nrm = std::sqrt(nrm);
    for (std::size_t i = 0; i < q.rows(); ++i) {
      q(i, j) /= nrm;
    }
  }
  return q;
}

/// m x n matrix with prescribed singular values, built from Gram-Schmidt
/// orthonormal factors.
inline Matrix with_spectrum(Rng &rng, std::size_t m, std::size_t n,
                            const std::vector<double> &sigma) {
  const std::size_t k = sigma.size();
  Matrix u = gram_schmidt_columns(gaussian(rng, m, k));
  const Matrix v = gram_schmidt_columns(gaussian(rng, n, k));
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      u(i, j) *= sigma[j];
    }
  }
  return matmul(u, transpose(v));
}

/// Sum of rank-one outer products of Gaussian vectors: exactly rank `r`.
inline Matrix planted_rank(Rng &rng, std::size_t m, std::size_t n, std::size_t r) {
  return matmul(gaussian(rng, m, r), gaussian(rng, r, n));
}

/// Central finite difference of a scalar function of one matrix entry.
inline double central_difference(const std::function<double(const Matrix &)> &f, Matrix x,
                                 std::size_t i, std::size_t j, double h) {
  const double x0 = x(i, j);
  x(i, j) = x0 + h;
  const double fp = f(x);
  x(i, j) = x0 - h;
  const double fm = f(x);
  return (fp - fm) / (2.0 * h);
}

inline ProjectionConfig galore_config(ProjectionMethod method, std::size_t rank, std::size_t freq,
                               double alpha) {
  ProjectionConfig cfg;
  cfg.method = method;
  cfg.rank = rank;
  cfg.update_freq = freq;
  cfg.alpha = alpha;
  return cfg;
}

// Scalar re-derivation of two GaLore-Adam steps with a fixed rank-1 left
// projector p, written independently of the library's matrix path.
struct HandTrace {
  std::array<double, 4> w; // row-major 2x2
};

inline HandTrace hand_two_steps(std::array<double, 4> w, const std::array<double, 2> &p,
                         const std::array<std::array<double, 4>, 2> &grads, double lr, double alpha,
                         bool bias_correction) {
  const double b1 = 0.9;
  const double b2 = 0.999;
  const double eps = 1e-8;
  double m[2] = {0.0, 0.0};
  double v[2] = {0.0, 0.0};
  for (int t = 1; t <= 2; ++t) {
    const auto &g = grads[t - 1];
    double r[2];
    for (int j = 0; j < 2; ++j) {
      r[j] = p[0] * g[0 * 2 + j] + p[1] * g[1 * 2 + j];
    }
    double n[2];
    for (int j = 0; j < 2; ++j) {
      m[j] = b1 * m[j] + (1 - b1) * r[j];
      v[j] = b2 * v[j] + (1 - b2) * r[j] * r[j];
      double mh = m[j];
      double vh = v[j];
      if (bias_correction) {
        mh /= 1 - std::pow(b1, t);
        vh /= 1 - std::pow(b2, t);
      }
      n[j] = mh / (std::sqrt(vh) + eps);
    }
    for (int i = 0; i < 2; ++i) {
      for (int j = 0; j < 2; ++j) {
        w[i * 2 + j] -= lr * alpha * p[i] * n[j];
      }
    }
  }
  return {w};
}

} // namespace galore::oracle
