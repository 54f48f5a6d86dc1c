// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "galore/errors.hpp"
#include "galore/matrix.hpp"
#include "galore/rng.hpp"

namespace galore {

/// Thin SVD A = U diag(S) Vᵀ with k = min(m, n) (or the truncation rank).
struct SvdResult {
  Matrix u;              // m x k, orthonormal columns
  std::vector<double> s; // k, non-increasing, non-negative
  Matrix v;              // n x k, orthonormal columns
};

struct QrResult {
  Matrix q; // m x n, orthonormal columns
  Matrix r; // n x n, upper triangular, non-negative diagonal
};

inline Matrix reconstruct(const SvdResult &res) {
  Matrix us = res.u;
  for (std::size_t i = 0; i < us.rows(); ++i) {
    for (std::size_t j = 0; j < us.cols(); ++j) {
      us(i, j) *= res.s[j];
    }
  }
  return matmul(us, transpose(res.v));
}

/// Householder QR. Rank-deficient input is allowed: a column that is already
/// zero below the diagonal gets no reflection, so a zero column yields a zero
/// diagonal entry in R.
inline QrResult qr_thin(const Matrix &a) {
  const std::size_t m = a.rows();
  const std::size_t n = a.cols();
  if (m < n) {
    throw DimensionError("qr_thin: needs rows >= cols, got " + a.shape_str());
  }
  Matrix work = a;
  std::vector<std::vector<double>> reflectors(n);
  std::vector<double> w(n);

  for (std::size_t k = 0; k < n; ++k) {
    double tail2 = 0.0;
    for (std::size_t i = k + 1; i < m; ++i) {
      tail2 += work(i, k) * work(i, k);
    }
    const double norm2 = work(k, k) * work(k, k) + tail2;
    if (tail2 == 0.0) {
      continue;
    }
    const double x0 = work(k, k);
    const double alpha = (x0 >= 0.0 ? -1.0 : 1.0) * std::sqrt(norm2);
    std::vector<double> v(m - k);
    v[0] = x0 - alpha;
    for (std::size_t i = k + 1; i < m; ++i) {
      v[i - k] = work(i, k);
    }
    const double vnorm2 = v[0] * v[0] + tail2;

    // work[k:, k:] -= (2 / vᵀv) v (vᵀ work[k:, k:]), accumulated row-wise.
    std::fill(w.begin(), w.end(), 0.0);
    for (std::size_t i = k; i < m; ++i) {
      const double vi = v[i - k];
      for (std::size_t j = k; j < n; ++j) {
        w[j] += vi * work(i, j);
      }
    }
    for (std::size_t i = k; i < m; ++i) {
      const double vi = 2.0 * v[i - k] / vnorm2;
      for (std::size_t j = k; j < n; ++j) {
        work(i, j) -= vi * w[j];
      }
    }
    for (std::size_t i = k + 1; i < m; ++i) {
      work(i, k) = 0.0;
    }
    work(k, k) = alpha;
    reflectors[k] = std::move(v);
  }

  Matrix q(m, n);
  for (std::size_t j = 0; j < n; ++j) {
    q(j, j) = 1.0;
  }
  for (std::size_t kk = n; kk-- > 0;) {
    const auto &v = reflectors[kk];
    if (v.empty()) {
      continue;
    }
    double vnorm2 = 0.0;
    for (double x : v) {
      vnorm2 += x * x;
    }
    std::fill(w.begin(), w.end(), 0.0);
    for (std::size_t i = kk; i < m; ++i) {
      const double vi = v[i - kk];
      for (std::size_t j = kk; j < n; ++j) {
        w[j] += vi * q(i, j);
      }
    }
    for (std::size_t i = kk; i < m; ++i) {
      const double vi = 2.0 * v[i - kk] / vnorm2;
      for (std::size_t j = kk; j < n; ++j) {
        q(i, j) -= vi * w[j];
      }
    }
  }

  Matrix r(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) {
      r(i, j) = work(i, j);
    }
  }
  for (std::size_t k = 0; k < n; ++k) {
    if (r(k, k) < 0.0) {
      for (std::size_t j = k; j < n; ++j) {
        r(k, j) = -r(k, j);
      }
      for (std::size_t i = 0; i < m; ++i) {
        q(i, k) = -q(i, k);
      }
    }
  }
  return {std::move(q), std::move(r)};
}

/// For every column j, makes the largest-magnitude entry of U[:, j]
/// non-negative (first such row on ties) and flips V[:, j] alongside.
inline SvdResult sign_canonicalize(SvdResult res) {
  for (std::size_t j = 0; j < res.u.cols(); ++j) {
    std::size_t best = 0;
    double best_abs = -1.0;
    for (std::size_t i = 0; i < res.u.rows(); ++i) {
      const double a = std::abs(res.u(i, j));
      if (a > best_abs) {
        best_abs = a;
        best = i;
      }
    }
    if (res.u.rows() > 0 && res.u(best, j) < 0.0) {
      for (std::size_t i = 0; i < res.u.rows(); ++i) {
        res.u(i, j) = -res.u(i, j);
      }
      for (std::size_t i = 0; i < res.v.rows(); ++i) {
        res.v(i, j) = -res.v(i, j);
      }
    }
  }
  return res;
}

namespace detail {

inline constexpr int kMaxJacobiSweeps = 80;

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    s += a[i] * b[i];
  }
  return s;
}

// Fills rows of `basis` whose norm is zero with unit vectors orthogonal to
// every other row. Rows are basis vectors here (column-major view).
inline void complete_orthonormal_rows(Matrix &basis, const std::vector<bool> &missing) {
  const std::size_t dim = basis.cols();
  for (std::size_t k = 0; k < basis.rows(); ++k) {
    if (!missing[k]) {
      continue;
    }
    double best_norm = -1.0;
    std::vector<double> best;
    for (std::size_t e = 0; e < dim; ++e) {
      std::vector<double> cand(dim, 0.0);
      cand[e] = 1.0;
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t o = 0; o < basis.rows(); ++o) {
          if (o == k || (missing[o] && o > k)) {
            continue;
          }
          const double proj = dot(cand, basis.row(o));
          for (std::size_t i = 0; i < dim; ++i) {
            cand[i] -= proj * basis(o, i);
          }
        }
      }
      const double nrm = std::sqrt(dot(cand, cand));
      if (nrm > best_norm + 1e-12) {
        best_norm = nrm;
        best = std::move(cand);
      }
    }
    for (std::size_t i = 0; i < dim; ++i) {
      basis(k, i) = best[i] / best_norm;
    }
  }
}

// One-sided (Hestenes) Jacobi on a matrix with rows >= cols.
inline SvdResult jacobi_svd_tall(const Matrix &a) {
  const std::size_t m = a.rows();
  const std::size_t n = a.cols();
  // Column j of `a` is row j of `cols` so that rotations touch contiguous memory.
  Matrix cols = transpose(a);
  Matrix vt = Matrix::identity(n);
  const double tol = std::numeric_limits<double>::epsilon() * std::sqrt(static_cast<double>(m));

  // Squared column norms are refreshed every sweep and updated in closed form
  // after each rotation in between.
  std::vector<double> norm2(n);
  int sweep = 0;
  for (; sweep < kMaxJacobiSweeps; ++sweep) {
    for (std::size_t j = 0; j < n; ++j) {
      norm2[j] = dot(cols.row(j), cols.row(j));
    }
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        auto cp = cols.row(p);
        auto cq = cols.row(q);
        const double alpha = norm2[p];
        const double beta = norm2[q];
        if (alpha == 0.0 || beta == 0.0) {
          continue;
        }
        const double gamma = dot(cp, cq);
        if (std::abs(gamma) <= tol * std::sqrt(alpha * beta)) {
          continue;
        }
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = (zeta >= 0.0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < m; ++i) {
          const double xp = cp[i];
          const double xq = cq[i];
          cp[i] = c * xp - s * xq;
          cq[i] = s * xp + c * xq;
        }
        norm2[p] = std::max(alpha - t * gamma, 0.0);
        norm2[q] = beta + t * gamma;
        auto vp = vt.row(p);
        auto vq = vt.row(q);
        for (std::size_t i = 0; i < n; ++i) {
          const double xp = vp[i];
          const double xq = vq[i];
          vp[i] = c * xp - s * xq;
          vq[i] = s * xp + c * xq;
        }
      }
    }
    if (!rotated) {
      break;
    }
  }
  if (sweep == kMaxJacobiSweeps) {
    throw ConvergenceError("svd_full: one-sided Jacobi did not converge within " +
                           std::to_string(kMaxJacobiSweeps) + " sweeps on a " +
                           a.shape_str() + " matrix");
  }

  std::vector<double> sigma(n);
  for (std::size_t j = 0; j < n; ++j) {
    sigma[j] = std::sqrt(dot(cols.row(j), cols.row(j)));
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return sigma[x] > sigma[y]; });

  Matrix ut(n, m);
  Matrix vt_sorted(n, n);
  std::vector<double> s(n);
  std::vector<bool> missing(n, false);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t j = order[k];
    s[k] = sigma[j];
    if (sigma[j] == 0.0) {
      missing[k] = true;
    } else {
      for (std::size_t i = 0; i < m; ++i) {
        ut(k, i) = cols(j, i) / sigma[j];
      }
    }
    std::copy(vt.row(j).begin(), vt.row(j).end(), vt_sorted.row(k).begin());
  }
  if (std::find(missing.begin(), missing.end(), true) != missing.end()) {
    complete_orthonormal_rows(ut, missing);
  }
  return {transpose(ut), std::move(s), transpose(vt_sorted)};
}

} // namespace detail

/// Thin SVD via one-sided Jacobi, k = min(m, n), sign-canonicalized.
inline SvdResult svd_full(const Matrix &a) {
  if (!a.all_finite()) {
    throw NumericError("svd_full: non-finite input");
  }
  if (a.empty()) {
    throw DimensionError("svd_full: empty matrix");
  }
  if (a.rows() >= a.cols()) {
    auto r = detail::jacobi_svd_tall(a);
    return sign_canonicalize({std::move(r.u), std::move(r.s), std::move(r.v)});
  }
  auto r = detail::jacobi_svd_tall(transpose(a));
  return sign_canonicalize({std::move(r.v), std::move(r.s), std::move(r.u)});
}

/// Keeps the leading `rank` singular triplets.
inline SvdResult truncate(const SvdResult &res, std::size_t rank) {
  if (rank > res.s.size()) {
    throw ParameterError("truncate: rank exceeds available singular values");
  }
  return {leading_columns(res.u, rank), std::vector<double>(res.s.begin(), res.s.begin() + rank),
          leading_columns(res.v, rank)};
}

/// Randomized range finder + small SVD (Halko, Martinsson & Tropp).
///
/// Sketch Y = (A Aᵀ)^q A Ω with Ω Gaussian n x (rank + oversample); the range
/// is re-orthonormalized after every multiplication by A or Aᵀ.
inline SvdResult randomized_svd(const Matrix &a, std::size_t rank, std::size_t oversample,
                                std::size_t power_iters, Rng &rng) {
  const std::size_t m = a.rows();
  const std::size_t n = a.cols();
  const std::size_t kmax = std::min(m, n);
  if (rank < 1 || rank > kmax) {
    throw ParameterError("randomized_svd: rank " + std::to_string(rank) + " outside [1, " +
                         std::to_string(kmax) + "]");
  }
  if (rank + oversample > kmax) {
    throw ParameterError("randomized_svd: rank + oversample = " +
                         std::to_string(rank + oversample) + " exceeds min(m, n) = " +
                         std::to_string(kmax));
  }
  if (!a.all_finite()) {
    throw NumericError("randomized_svd: non-finite input");
  }
  const std::size_t width = rank + oversample;
  const Matrix omega = gaussian(rng, n, width);
  const Matrix at = transpose(a);
  Matrix y = matmul(a, omega);
  for (std::size_t it = 0; it < power_iters; ++it) {
    const Matrix qy = qr_thin(y).q;
    const Matrix z = qr_thin(matmul(at, qy)).q;
    y = matmul(a, z);
  }
  const Matrix q = qr_thin(y).q;
  const Matrix b = matmul(transpose(q), a); // width x n
  SvdResult small = svd_full(b);
  SvdResult out{matmul(q, small.u), std::move(small.s), std::move(small.v)};
  return sign_canonicalize(truncate(out, rank));
}

} // namespace galore
