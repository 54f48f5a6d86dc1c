// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "galore/errors.hpp"
#include "galore/matrix.hpp"
#include "galore/optim.hpp"

namespace galore {

/// Order-3 tensor, row-major: element (i, j, k) lives at (i * d2 + j) * d3 + k.
class Tensor3 {
public:
  Tensor3() = default;
  explicit Tensor3(std::array<std::size_t, 3> dims, double fill = 0.0)
      : dims_(dims), data_(dims[0] * dims[1] * dims[2], fill) {}
  Tensor3(std::array<std::size_t, 3> dims, std::vector<double> data) : dims_(dims), data_(std::move(data)) {
    if (data_.size() != dims_[0] * dims_[1] * dims_[2]) {
      throw DimensionError("tensor data length does not match dims");
    }
  }

  const std::array<std::size_t, 3> &dims() const noexcept { return dims_; }
  std::size_t size() const noexcept { return data_.size(); }

  double &operator()(std::size_t i, std::size_t j, std::size_t k) noexcept {
    return data_[(i * dims_[1] + j) * dims_[2] + k];
  }
  double operator()(std::size_t i, std::size_t j, std::size_t k) const noexcept {
    return data_[(i * dims_[1] + j) * dims_[2] + k];
  }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  friend bool operator==(const Tensor3 &, const Tensor3 &) = default;

private:
  std::array<std::size_t, 3> dims_{0, 0, 0};
  std::vector<double> data_;
};

namespace detail {

inline void check_mode(int mode) {
  if (mode < 1 || mode > 3) {
    throw ParameterError("tensor mode must be 1, 2 or 3, got " + std::to_string(mode));
  }
}

// Row of the unfolding and column within it for element (i, j, k). The
// remaining two indices are flattened row-major in their original order.
inline std::pair<std::size_t, std::size_t> unfold_index(const std::array<std::size_t, 3> &d, int mode,
                                                        std::size_t i, std::size_t j, std::size_t k) {
  switch (mode) {
  case 1:
    return {i, j * d[2] + k};
  case 2:
    return {j, i * d[2] + k};
  default:
    return {k, i * d[1] + j};
  }
}

} // namespace detail

/// Mode-`mode` matricization: d_mode x (product of the other two dims).
inline Matrix unfold(const Tensor3 &t, int mode) {
  detail::check_mode(mode);
  const auto &d = t.dims();
  const std::size_t rows = d[mode - 1];
  Matrix m(rows, t.size() / (rows == 0 ? 1 : rows));
  for (std::size_t i = 0; i < d[0]; ++i) {
    for (std::size_t j = 0; j < d[1]; ++j) {
      for (std::size_t k = 0; k < d[2]; ++k) {
        const auto [r, c] = detail::unfold_index(d, mode, i, j, k);
        m(r, c) = t(i, j, k);
      }
    }
  }
  return m;
}

inline Tensor3 fold(const Matrix &m, std::array<std::size_t, 3> dims, int mode) {
  detail::check_mode(mode);
  const std::size_t rows = dims[mode - 1];
  const std::size_t total = dims[0] * dims[1] * dims[2];
  if (m.rows() != rows || m.size() != total) {
    throw DimensionError("fold: matrix " + m.shape_str() + " does not match mode-" +
                         std::to_string(mode) + " unfolding of " + std::to_string(dims[0]) + "x" +
                         std::to_string(dims[1]) + "x" + std::to_string(dims[2]));
  }
  Tensor3 t(dims);
  for (std::size_t i = 0; i < dims[0]; ++i) {
    for (std::size_t j = 0; j < dims[1]; ++j) {
      for (std::size_t k = 0; k < dims[2]; ++k) {
        const auto [r, c] = detail::unfold_index(dims, mode, i, j, k);
        t(i, j, k) = m(r, c);
      }
    }
  }
  return t;
}

/// GaLore step on an order-3 weight: both tensors are unfolded along `mode`,
/// the matrix step runs on the unfoldings, and the weight is folded back.
inline bool galore_step_tensor3(Tensor3 &w, const Tensor3 &g, int mode, GaLoreLayerState &layer,
                                const AdamHyper &hyper, const ProjectionConfig &cfg, std::size_t step,
                                Rng &rng) {
  if (w.dims() != g.dims()) {
    throw DimensionError("galore_step_tensor3: weight and gradient dims differ");
  }
  Matrix wm = unfold(w, mode);
  const bool refreshed = galore_step(wm, unfold(g, mode), layer, hyper, cfg, step, rng);
  w = fold(wm, w.dims(), mode);
  return refreshed;
}

} // namespace galore
