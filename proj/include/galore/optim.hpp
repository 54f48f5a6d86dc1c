// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>

#include "galore/errors.hpp"
#include "galore/matrix.hpp"
#include "galore/projector.hpp"
#include "galore/quantize.hpp"
#include "galore/rng.hpp"

namespace galore {

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  bool bias_correction = true;
  /// Decoupled decay applied as w -= lr * weight_decay * w before the update.
  double weight_decay = 0.0;

  void validate() const {
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
      throw ParameterError("adam: beta1 and beta2 must lie in [0, 1)");
    }
    if (!(eps > 0.0)) {
      throw ParameterError("adam: eps must be > 0");
    }
    if (!(lr >= 0.0) || !(weight_decay >= 0.0)) {
      throw ParameterError("adam: lr and weight_decay must be >= 0");
    }
  }
};

enum class MomentStorage { Full64, Quantized8 };

/// Adam moments for one parameter (full-rank) or one projected gradient
/// (low-rank). Moments take the shape of the first gradient they see.
class AdamState {
public:
  AdamState() = default;
  explicit AdamState(MomentStorage storage, std::size_t block_size = 256)
      : storage_(storage), block_size_(block_size) {
    if (block_size_ < 1) {
      throw ParameterError("adam: block_size must be >= 1");
    }
  }

  MomentStorage storage() const noexcept { return storage_; }
  std::size_t block_size() const noexcept { return block_size_; }
  /// Completed updates.
  std::size_t t() const noexcept { return t_; }
  void set_t(std::size_t t) noexcept { t_ = t; }
  bool initialized() const noexcept { return rows_ > 0; }
  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  /// Elements held across both moments.
  std::size_t moment_elements() const noexcept { return 2 * rows_ * cols_; }

  Matrix first_moment() const {
    return storage_ == MomentStorage::Full64 ? m_ : dequantize_moment(qm_);
  }
  Matrix second_moment() const {
    return storage_ == MomentStorage::Full64 ? v_ : dequantize_moment(qv_);
  }

  void store(Matrix m, Matrix v) {
    rows_ = m.rows();
    cols_ = m.cols();
    if (storage_ == MomentStorage::Full64) {
      m_ = std::move(m);
      v_ = std::move(v);
    } else {
      qm_ = quantize_moment(m, block_size_, true);
      qv_ = quantize_moment(v, block_size_, false);
    }
  }

  void ensure_shape(std::size_t rows, std::size_t cols) {
    if (!initialized()) {
      store(Matrix(rows, cols), Matrix(rows, cols));
    } else if (rows != rows_ || cols != cols_) {
      throw DimensionError("adam: gradient " + std::to_string(rows) + "x" + std::to_string(cols) +
                           " does not match moment shape " + std::to_string(rows_) + "x" +
                           std::to_string(cols_));
    }
  }

  /// Zeroes both moments, keeping the shape and the step counter.
  void reset_moments() {
    if (initialized()) {
      store(Matrix(rows_, cols_), Matrix(rows_, cols_));
    }
  }

private:
  MomentStorage storage_ = MomentStorage::Full64;
  std::size_t block_size_ = 256;
  std::size_t t_ = 0;
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  Matrix m_, v_;
  QuantizedMoment qm_, qv_;
};

/// One Adam moment update on `grad`; returns the normalized direction N.
///
///   M = b1 M + (1 - b1) R,  V = b2 V + (1 - b2) R^2
///   N = M_hat / (sqrt(V_hat) + eps)
///
/// with bias-corrected M_hat, V_hat at t' = t + 1 (or M, V when bias
/// correction is off). Quantized storage is dequantized before and
/// re-quantized after the update.
inline Matrix adam_lowrank_update(AdamState &state, const Matrix &grad, const AdamHyper &hyper) {
  hyper.validate();
  const std::size_t t = state.t() + 1;
  if (!grad.all_finite()) {
    throw NumericError("adam: non-finite gradient at step " + std::to_string(t), t);
  }
  state.ensure_shape(grad.rows(), grad.cols());
  Matrix m = state.first_moment();
  Matrix v = state.second_moment();
  Matrix n(grad.rows(), grad.cols());

  const double b1 = hyper.beta1;
  const double b2 = hyper.beta2;
  const double c1 = hyper.bias_correction ? 1.0 - std::pow(b1, static_cast<double>(t)) : 1.0;
  const double c2 = hyper.bias_correction ? 1.0 - std::pow(b2, static_cast<double>(t)) : 1.0;
  auto gd = grad.data();
  auto md = m.data();
  auto vd = v.data();
  auto nd = n.data();
  for (std::size_t i = 0; i < gd.size(); ++i) {
    const double g = gd[i];
    md[i] = b1 * md[i] + (1.0 - b1) * g;
    vd[i] = b2 * vd[i] + (1.0 - b2) * g * g;
    const double mhat = md[i] / c1;
    const double vhat = vd[i] / c2;
    nd[i] = mhat / (std::sqrt(vhat) + hyper.eps);
  }
  state.store(std::move(m), std::move(v));
  state.set_t(t);
  return n;
}

namespace detail {

inline void apply_update(Matrix &w, const Matrix &direction, const AdamHyper &hyper) {
  auto wd = w.data();
  auto dd = direction.data();
  if (hyper.weight_decay != 0.0) {
    for (double &x : wd) {
      x -= hyper.lr * hyper.weight_decay * x;
    }
  }
  for (std::size_t i = 0; i < wd.size(); ++i) {
    wd[i] -= hyper.lr * dd[i];
  }
}

} // namespace detail

/// Full-rank Adam: w -= lr * N(g). `g` is the loss gradient.
inline void adam_step(Matrix &w, const Matrix &g, AdamState &state, const AdamHyper &hyper) {
  require_same_shape(w, g, "adam_step");
  const Matrix n = adam_lowrank_update(state, g, hyper);
  detail::apply_update(w, n, hyper);
}

/// Per-layer GaLore optimizer state: the current projector and the low-rank
/// Adam moments.
struct GaLoreLayerState {
  std::optional<ProjectorState> projector;
  AdamState adam;
};

/// One GaLore-Adam step on a single weight matrix.
///
/// `g` is the loss gradient; the update is w -= lr * alpha * P N, which is
/// the negative-gradient form W += lr * alpha * P N(-g) because N is odd in
/// its input. Returns true when the projector was refreshed.
inline bool galore_step(Matrix &w, const Matrix &g, GaLoreLayerState &layer, const AdamHyper &hyper,
                        const ProjectionConfig &cfg, std::size_t step, Rng &rng) {
  require_same_shape(w, g, "galore_step");
  if (step != layer.adam.t()) {
    throw ParameterError("galore_step: step " + std::to_string(step) +
                         " does not match optimizer step " + std::to_string(layer.adam.t()));
  }
  if (!g.all_finite()) {
    throw NumericError("galore_step: non-finite gradient at step " + std::to_string(step + 1), step + 1);
  }
  bool refreshed = false;
  if (!layer.projector || should_refresh(step, cfg)) {
    layer.projector = compute_projector(g, cfg, step, rng);
    refreshed = true;
    if (cfg.reset_moments_on_refresh) {
      layer.adam.reset_moments();
    }
  }
  const Matrix r = project(*layer.projector, g);
  const Matrix n = adam_lowrank_update(layer.adam, r, hyper);
  const Matrix update = back_project(*layer.projector, n, cfg.alpha);
  detail::apply_update(w, update, hyper);
  return refreshed;
}

} // namespace galore
