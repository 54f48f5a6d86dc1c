// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "galore/errors.hpp"
#include "galore/matrix.hpp"
#include "galore/rng.hpp"

namespace galore {

enum class ModelVariant { Linear, MLP2 };

/// Linear: y = W x with W of shape out x in.
/// MLP2:   y = W2 tanh(W1 x) with W1: hidden x in, W2: out x hidden.
///
/// Samples are rows: a batch is X (B x in) and Y (B x out). The loss is the
/// batch mean of the per-sample squared error summed over outputs.
struct ToyModel {
  ModelVariant variant = ModelVariant::Linear;
  std::vector<Matrix> weights;

  std::size_t input_dim() const { return weights.front().cols(); }
  std::size_t output_dim() const { return weights.back().rows(); }
  std::size_t num_layers() const noexcept { return weights.size(); }

  void validate() const {
    const std::size_t want = variant == ModelVariant::Linear ? 1 : 2;
    if (weights.size() != want) {
      throw DimensionError("toy model: expected " + std::to_string(want) + " weight matrices");
    }
    for (std::size_t l = 1; l < weights.size(); ++l) {
      if (weights[l].cols() != weights[l - 1].rows()) {
        throw DimensionError("toy model: layer " + std::to_string(l) + " input does not match");
      }
    }
    for (const auto &w : weights) {
      if (w.empty()) {
        throw DimensionError("toy model: empty weight");
      }
    }
  }

  static ToyModel linear(Matrix w) { return {ModelVariant::Linear, {std::move(w)}}; }
  static ToyModel mlp2(Matrix w1, Matrix w2) { return {ModelVariant::MLP2, {std::move(w1), std::move(w2)}}; }
};

struct Dataset {
  Matrix x; // samples x in
  Matrix y; // samples x out

  std::size_t size() const noexcept { return x.rows(); }
};

namespace detail {

// X W^T without materializing the transpose.
inline Matrix times_transpose(const Matrix &x, const Matrix &w) {
  if (x.cols() != w.cols()) {
    throw DimensionError("toy model: input " + x.shape_str() + " does not match weight " + w.shape_str());
  }
  Matrix out(x.rows(), w.rows());
  for (std::size_t b = 0; b < x.rows(); ++b) {
    for (std::size_t o = 0; o < w.rows(); ++o) {
      double acc = 0.0;
      for (std::size_t i = 0; i < x.cols(); ++i) {
        acc += x(b, i) * w(o, i);
      }
      out(b, o) = acc;
    }
  }
  return out;
}

// A^T B for A: B x p, B: B x q, giving p x q.
inline Matrix transpose_times(const Matrix &a, const Matrix &b) {
  Matrix out(a.cols(), b.cols());
  for (std::size_t s = 0; s < a.rows(); ++s) {
    for (std::size_t p = 0; p < a.cols(); ++p) {
      const double av = a(s, p);
      if (av == 0.0) {
        continue;
      }
      for (std::size_t q = 0; q < b.cols(); ++q) {
        out(p, q) += av * b(s, q);
      }
    }
  }
  return out;
}

} // namespace detail

/// Forward activations; inputs[l] is the input to layer l.
struct ForwardCache {
  std::vector<Matrix> inputs;
  Matrix output;
};

inline ForwardCache forward(const ToyModel &model, const Matrix &x) {
  ForwardCache c;
  Matrix h = x;
  for (std::size_t l = 0; l < model.weights.size(); ++l) {
    c.inputs.push_back(h);
    h = detail::times_transpose(h, model.weights[l]);
    if (l + 1 < model.weights.size()) {
      for (double &v : h.data()) {
        v = std::tanh(v);
      }
    }
  }
  c.output = std::move(h);
  return c;
}

inline Matrix predict(const ToyModel &model, const Matrix &x) { return forward(model, x).output; }

inline double mse(const Matrix &pred, const Matrix &y) {
  require_same_shape(pred, y, "mse");
  if (pred.rows() == 0) {
    throw DimensionError("mse: empty batch");
  }
  double acc = 0.0;
  auto p = pred.data();
  auto t = y.data();
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double d = p[i] - t[i];
    acc += d * d;
  }
  return acc / static_cast<double>(pred.rows());
}

inline double loss(const ToyModel &model, const Matrix &x, const Matrix &y) { return mse(predict(model, x), y); }
inline double loss(const ToyModel &model, const Dataset &d) { return loss(model, d.x, d.y); }

/// Backward pass that yields one layer gradient at a time, last layer first.
///
/// `next()` returns the gradient of the deepest layer not yet visited and
/// propagates the error signal through that layer's current weights before
/// returning, so the caller may update those weights immediately (the fused
/// per-layer update) without changing the remaining gradients.
class BackwardPass {
public:
  BackwardPass(const ToyModel &model, const Matrix &x, const Matrix &y) : model_(model) {
    if (x.rows() == 0) {
      throw DimensionError("backward: empty batch");
    }
    cache_ = forward(model, x);
    require_same_shape(cache_.output, y, "backward");
    loss_ = mse(cache_.output, y);
    delta_ = cache_.output - y;
    const double scale = 2.0 / static_cast<double>(x.rows());
    for (double &v : delta_.data()) {
      v *= scale;
    }
    layer_ = model.weights.size();
  }

  double loss() const noexcept { return loss_; }
  bool done() const noexcept { return layer_ == 0; }
  /// Index of the layer the next call to next() returns.
  std::size_t next_layer() const noexcept { return layer_ - 1; }

  std::pair<std::size_t, Matrix> next() {
    if (done()) {
      throw ParameterError("backward: no layers left");
    }
    const std::size_t l = --layer_;
    Matrix grad = detail::transpose_times(delta_, cache_.inputs[l]);
    if (l > 0) {
      Matrix back = matmul(delta_, model_.weights[l]);
      // inputs[l] = tanh(pre-activation), so tanh' = 1 - inputs[l]^2.
      const auto h = cache_.inputs[l].data();
      auto b = back.data();
      for (std::size_t i = 0; i < b.size(); ++i) {
        b[i] *= 1.0 - h[i] * h[i];
      }
      delta_ = std::move(back);
    }
    return {l, std::move(grad)};
  }

private:
  const ToyModel &model_;
  ForwardCache cache_;
  Matrix delta_;
  double loss_ = 0.0;
  std::size_t layer_ = 0;
};

/// Analytic gradients of the batch MSE, one per weight matrix.
inline std::vector<Matrix> gradients(const ToyModel &model, const Matrix &x, const Matrix &y,
                                     double *loss_out = nullptr) {
  BackwardPass bp(model, x, y);
  std::vector<Matrix> grads(model.weights.size());
  while (!bp.done()) {
    auto [l, g] = bp.next();
    grads[l] = std::move(g);
  }
  if (loss_out != nullptr) {
    *loss_out = bp.loss();
  }
  return grads;
}

/// Matrix of iid N(0, scale^2) entries.
inline Matrix scaled_gaussian(Rng &rng, std::size_t rows, std::size_t cols, double scale) {
  Matrix m = gaussian(rng, rows, cols);
  for (double &v : m.data()) {
    v *= scale;
  }
  return m;
}

/// Teacher with weights of exact rank `rank` (0 means full rank), scaled so
/// each layer roughly preserves the input variance.
inline ToyModel make_teacher(Rng &rng, ModelVariant variant, std::size_t in, std::size_t hidden, std::size_t out,
                             std::size_t rank = 0) {
  auto layer = [&](std::size_t rows, std::size_t cols) {
    const std::size_t k = rank == 0 ? std::min(rows, cols) : std::min(rank, std::min(rows, cols));
    const Matrix a = scaled_gaussian(rng, rows, k, 1.0 / std::sqrt(static_cast<double>(k)));
    const Matrix b = scaled_gaussian(rng, k, cols, 1.0 / std::sqrt(static_cast<double>(cols)));
    return matmul(a, b);
  };
  if (variant == ModelVariant::Linear) {
    return ToyModel::linear(layer(out, in));
  }
  Matrix w1 = layer(hidden, in);
  Matrix w2 = layer(out, hidden);
  return ToyModel::mlp2(std::move(w1), std::move(w2));
}

/// Student of the same architecture with small random weights.
inline ToyModel make_student(Rng &rng, const ToyModel &like, double scale = 0.1) {
  ToyModel s;
  s.variant = like.variant;
  for (const auto &w : like.weights) {
    s.weights.push_back(scaled_gaussian(rng, w.rows(), w.cols(), scale / std::sqrt(static_cast<double>(w.cols()))));
  }
  return s;
}

struct SplitDataset {
  Dataset train;
  Dataset val;
  std::vector<std::size_t> train_index; // positions in the generated sample order
  std::vector<std::size_t> val_index;
};

/// Gaussian inputs, teacher targets plus N(0, noise_sd^2) noise, and a
/// seeded disjoint train/val split (val gets `val_frac` of the samples,
/// at least one).
inline SplitDataset make_dataset(Rng &rng, const ToyModel &teacher, std::size_t n_samples, double noise_sd,
                                 double val_frac = 0.2) {
  teacher.validate();
  if (n_samples < 2) {
    throw ParameterError("make_dataset: need at least 2 samples");
  }
  if (!(val_frac > 0.0 && val_frac < 1.0) || !(noise_sd >= 0.0)) {
    throw ParameterError("make_dataset: val_frac in (0, 1) and noise_sd >= 0 required");
  }
  const Matrix x = gaussian(rng, n_samples, teacher.input_dim());
  Matrix y = predict(teacher, x);
  if (noise_sd > 0.0) {
    for (double &v : y.data()) {
      v += noise_sd * rng.normal();
    }
  }
  std::vector<std::size_t> perm(n_samples);
  for (std::size_t i = 0; i < n_samples; ++i) {
    perm[i] = i;
  }
  for (std::size_t i = n_samples - 1; i > 0; --i) {
    std::swap(perm[i], perm[rng.uniform_index(i + 1)]);
  }
  std::size_t n_val = static_cast<std::size_t>(std::round(val_frac * static_cast<double>(n_samples)));
  n_val = std::clamp<std::size_t>(n_val, 1, n_samples - 1);

  auto take = [&](std::size_t lo, std::size_t hi, std::vector<std::size_t> &index) {
    Dataset d{Matrix(hi - lo, x.cols()), Matrix(hi - lo, y.cols())};
    for (std::size_t r = lo; r < hi; ++r) {
      const std::size_t src = perm[r];
      index.push_back(src);
      std::copy(x.row(src).begin(), x.row(src).end(), d.x.row(r - lo).begin());
      std::copy(y.row(src).begin(), y.row(src).end(), d.y.row(r - lo).begin());
    }
    return d;
  };
  SplitDataset out;
  out.val = take(0, n_val, out.val_index);
  out.train = take(n_val, n_samples, out.train_index);
  return out;
}

/// `batch` rows drawn with replacement.
inline Dataset sample_batch(Rng &rng, const Dataset &d, std::size_t batch) {
  if (batch == 0 || d.size() == 0) {
    throw ParameterError("sample_batch: empty batch or dataset");
  }
  Dataset b{Matrix(batch, d.x.cols()), Matrix(batch, d.y.cols())};
  for (std::size_t r = 0; r < batch; ++r) {
    const std::size_t src = rng.uniform_index(d.size());
    std::copy(d.x.row(src).begin(), d.x.row(src).end(), b.x.row(r).begin());
    std::copy(d.y.row(src).begin(), d.y.row(src).end(), b.y.row(r).begin());
  }
  return b;
}

/// Rows [lo, hi) of a dataset.
inline Dataset slice_rows(const Dataset &d, std::size_t lo, std::size_t hi) {
  if (lo > hi || hi > d.size()) {
    throw DimensionError("slice_rows: range out of bounds");
  }
  Dataset s{Matrix(hi - lo, d.x.cols()), Matrix(hi - lo, d.y.cols())};
  for (std::size_t r = lo; r < hi; ++r) {
    std::copy(d.x.row(r).begin(), d.x.row(r).end(), s.x.row(r - lo).begin());
    std::copy(d.y.row(r).begin(), d.y.row(r).end(), s.y.row(r - lo).begin());
  }
  return s;
}

} // namespace galore
