// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstddef>
#include <string>
#include <string_view>
#include <utility>
#include <variant>

#include "galore/errors.hpp"
#include "galore/linalg.hpp"
#include "galore/matrix.hpp"
#include "galore/quantize.hpp"
#include "galore/rng.hpp"

namespace galore {

enum class ProjectionMethod { Spectral, RandomizedSpectral, RandomGaussian, QuantizedSpectral, Identity };

/// Which factor of the gradient the projector spans. Left projects the row
/// space side (P is m x r, R = Pᵀ G); Right the column side (P is n x r, R = G P).
enum class Side { Left, Right };

inline std::string_view to_string(ProjectionMethod m) {
  switch (m) {
  case ProjectionMethod::Spectral:
    return "spectral";
  case ProjectionMethod::RandomizedSpectral:
    return "randomized";
  case ProjectionMethod::RandomGaussian:
    return "random";
  case ProjectionMethod::QuantizedSpectral:
    return "quantized";
  case ProjectionMethod::Identity:
    return "identity";
  }
  return "?";
}

struct ProjectionConfig {
  std::size_t rank = 128;
  std::size_t update_freq = 500; // T
  ProjectionMethod method = ProjectionMethod::Spectral;
  int quant_bits = 8;
  double alpha = 0.125;
  std::size_t oversample = 8;
  std::size_t power_iters = 1;
  bool reset_moments_on_refresh = false;

  void validate() const {
    if (rank < 1) {
      throw ParameterError("projection rank must be >= 1");
    }
    if (update_freq < 1) {
      throw ParameterError("update frequency T must be >= 1");
    }
    // alpha == 0 is accepted: it freezes the weights while moments advance.
    if (!(alpha >= 0.0)) {
      throw ParameterError("scale alpha must be >= 0");
    }
    if (quant_bits != 4 && quant_bits != 8) {
      throw ParameterError("quant_bits must be 4 or 8");
    }
  }
};

inline Side side_for(std::size_t m, std::size_t n) noexcept { return m <= n ? Side::Left : Side::Right; }

/// A refreshed projector. Immutable once built; a refresh produces a new one.
class ProjectorState {
public:
  ProjectorState(Matrix basis, Side side, ProjectionMethod method, std::size_t refresh_step)
      : side_(side), method_(method), rank_(basis.cols()), dim_(basis.rows()),
        refresh_step_(refresh_step), storage_(std::move(basis)) {}

  ProjectorState(QuantizedMatrix basis, Side side, std::size_t refresh_step)
      : side_(side), method_(ProjectionMethod::QuantizedSpectral), rank_(basis.cols),
        dim_(basis.rows), refresh_step_(refresh_step), storage_(std::move(basis)) {}

  Side side() const noexcept { return side_; }
  ProjectionMethod method() const noexcept { return method_; }
  std::size_t rank() const noexcept { return rank_; }
  /// Length of each basis vector (m for Left, n for Right).
  std::size_t dim() const noexcept { return dim_; }
  std::size_t last_refresh_step() const noexcept { return refresh_step_; }
  bool is_quantized() const noexcept { return std::holds_alternative<QuantizedMatrix>(storage_); }

  const QuantizedMatrix &quantized() const { return std::get<QuantizedMatrix>(storage_); }

  /// Basis as doubles; quantized projectors are dequantized on each call.
  Matrix basis() const {
    if (const auto *q = std::get_if<QuantizedMatrix>(&storage_)) {
      return dequantize_projector(*q);
    }
    return std::get<Matrix>(storage_);
  }

  /// Bytes held by the projector (8 per double, or the packed quantized size).
  std::size_t storage_bytes() const noexcept {
    if (const auto *q = std::get_if<QuantizedMatrix>(&storage_)) {
      return q->storage_bytes();
    }
    return std::get<Matrix>(storage_).size() * sizeof(double);
  }

  friend bool operator==(const ProjectorState &, const ProjectorState &) = default;

private:
  Side side_;
  ProjectionMethod method_;
  std::size_t rank_;
  std::size_t dim_;
  std::size_t refresh_step_;
  std::variant<Matrix, QuantizedMatrix> storage_;
};

inline bool should_refresh(std::size_t step, const ProjectionConfig &cfg) {
  if (cfg.update_freq < 1) {
    throw ParameterError("update frequency T must be >= 1");
  }
  return step % cfg.update_freq == 0;
}

inline ProjectorState compute_projector(const Matrix &g, const ProjectionConfig &cfg, std::size_t step,
                                        Rng &rng) {
  cfg.validate();
  const std::size_t m = g.rows();
  const std::size_t n = g.cols();
  const std::size_t kmax = std::min(m, n);
  const Side side = side_for(m, n);
  const std::size_t dim = side == Side::Left ? m : n;
  if (cfg.rank > kmax) {
    throw ParameterError("projection rank " + std::to_string(cfg.rank) + " exceeds min(m, n) = " +
                         std::to_string(kmax) + " for gradient " + g.shape_str());
  }
  auto spectral_basis = [&](const SvdResult &res) {
    return leading_columns(side == Side::Left ? res.u : res.v, cfg.rank);
  };

  switch (cfg.method) {
  case ProjectionMethod::Spectral:
    return {spectral_basis(svd_full(g)), side, cfg.method, step};
  case ProjectionMethod::RandomizedSpectral: {
    const std::size_t oversample = std::min(cfg.oversample, kmax - cfg.rank);
    return {spectral_basis(randomized_svd(g, cfg.rank, oversample, cfg.power_iters, rng)), side,
            cfg.method, step};
  }
  case ProjectionMethod::RandomGaussian:
    return {qr_thin(gaussian(rng, dim, cfg.rank)).q, side, cfg.method, step};
  case ProjectionMethod::QuantizedSpectral:
    return {quantize_projector(spectral_basis(svd_full(g)), cfg.quant_bits), side, step};
  case ProjectionMethod::Identity:
    if (cfg.rank != kmax) {
      throw ParameterError("identity projector needs rank == min(m, n) = " + std::to_string(kmax));
    }
    return {Matrix::identity(dim), side, cfg.method, step};
  }
  throw ParameterError("unknown projection method");
}

/// R = Pᵀ G (Left, r x n) or R = G P (Right, m x r).
inline Matrix project(const ProjectorState &ps, const Matrix &g) {
  const Matrix p = ps.basis();
  if (ps.side() == Side::Left) {
    if (g.rows() != p.rows()) {
      throw DimensionError("project: left projector " + p.shape_str() + " vs gradient " + g.shape_str());
    }
    return matmul(transpose(p), g);
  }
  if (g.cols() != p.rows()) {
    throw DimensionError("project: right projector " + p.shape_str() + " vs gradient " + g.shape_str());
  }
  return matmul(g, p);
}

/// alpha * P N (Left) or alpha * N Pᵀ (Right), back in the full weight shape.
inline Matrix back_project(const ProjectorState &ps, const Matrix &lowrank, double alpha) {
  const Matrix p = ps.basis();
  if (ps.side() == Side::Left) {
    if (lowrank.rows() != p.cols()) {
      throw DimensionError("back_project: left projector " + p.shape_str() + " vs update " +
                           lowrank.shape_str());
    }
    return alpha * matmul(p, lowrank);
  }
  if (lowrank.cols() != p.cols()) {
    throw DimensionError("back_project: right projector " + p.shape_str() + " vs update " +
                         lowrank.shape_str());
  }
  return alpha * matmul(lowrank, transpose(p));
}

} // namespace galore
