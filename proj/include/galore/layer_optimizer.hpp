// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstddef>
#include <string>

#include "galore/errors.hpp"
#include "galore/matrix.hpp"
#include "galore/optim.hpp"
#include "galore/projector.hpp"
#include "galore/rng.hpp"

namespace galore {

enum class OptimizerKind { FullAdam, Adam8bit, GaLore };

inline std::string to_string(OptimizerKind k) {
  switch (k) {
  case OptimizerKind::FullAdam:
    return "adam";
  case OptimizerKind::Adam8bit:
    return "adam8bit";
  case OptimizerKind::GaLore:
    return "galore";
  }
  return "?";
}

/// Which optimizer runs on every weight matrix of a model.
struct OptimizerSpec {
  OptimizerKind kind = OptimizerKind::FullAdam;
  AdamHyper hyper;
  ProjectionConfig proj;
  /// Moment storage for GaLore's low-rank moments.
  MomentStorage galore_moments = MomentStorage::Full64;
  std::size_t block_size = 256;

  MomentStorage moment_storage() const noexcept {
    switch (kind) {
    case OptimizerKind::FullAdam:
      return MomentStorage::Full64;
    case OptimizerKind::Adam8bit:
      return MomentStorage::Quantized8;
    case OptimizerKind::GaLore:
      return galore_moments;
    }
    return MomentStorage::Full64;
  }

  void validate() const {
    hyper.validate();
    if (kind == OptimizerKind::GaLore) {
      proj.validate();
    }
    if (block_size < 1) {
      throw ParameterError("optimizer: block_size must be >= 1");
    }
  }
};

/// Projection config for one m x n layer: the rank is capped at min(m, n),
/// and the identity projector always uses the full min(m, n).
inline ProjectionConfig layer_projection(const ProjectionConfig &cfg, std::size_t m, std::size_t n) {
  ProjectionConfig c = cfg;
  const std::size_t full = std::min(m, n);
  c.rank = c.method == ProjectionMethod::Identity ? full : std::min(c.rank, full);
  return c;
}

inline GaLoreLayerState make_layer_state(const OptimizerSpec &spec) {
  return GaLoreLayerState{std::nullopt, AdamState(spec.moment_storage(), spec.block_size)};
}

/// One optimizer update of `w` with loss gradient `g`; `hyper` carries the
/// learning rate for this step. Returns true when a projector was refreshed.
inline bool layer_step(Matrix &w, const Matrix &g, GaLoreLayerState &state, const OptimizerSpec &spec,
                       const AdamHyper &hyper, std::size_t step, Rng &rng) {
  if (spec.kind != OptimizerKind::GaLore) {
    if (step != state.adam.t()) {
      throw ParameterError("adam: step " + std::to_string(step) + " does not match optimizer step " +
                           std::to_string(state.adam.t()));
    }
    adam_step(w, g, state.adam, hyper);
    return false;
  }
  return galore_step(w, g, state, hyper, layer_projection(spec.proj, w.rows(), w.cols()), step, rng);
}

} // namespace galore
