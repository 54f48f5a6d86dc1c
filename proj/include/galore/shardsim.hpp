// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <functional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "galore/errors.hpp"
#include "galore/layer_optimizer.hpp"
#include "galore/matrix.hpp"
#include "galore/optim.hpp"
#include "galore/projector.hpp"
#include "galore/rng.hpp"
#include "galore/toy_model.hpp"

namespace galore {

// ---------------------------------------------------------------------------
// Flat sharding

/// Shard length for `total` elements over `world` ranks (padded up).
inline std::size_t shard_size(std::size_t total, std::size_t world) {
  if (world < 1) {
    throw ParameterError("world size must be >= 1");
  }
  return (total + world - 1) / world;
}

/// Row-major flatten, zero-pad to a multiple of `world`, split evenly.
inline std::vector<std::vector<double>> shard(const Matrix &x, std::size_t world) {
  const std::size_t len = shard_size(x.size(), world);
  std::vector<std::vector<double>> out(world, std::vector<double>(len, 0.0));
  const auto d = x.data();
  for (std::size_t i = 0; i < d.size(); ++i) {
    out[i / len][i % len] = d[i];
  }
  return out;
}

/// Inverse of shard(): concatenates and drops the padding.
inline Matrix unshard(const std::vector<std::vector<double>> &shards, std::size_t rows, std::size_t cols) {
  const std::size_t total = rows * cols;
  std::size_t have = 0;
  for (std::size_t k = 0; k < shards.size(); ++k) {
    if (shards[k].size() != shards.front().size()) {
      throw ProtocolError("unshard: ranks hold shards of different length");
    }
    have += shards[k].size();
  }
  if (shards.empty() || have < total || have - total >= shards.size()) {
    throw DimensionError("unshard: shards do not cover a " + std::to_string(rows) + "x" + std::to_string(cols) +
                         " matrix");
  }
  Matrix x(rows, cols);
  auto d = x.data();
  const std::size_t len = shards.front().size();
  for (std::size_t i = 0; i < total; ++i) {
    d[i] = shards[i / len][i % len];
  }
  return x;
}

// ---------------------------------------------------------------------------
// Collectives
//
// Reductions add the rank contributions in rank order 0..world-1 starting
// from rank 0's value, then optionally divide by the world size, so every
// path through these helpers produces bit-identical sums.

namespace detail {

inline void require_uniform_shapes(const std::vector<Matrix> &per_rank, const char *what) {
  if (per_rank.empty()) {
    throw ProtocolError(std::string(what) + ": no ranks");
  }
  for (const auto &m : per_rank) {
    if (!same_shape(m, per_rank.front())) {
      throw ProtocolError(std::string(what) + ": ranks contributed " + per_rank.front().shape_str() + " and " +
                          m.shape_str());
    }
  }
}

inline Matrix ordered_sum(const std::vector<Matrix> &per_rank, bool average) {
  Matrix acc = per_rank.front();
  auto a = acc.data();
  for (std::size_t k = 1; k < per_rank.size(); ++k) {
    const auto b = per_rank[k].data();
    for (std::size_t i = 0; i < a.size(); ++i) {
      a[i] += b[i];
    }
  }
  if (average && per_rank.size() > 1) {
    const double w = static_cast<double>(per_rank.size());
    for (double &v : a) {
      v /= w;
    }
  }
  return acc;
}

} // namespace detail

inline Matrix all_reduce(const std::vector<Matrix> &per_rank, bool average = true) {
  detail::require_uniform_shapes(per_rank, "all_reduce");
  return detail::ordered_sum(per_rank, average);
}

inline std::vector<std::vector<double>> reduce_scatter(const std::vector<Matrix> &per_rank, bool average = true) {
  detail::require_uniform_shapes(per_rank, "reduce_scatter");
  return shard(detail::ordered_sum(per_rank, average), per_rank.size());
}

inline Matrix all_gather(const std::vector<std::vector<double>> &shards, std::size_t rows, std::size_t cols) {
  return unshard(shards, rows, cols);
}

enum class CollectiveKind { AllReduce, ReduceScatter, AllGather, Broadcast };

inline std::string to_string(CollectiveKind k) {
  switch (k) {
  case CollectiveKind::AllReduce:
    return "all_reduce";
  case CollectiveKind::ReduceScatter:
    return "reduce_scatter";
  case CollectiveKind::AllGather:
    return "all_gather";
  case CollectiveKind::Broadcast:
    return "broadcast";
  }
  return "?";
}

struct CollectiveRecord {
  std::size_t step = 0;
  std::size_t layer = 0;
  CollectiveKind kind = CollectiveKind::AllReduce;
  std::string payload; // grad, weight, projector, lowrank_grad, lowrank_update
  std::size_t elements = 0;

  friend bool operator==(const CollectiveRecord &, const CollectiveRecord &) = default;
};

struct CollectiveLog {
  std::vector<CollectiveRecord> records;

  std::size_t total_elements(CollectiveKind kind, const std::string &payload) const {
    std::size_t s = 0;
    for (const auto &r : records) {
      if (r.kind == kind && r.payload == payload) {
        s += r.elements;
      }
    }
    return s;
  }

  /// CSV with header `step,layer,op,elements`; op is `<collective>:<payload>`.
  std::string to_csv() const {
    std::ostringstream os;
    os << "step,layer,op,elements\n";
    for (const auto &r : records) {
      os << r.step << ',' << r.layer << ',' << to_string(r.kind) << ':' << r.payload << ',' << r.elements << '\n';
    }
    return os.str();
  }

  friend bool operator==(const CollectiveLog &, const CollectiveLog &) = default;
};

// ---------------------------------------------------------------------------
// Ranks

enum class ParallelMode { DDP, FSDP };

/// One layer as seen by one rank. Under FSDP `w` is this rank's padded flat
/// shard and the optimizer state covers the matching shard (of W for Adam,
/// of the projected gradient for GaLore). Under DDP `w` holds the full
/// row-major weight and the state is a full replica.
struct LayerShard {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> w;
  GaLoreLayerState opt;
};

struct RankContext {
  std::size_t rank = 0;
  std::size_t world = 1;
  ParallelMode mode = ParallelMode::FSDP;
  ModelVariant variant = ModelVariant::Linear;
  OptimizerSpec spec;
  std::size_t step = 0;
  std::vector<LayerShard> layers;
  /// Full-shape gradient elements currently held, and their maximum.
  std::size_t grad_live = 0;
  std::size_t grad_high_water = 0;
  CollectiveLog log;
  /// Projector randomness; FSDP draws from rank 0 only.
  Rng rng;

  void hold_grad(std::size_t elements) {
    grad_live += elements;
    grad_high_water = std::max(grad_high_water, grad_live);
  }
  void release_grad(std::size_t elements) { grad_live -= elements; }
};

inline std::vector<RankContext> make_ranks(const ToyModel &init, std::size_t world, ParallelMode mode,
                                           const OptimizerSpec &spec, const Rng &projector_rng) {
  init.validate();
  spec.validate();
  if (world < 1) {
    throw ParameterError("world size must be >= 1");
  }
  std::vector<RankContext> ranks(world);
  for (std::size_t k = 0; k < world; ++k) {
    RankContext &rc = ranks[k];
    rc.rank = k;
    rc.world = world;
    rc.mode = mode;
    rc.variant = init.variant;
    rc.spec = spec;
    rc.rng = projector_rng;
    for (const auto &w : init.weights) {
      LayerShard ls;
      ls.rows = w.rows();
      ls.cols = w.cols();
      if (mode == ParallelMode::FSDP) {
        ls.w = shard(w, world)[k];
      } else {
        ls.w.assign(w.data().begin(), w.data().end());
      }
      ls.opt = make_layer_state(spec);
      rc.layers.push_back(std::move(ls));
    }
  }
  return ranks;
}

/// Full model reassembled from the ranks (all-gather of every layer).
inline ToyModel gather_model(const std::vector<RankContext> &ranks) {
  if (ranks.empty()) {
    throw ProtocolError("gather_model: no ranks");
  }
  ToyModel m;
  m.variant = ranks.front().variant;
  for (std::size_t l = 0; l < ranks.front().layers.size(); ++l) {
    const auto &ref = ranks.front().layers[l];
    if (ranks.front().mode == ParallelMode::DDP) {
      m.weights.emplace_back(ref.rows, ref.cols, ref.w);
      continue;
    }
    std::vector<std::vector<double>> shards;
    for (const auto &rc : ranks) {
      shards.push_back(rc.layers[l].w);
    }
    m.weights.push_back(unshard(shards, ref.rows, ref.cols));
  }
  return m;
}

namespace detail {

inline void for_each_rank(std::size_t world, bool threaded, const std::function<void(std::size_t)> &fn) {
  if (!threaded || world == 1) {
    for (std::size_t k = 0; k < world; ++k) {
      fn(k);
    }
    return;
  }
  std::vector<std::exception_ptr> errors(world);
  {
    std::vector<std::jthread> threads;
    threads.reserve(world);
    for (std::size_t k = 0; k < world; ++k) {
      threads.emplace_back([&, k] {
        try {
          fn(k);
        } catch (...) {
          errors[k] = std::current_exception();
        }
      });
    }
  }
  for (auto &e : errors) {
    if (e) {
      std::rethrow_exception(e);
    }
  }
}

inline void log_all(std::vector<RankContext> &ranks, std::size_t layer, CollectiveKind kind,
                    const std::string &payload, std::size_t elements) {
  for (auto &rc : ranks) {
    rc.log.records.push_back({rc.step, layer, kind, payload, elements});
  }
}

inline void check_lockstep(const std::vector<RankContext> &ranks, const std::vector<Dataset> &batches,
                           ParallelMode mode) {
  if (ranks.empty()) {
    throw ProtocolError("no ranks");
  }
  if (batches.size() != ranks.size()) {
    throw ProtocolError("expected one micro-batch per rank, got " + std::to_string(batches.size()) + " for " +
                        std::to_string(ranks.size()) + " ranks");
  }
  for (const auto &rc : ranks) {
    if (rc.mode != mode) {
      throw ProtocolError("rank " + std::to_string(rc.rank) + " is in the wrong parallel mode");
    }
    if (rc.step != ranks.front().step) {
      throw ProtocolError("rank " + std::to_string(rc.rank) + " is at step " + std::to_string(rc.step) +
                          ", rank 0 at step " + std::to_string(ranks.front().step));
    }
    if (rc.world != ranks.size() || rc.layers.size() != ranks.front().layers.size()) {
      throw ProtocolError("rank " + std::to_string(rc.rank) + " disagrees on world size or layer count");
    }
  }
}

inline Matrix row_matrix(const std::vector<double> &v) {
  Matrix m(1, v.size());
  std::copy(v.begin(), v.end(), m.data().begin());
  return m;
}

} // namespace detail

struct ShardedStepResult {
  double loss = 0.0; // mean of the ranks' micro-batch losses
  bool refreshed = false;
};

/// One FSDP step with per-layer fused updates.
///
/// Weights are all-gathered layer by layer for the forward pass. Then, for
/// each layer from last to first: every rank computes its local full-shape
/// gradient, the gradients are averaged by reduce-scatter, and each rank
/// updates its shard. GaLore refreshes gather the averaged gradient to rank 0,
/// which computes the projector and broadcasts it. Because W is sharded flat
/// (not along the projected dimension), each rank projects its masked
/// gradient shard and the partial projections are summed by a second
/// reduce-scatter; the normalized low-rank update is all-gathered so each
/// rank can form its own slice of P N.
inline ShardedStepResult fsdp_train_step(std::vector<RankContext> &ranks, const std::vector<Dataset> &batches,
                                         const AdamHyper &hyper, bool threaded = false) {
  detail::check_lockstep(ranks, batches, ParallelMode::FSDP);
  const std::size_t world = ranks.size();
  const std::size_t step = ranks.front().step;
  const std::size_t n_layers = ranks.front().layers.size();
  const OptimizerSpec &spec = ranks.front().spec;

  // Forward: every rank materializes the full weights from the shards.
  ToyModel full;
  full.variant = ranks.front().variant;
  for (std::size_t l = 0; l < n_layers; ++l) {
    std::vector<std::vector<double>> shards;
    for (const auto &rc : ranks) {
      shards.push_back(rc.layers[l].w);
    }
    const auto &ref = ranks.front().layers[l];
    full.weights.push_back(all_gather(shards, ref.rows, ref.cols));
    detail::log_all(ranks, l, CollectiveKind::AllGather, "weight", ref.rows * ref.cols);
  }

  std::vector<BackwardPass> passes;
  passes.reserve(world);
  for (std::size_t k = 0; k < world; ++k) {
    passes.emplace_back(full, batches[k].x, batches[k].y);
  }

  ShardedStepResult result;
  std::vector<Matrix> local(world);
  while (!passes.front().done()) {
    const std::size_t l = passes.front().next_layer();
    const std::size_t rows = ranks.front().layers[l].rows;
    const std::size_t cols = ranks.front().layers[l].cols;
    const std::size_t elems = rows * cols;

    detail::for_each_rank(world, threaded, [&](std::size_t k) {
      local[k] = passes[k].next().second;
      ranks[k].hold_grad(elems);
    });
    const auto grad_shards = reduce_scatter(local, true);
    detail::log_all(ranks, l, CollectiveKind::ReduceScatter, "grad", elems);
    for (std::size_t k = 0; k < world; ++k) {
      local[k] = Matrix();
      ranks[k].release_grad(elems);
    }

    if (spec.kind != OptimizerKind::GaLore) {
      detail::for_each_rank(world, threaded, [&](std::size_t k) {
        LayerShard &ls = ranks[k].layers[l];
        if (ls.opt.adam.t() != step) {
          throw ProtocolError("rank " + std::to_string(k) + " optimizer state is out of step");
        }
        Matrix w = detail::row_matrix(ls.w);
        adam_step(w, detail::row_matrix(grad_shards[k]), ls.opt.adam, hyper);
        std::copy(w.data().begin(), w.data().end(), ls.w.begin());
      });
      continue;
    }

    const ProjectionConfig cfg = layer_projection(spec.proj, rows, cols);
    const LayerShard &lead = ranks.front().layers[l];
    if (!lead.opt.projector || should_refresh(step, cfg)) {
      const Matrix g = all_gather(grad_shards, rows, cols);
      detail::log_all(ranks, l, CollectiveKind::AllGather, "grad", elems);
      if (!g.all_finite()) {
        throw NumericError("fsdp: non-finite gradient at step " + std::to_string(step + 1), step + 1);
      }
      const ProjectorState p = compute_projector(g, cfg, step, ranks.front().rng);
      detail::log_all(ranks, l, CollectiveKind::Broadcast, "projector", p.dim() * p.rank());
      for (auto &rc : ranks) {
        rc.layers[l].opt.projector = p;
        if (cfg.reset_moments_on_refresh) {
          rc.layers[l].opt.adam.reset_moments();
        }
      }
      result.refreshed = true;
    }

    const ProjectorState &p = *lead.opt.projector;
    const std::size_t r_rows = p.side() == Side::Left ? p.rank() : rows;
    const std::size_t r_cols = p.side() == Side::Left ? cols : p.rank();
    std::vector<Matrix> partial(world);
    detail::for_each_rank(world, threaded, [&](std::size_t k) {
      std::vector<std::vector<double>> mine(world, std::vector<double>(grad_shards[k].size(), 0.0));
      mine[k] = grad_shards[k];
      partial[k] = project(p, unshard(mine, rows, cols));
    });
    const auto r_shards = reduce_scatter(partial, false);
    detail::log_all(ranks, l, CollectiveKind::ReduceScatter, "lowrank_grad", r_rows * r_cols);

    std::vector<std::vector<double>> n_shards(world);
    detail::for_each_rank(world, threaded, [&](std::size_t k) {
      GaLoreLayerState &st = ranks[k].layers[l].opt;
      if (st.adam.t() != step) {
        throw ProtocolError("rank " + std::to_string(k) + " optimizer state is out of step");
      }
      const Matrix n = adam_lowrank_update(st.adam, detail::row_matrix(r_shards[k]), hyper);
      n_shards[k].assign(n.data().begin(), n.data().end());
    });
    const Matrix n = all_gather(n_shards, r_rows, r_cols);
    detail::log_all(ranks, l, CollectiveKind::AllGather, "lowrank_update", r_rows * r_cols);

    const auto update_shards = shard(back_project(p, n, cfg.alpha), world);
    detail::for_each_rank(world, threaded, [&](std::size_t k) {
      LayerShard &ls = ranks[k].layers[l];
      Matrix w = detail::row_matrix(ls.w);
      detail::apply_update(w, detail::row_matrix(update_shards[k]), hyper);
      std::copy(w.data().begin(), w.data().end(), ls.w.begin());
    });
  }

  double loss = 0.0;
  for (const auto &bp : passes) {
    loss += bp.loss();
  }
  result.loss = loss / static_cast<double>(world);
  for (auto &rc : ranks) {
    ++rc.step;
  }
  return result;
}

/// One DDP step: each rank back-propagates its micro-batch in full, every
/// layer gradient is all-reduced, and every rank applies the same update to
/// its replica.
inline ShardedStepResult ddp_train_step(std::vector<RankContext> &ranks, const std::vector<Dataset> &batches,
                                        const AdamHyper &hyper, bool threaded = false) {
  detail::check_lockstep(ranks, batches, ParallelMode::DDP);
  const std::size_t world = ranks.size();
  const std::size_t step = ranks.front().step;
  const std::size_t n_layers = ranks.front().layers.size();

  std::vector<std::vector<Matrix>> grads(world);
  std::vector<double> losses(world, 0.0);
  detail::for_each_rank(world, threaded, [&](std::size_t k) {
    RankContext &rc = ranks[k];
    ToyModel replica;
    replica.variant = rc.variant;
    for (const auto &ls : rc.layers) {
      replica.weights.emplace_back(ls.rows, ls.cols, ls.w);
    }
    grads[k] = gradients(replica, batches[k].x, batches[k].y, &losses[k]);
    for (const auto &g : grads[k]) {
      rc.hold_grad(g.size());
    }
  });

  ShardedStepResult result;
  for (std::size_t i = 0; i < n_layers; ++i) {
    const std::size_t l = n_layers - 1 - i;
    std::vector<Matrix> per_rank(world);
    for (std::size_t k = 0; k < world; ++k) {
      per_rank[k] = std::move(grads[k][l]);
    }
    const Matrix g = all_reduce(per_rank, true);
    detail::log_all(ranks, l, CollectiveKind::AllReduce, "grad", g.size());
    std::vector<char> refreshed(world, 0);
    detail::for_each_rank(world, threaded, [&](std::size_t k) {
      RankContext &rc = ranks[k];
      LayerShard &ls = rc.layers[l];
      Matrix w(ls.rows, ls.cols, ls.w);
      refreshed[k] = layer_step(w, g, ls.opt, rc.spec, hyper, step, rc.rng) ? 1 : 0;
      std::copy(w.data().begin(), w.data().end(), ls.w.begin());
      rc.release_grad(g.size());
    });
    result.refreshed = result.refreshed || refreshed.front() != 0;
  }

  double loss = 0.0;
  for (double v : losses) {
    loss += v;
  }
  result.loss = loss / static_cast<double>(world);
  for (auto &rc : ranks) {
    ++rc.step;
  }
  return result;
}

/// Splits a batch into `world` equal contiguous micro-batches.
inline std::vector<Dataset> split_batch(const Dataset &batch, std::size_t world) {
  if (world < 1 || batch.size() % world != 0) {
    throw ParameterError("batch of " + std::to_string(batch.size()) + " does not split evenly over " +
                         std::to_string(world) + " ranks");
  }
  const std::size_t per = batch.size() / world;
  std::vector<Dataset> out;
  for (std::size_t k = 0; k < world; ++k) {
    out.push_back(slice_rows(batch, k * per, (k + 1) * per));
  }
  return out;
}

} // namespace galore
