// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "galore/errors.hpp"
#include "json.hpp"

namespace galore {

/// `count` identical weight matrices of shape m x n.
struct LayerShape {
  std::string name;
  std::size_t m = 1;
  std::size_t n = 1;
  std::size_t count = 1;

  std::size_t elements() const noexcept { return m * n; }
};

struct ModelSpec {
  std::string name;
  std::vector<LayerShape> layers;
  std::size_t dtype_bytes = 4;

  void validate() const {
    if (layers.empty()) {
      throw ParameterError("model '" + name + "' has no layers");
    }
    if (dtype_bytes < 1) {
      throw ParameterError("dtype_bytes must be >= 1");
    }
    for (const auto &l : layers) {
      if (l.m < 1 || l.n < 1 || l.count < 1) {
        throw ParameterError("layer '" + l.name + "' needs m, n, count >= 1");
      }
    }
  }
};

/// Attention and MLP matrices of a 32-layer Llama 7B (hidden 4096,
/// intermediate 11008). Embeddings and the LM head are not included.
inline ModelSpec llama7b() {
  ModelSpec s;
  s.name = "llama7b";
  const std::size_t h = 4096;
  const std::size_t f = 11008;
  const std::size_t blocks = 32;
  s.layers = {
      {"q_proj", h, h, blocks},    {"k_proj", h, h, blocks}, {"v_proj", h, h, blocks},
      {"o_proj", h, h, blocks},    {"gate_proj", f, h, blocks}, {"up_proj", f, h, blocks},
      {"down_proj", h, f, blocks},
  };
  return s;
}

inline ModelSpec model_preset(const std::string &name) {
  if (name == "llama7b") {
    return llama7b();
  }
  throw ParameterError("unknown model preset '" + name + "'");
}

/// Element counts for one weight matrix.
struct ElementCounts {
  std::size_t weights = 0;
  std::size_t optimizer_state = 0;
  std::size_t projector = 0;
  std::size_t lowrank_grad_accum = 0;

  std::size_t total() const noexcept { return weights + optimizer_state + projector + lowrank_grad_accum; }
  friend bool operator==(const ElementCounts &, const ElementCounts &) = default;
};

namespace detail {

inline void check_rank(std::size_t m, std::size_t n, std::size_t r) {
  if (m < 1 || n < 1) {
    throw ParameterError("layer dims must be >= 1");
  }
  if (r < 1 || r > std::min(m, n)) {
    throw ParameterError("rank " + std::to_string(r) + " outside [1, " + std::to_string(std::min(m, n)) +
                         "]");
  }
}

} // namespace detail

/// GaLore on an m x n weight: mn + mr + 2nr, plus nr for an accumulated R.
/// Written for m <= n; a tall matrix is counted in its transposed orientation
/// (projector on the short side, moments on the long side).
inline ElementCounts elements_galore(std::size_t m, std::size_t n, std::size_t r, bool with_grad_accum = false) {
  detail::check_rank(m, n, r);
  const std::size_t small = std::min(m, n);
  const std::size_t large = std::max(m, n);
  ElementCounts c;
  c.weights = m * n;
  c.projector = small * r;
  c.optimizer_state = 2 * large * r;
  c.lowrank_grad_accum = with_grad_accum ? large * r : 0;
  return c;
}

/// LoRA on an m x n weight: mn + 3mr + 3nr (frozen base, adapters B: m x r and
/// A: r x n, and Adam moments for both adapters).
inline ElementCounts elements_lora(std::size_t m, std::size_t n, std::size_t r) {
  detail::check_rank(m, n, r);
  ElementCounts c;
  c.weights = m * n + (m + n) * r;
  c.optimizer_state = 2 * (m + n) * r;
  return c;
}

enum class StrategyKind { FullAdam, Adam8bit, GaLore, GaLoreQuantProj, LoRA };
enum class ShardingKind { Single, DDP, FSDP };

struct Strategy {
  StrategyKind kind = StrategyKind::FullAdam;
  std::size_t rank = 0;
  int bits = 8; // projector bits for GaLoreQuantProj

  static Strategy full_adam() { return {StrategyKind::FullAdam, 0, 8}; }
  static Strategy adam8bit() { return {StrategyKind::Adam8bit, 0, 8}; }
  static Strategy galore(std::size_t r) { return {StrategyKind::GaLore, r, 8}; }
  static Strategy galore_quant(std::size_t r, int bits) { return {StrategyKind::GaLoreQuantProj, r, bits}; }
  static Strategy lora(std::size_t r) { return {StrategyKind::LoRA, r, 8}; }
};

struct Sharding {
  ShardingKind kind = ShardingKind::Single;
  std::size_t world = 1;

  static Sharding single() { return {ShardingKind::Single, 1}; }
  static Sharding ddp(std::size_t world) { return {ShardingKind::DDP, world}; }
  static Sharding fsdp(std::size_t world) { return {ShardingKind::FSDP, world}; }
};

inline std::string to_string(StrategyKind k) {
  switch (k) {
  case StrategyKind::FullAdam:
    return "adamw";
  case StrategyKind::Adam8bit:
    return "adam8bit";
  case StrategyKind::GaLore:
    return "galore";
  case StrategyKind::GaLoreQuantProj:
    return "galore-quant";
  case StrategyKind::LoRA:
    return "lora";
  }
  return "?";
}

inline std::string to_string(ShardingKind k) {
  switch (k) {
  case ShardingKind::Single:
    return "single";
  case ShardingKind::DDP:
    return "ddp";
  case ShardingKind::FSDP:
    return "fsdp";
  }
  return "?";
}

inline StrategyKind parse_strategy(const std::string &s) {
  for (auto k : {StrategyKind::FullAdam, StrategyKind::Adam8bit, StrategyKind::GaLore,
                 StrategyKind::GaLoreQuantProj, StrategyKind::LoRA}) {
    if (to_string(k) == s) {
      return k;
    }
  }
  if (s == "adam" || s == "fulladam") {
    return StrategyKind::FullAdam;
  }
  throw ParameterError("unknown strategy '" + s + "'");
}

/// Byte and element figures per memory category.
struct MemoryCategories {
  std::uint64_t weights = 0;
  std::uint64_t optimizer_state = 0;
  std::uint64_t projector = 0;
  std::uint64_t lowrank_grad_accum = 0;
  std::uint64_t fullrank_grad_peak = 0;

  std::uint64_t total() const noexcept {
    return weights + optimizer_state + projector + lowrank_grad_accum + fullrank_grad_peak;
  }
  friend bool operator==(const MemoryCategories &, const MemoryCategories &) = default;
};

struct LayerReport {
  LayerShape shape;
  MemoryCategories elements; // per matrix
  MemoryCategories bytes;    // per matrix
};

struct MemoryReport {
  std::string model;
  Strategy strategy;
  Sharding sharding;
  std::size_t dtype_bytes = 4;
  std::vector<LayerReport> per_layer;
  MemoryCategories total_elements; // whole model, unsharded
  MemoryCategories total_bytes;    // whole model, unsharded
  MemoryCategories per_rank_bytes; // what one rank holds
  std::uint64_t device_bytes = 0;
  bool exceeds_device = false;

  /// Sharded categories (weights and optimizer state) held by one rank.
  std::uint64_t per_rank_shardable_bytes() const noexcept {
    return per_rank_bytes.weights + per_rank_bytes.optimizer_state;
  }
};

struct ReportOptions {
  bool with_grad_accum = false;
  std::size_t moment_block_size = 256;
  /// 80 GB, the memory of one H100.
  std::uint64_t device_bytes = 80ull * 1000 * 1000 * 1000;
};

namespace detail {

inline std::uint64_t ceil_div(std::uint64_t a, std::uint64_t b) { return (a + b - 1) / b; }

inline LayerReport layer_report(const LayerShape &l, const Strategy &st, std::size_t dtype,
                                const ReportOptions &opt) {
  LayerReport lr;
  lr.shape = l;
  const std::size_t mn = l.m * l.n;
  MemoryCategories &e = lr.elements;
  MemoryCategories &b = lr.bytes;
  switch (st.kind) {
  case StrategyKind::FullAdam:
    e.weights = mn;
    e.optimizer_state = 2 * mn;
    b.weights = mn * dtype;
    b.optimizer_state = 2 * mn * dtype;
    break;
  case StrategyKind::Adam8bit:
    e.weights = mn;
    e.optimizer_state = 2 * mn;
    b.weights = mn * dtype;
    b.optimizer_state = 2 * (mn + 4 * ceil_div(mn, opt.moment_block_size));
    break;
  case StrategyKind::GaLore:
  case StrategyKind::GaLoreQuantProj: {
    const ElementCounts c = elements_galore(l.m, l.n, st.rank, opt.with_grad_accum);
    e.weights = c.weights;
    e.optimizer_state = c.optimizer_state;
    e.projector = c.projector;
    e.lowrank_grad_accum = c.lowrank_grad_accum;
    b.weights = c.weights * dtype;
    b.optimizer_state = c.optimizer_state * dtype;
    b.lowrank_grad_accum = c.lowrank_grad_accum * dtype;
    if (st.kind == StrategyKind::GaLore) {
      b.projector = c.projector * dtype;
    } else {
      if (st.bits != 4 && st.bits != 8) {
        throw ParameterError("projector bits must be 4 or 8");
      }
      b.projector = ceil_div(c.projector * static_cast<std::uint64_t>(st.bits), 8) + 4 * st.rank;
    }
    break;
  }
  case StrategyKind::LoRA: {
    const ElementCounts c = elements_lora(l.m, l.n, st.rank);
    e.weights = c.weights;
    e.optimizer_state = c.optimizer_state;
    b.weights = c.weights * dtype;
    b.optimizer_state = c.optimizer_state * dtype;
    break;
  }
  }
  return lr;
}

} // namespace detail

/// Analytic memory for `spec` trained with `strategy` under `sharding`.
///
/// Gradient peak: DDP holds every layer's full gradient until the all-reduce
/// (sum of layer sizes); Single and FSDP use the per-layer fused update and
/// hold one full-shape layer gradient at a time (largest layer). LoRA's
/// gradient covers only its adapters. Under FSDP weights and optimizer state
/// are divided by the world size; the projector is replicated on every rank.
inline MemoryReport model_report(const ModelSpec &spec, const Strategy &strategy, const Sharding &sharding,
                                 const ReportOptions &opt = {}) {
  spec.validate();
  if (sharding.world < 1 || (sharding.kind == ShardingKind::Single && sharding.world != 1)) {
    throw ParameterError("world size must be >= 1 (and 1 for single-device)");
  }
  if (opt.moment_block_size < 1) {
    throw ParameterError("moment block size must be >= 1");
  }
  MemoryReport rep;
  rep.model = spec.name;
  rep.strategy = strategy;
  rep.sharding = sharding;
  rep.dtype_bytes = spec.dtype_bytes;
  rep.device_bytes = opt.device_bytes;

  std::uint64_t grad_sum = 0;
  std::uint64_t grad_max = 0;
  auto accumulate = [](MemoryCategories &dst, const MemoryCategories &src, std::uint64_t k) {
    dst.weights += k * src.weights;
    dst.optimizer_state += k * src.optimizer_state;
    dst.projector += k * src.projector;
    dst.lowrank_grad_accum += k * src.lowrank_grad_accum;
  };
  for (const auto &l : spec.layers) {
    LayerReport lr = detail::layer_report(l, strategy, spec.dtype_bytes, opt);
    const std::uint64_t grad = strategy.kind == StrategyKind::LoRA ? (l.m + l.n) * strategy.rank : l.m * l.n;
    lr.elements.fullrank_grad_peak = grad;
    lr.bytes.fullrank_grad_peak = grad * spec.dtype_bytes;
    grad_sum += grad * l.count;
    grad_max = std::max(grad_max, grad);
    accumulate(rep.total_elements, lr.elements, l.count);
    accumulate(rep.total_bytes, lr.bytes, l.count);
    rep.per_layer.push_back(std::move(lr));
  }
  const std::uint64_t grad_peak = sharding.kind == ShardingKind::DDP ? grad_sum : grad_max;
  rep.total_elements.fullrank_grad_peak = grad_peak;
  rep.total_bytes.fullrank_grad_peak = grad_peak * spec.dtype_bytes;

  rep.per_rank_bytes = rep.total_bytes;
  if (sharding.kind == ShardingKind::FSDP) {
    rep.per_rank_bytes.weights = detail::ceil_div(rep.total_bytes.weights, sharding.world);
    rep.per_rank_bytes.optimizer_state = detail::ceil_div(rep.total_bytes.optimizer_state, sharding.world);
  }
  rep.exceeds_device = rep.per_rank_bytes.total() > rep.device_bytes;
  return rep;
}

inline nlohmann::ordered_json to_json(const MemoryCategories &c) {
  nlohmann::ordered_json j;
  j["weights"] = c.weights;
  j["optimizer_state"] = c.optimizer_state;
  j["projector"] = c.projector;
  j["lowrank_grad_accum"] = c.lowrank_grad_accum;
  j["fullrank_grad_peak"] = c.fullrank_grad_peak;
  j["total"] = c.total();
  return j;
}

inline nlohmann::ordered_json to_json(const MemoryReport &r) {
  nlohmann::ordered_json j;
  j["model"] = r.model;
  j["strategy"] = to_string(r.strategy.kind);
  if (r.strategy.rank > 0) {
    j["rank"] = r.strategy.rank;
  }
  if (r.strategy.kind == StrategyKind::GaLoreQuantProj) {
    j["projector_bits"] = r.strategy.bits;
  }
  j["sharding"] = to_string(r.sharding.kind);
  j["world"] = r.sharding.world;
  j["dtype_bytes"] = r.dtype_bytes;
  auto layers = nlohmann::ordered_json::array();
  for (const auto &l : r.per_layer) {
    nlohmann::ordered_json lj;
    lj["name"] = l.shape.name;
    lj["m"] = l.shape.m;
    lj["n"] = l.shape.n;
    lj["count"] = l.shape.count;
    lj["elements"] = to_json(l.elements);
    lj["bytes"] = to_json(l.bytes);
    layers.push_back(std::move(lj));
  }
  j["per_layer"] = std::move(layers);
  j["totals"] = to_json(r.total_bytes);
  j["total_elements"] = to_json(r.total_elements);
  j["per_rank"] = to_json(r.per_rank_bytes);
  j["device_bytes"] = r.device_bytes;
  j["exceeds_device"] = r.exceeds_device;
  return j;
}

} // namespace galore
