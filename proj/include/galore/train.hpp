// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "galore/errors.hpp"
#include "galore/layer_optimizer.hpp"
#include "galore/rng.hpp"
#include "galore/shardsim.hpp"
#include "galore/toy_model.hpp"

namespace galore {

enum class Parallelism { None, DDP, FSDP };

inline std::string to_string(Parallelism p) {
  switch (p) {
  case Parallelism::None:
    return "none";
  case Parallelism::DDP:
    return "ddp";
  case Parallelism::FSDP:
    return "fsdp";
  }
  return "?";
}

struct TrainConfig {
  std::size_t steps = 1000;
  std::size_t batch_size = 32;
  double peak_lr = 1e-2;
  double warmup_frac = 0.10;
  double final_lr_frac = 0.10;
  std::uint64_t seed = 0;
  OptimizerSpec optimizer;
  std::size_t eval_every = 10;
  Parallelism parallel = Parallelism::None;
  std::size_t world = 1;
  /// Run simulated ranks on worker threads between collectives.
  bool threaded = false;

  void validate() const {
    if (steps < 1 || batch_size < 1 || eval_every < 1) {
      throw ParameterError("train: steps, batch_size and eval_every must be >= 1");
    }
    if (!(warmup_frac > 0.0 && warmup_frac < 1.0)) {
      throw ParameterError("train: warmup_frac must lie in (0, 1)");
    }
    if (!(final_lr_frac > 0.0 && final_lr_frac <= 1.0)) {
      throw ParameterError("train: final_lr_frac must lie in (0, 1]");
    }
    if (!(peak_lr >= 0.0)) {
      throw ParameterError("train: peak_lr must be >= 0");
    }
    if (world < 1 || (parallel == Parallelism::None && world != 1)) {
      throw ParameterError("train: world must be >= 1, and 1 without parallelism");
    }
    if (batch_size % world != 0) {
      throw ParameterError("train: batch_size must be divisible by world");
    }
    optimizer.validate();
  }
};

/// Linear warmup from 0 to the peak over the first warmup_frac * steps, then
/// cosine decay to final_lr_frac * peak at `steps`.
inline double lr_at(std::size_t step, const TrainConfig &cfg) {
  if (step > cfg.steps) {
    throw ParameterError("lr_at: step " + std::to_string(step) + " beyond " + std::to_string(cfg.steps));
  }
  const double peak = cfg.peak_lr;
  const double s = static_cast<double>(step);
  const double warm = cfg.warmup_frac * static_cast<double>(cfg.steps);
  if (s <= warm) {
    return s == warm ? peak : peak * s / warm;
  }
  const double progress = (s - warm) / (static_cast<double>(cfg.steps) - warm);
  const double f = cfg.final_lr_frac;
  if (step == cfg.steps) {
    return f * peak;
  }
  return peak * (f + (1.0 - f) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
}

struct LogRecord {
  std::size_t step = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
  bool refresh = false;
};

namespace detail {

// Shortest round-trip decimal form; identical bytes for identical doubles.
inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

} // namespace detail

/// Records are taken at steps 0, eval_every, 2 eval_every, ... before that
/// step's update (lr and refresh describe the update), plus a closing record
/// at step == steps with the final losses.
struct RunLog {
  std::vector<LogRecord> records;
  std::size_t grad_high_water = 0;
  std::string collective_csv;

  double final_val_loss() const { return records.empty() ? 0.0 : records.back().val_loss; }
  double final_train_loss() const { return records.empty() ? 0.0 : records.back().train_loss; }

  std::string to_csv() const {
    std::string out = "step,train_loss,val_loss,lr,refresh\n";
    for (const auto &r : records) {
      out += std::to_string(r.step) + ',' + detail::format_double(r.train_loss) + ',' +
             detail::format_double(r.val_loss) + ',' + detail::format_double(r.lr) + ',' + (r.refresh ? "1" : "0") +
             '\n';
    }
    return out;
  }
};

/// Training stopped because the loss left the finite range or exceeded the
/// divergence threshold. Carries the log up to the failure.
class DivergenceError : public NumericError {
public:
  DivergenceError(const std::string &what, std::size_t step, RunLog log)
      : NumericError(what, step), log_(std::move(log)) {}
  const RunLog &log() const noexcept { return log_; }

private:
  RunLog log_;
};

constexpr double kDivergenceLoss = 1e6;

/// Independent random streams of one run.
struct RunStreams {
  Rng batches;
  Rng projector;

  explicit RunStreams(std::uint64_t seed) : batches(Rng(seed).fork(1)), projector(Rng(seed).fork(2)) {}
};

/// Trains `model` in place on `data.train` and logs losses on both splits.
inline RunLog train(ToyModel &model, const SplitDataset &data, const TrainConfig &cfg) {
  cfg.validate();
  model.validate();
  RunStreams streams(cfg.seed);
  RunLog log;

  std::vector<GaLoreLayerState> states;
  std::optional<std::vector<RankContext>> ranks;
  if (cfg.parallel == Parallelism::None) {
    for (std::size_t l = 0; l < model.num_layers(); ++l) {
      states.push_back(make_layer_state(cfg.optimizer));
    }
  } else {
    ranks = make_ranks(model, cfg.world, cfg.parallel == Parallelism::FSDP ? ParallelMode::FSDP : ParallelMode::DDP,
                       cfg.optimizer, streams.projector);
  }

  auto evaluate = [&](std::size_t step, double lr, bool refresh) {
    if (ranks) {
      model = gather_model(*ranks);
    }
    log.records.push_back({step, loss(model, data.train), loss(model, data.val), lr, refresh});
  };
  auto diverged = [&](double value) { return !std::isfinite(value) || value > kDivergenceLoss; };

  for (std::size_t t = 0; t < cfg.steps; ++t) {
    AdamHyper hyper = cfg.optimizer.hyper;
    hyper.lr = lr_at(t, cfg);
    const Dataset batch = sample_batch(streams.batches, data.train, cfg.batch_size);
    bool refreshed = false;
    double batch_loss = 0.0;
    if (t % cfg.eval_every == 0) {
      evaluate(t, hyper.lr, false);
    }
    try {
      if (!ranks) {
        BackwardPass bp(model, batch.x, batch.y);
        batch_loss = bp.loss();
        if (diverged(batch_loss)) {
          throw NumericError("loss " + detail::format_double(batch_loss) + " at step " + std::to_string(t), t);
        }
        while (!bp.done()) {
          auto [l, g] = bp.next();
          refreshed = layer_step(model.weights[l], g, states[l], cfg.optimizer, hyper, t, streams.projector) ||
                      refreshed;
        }
      } else {
        const auto micro = split_batch(batch, cfg.world);
        const ShardedStepResult res = cfg.parallel == Parallelism::FSDP
                                          ? fsdp_train_step(*ranks, micro, hyper, cfg.threaded)
                                          : ddp_train_step(*ranks, micro, hyper, cfg.threaded);
        batch_loss = res.loss;
        refreshed = res.refreshed;
        if (diverged(batch_loss)) {
          throw NumericError("loss " + detail::format_double(batch_loss) + " at step " + std::to_string(t), t);
        }
      }
    } catch (const NumericError &e) {
      throw DivergenceError(std::string("training diverged: ") + e.what(), t, log);
    }
    if (t % cfg.eval_every == 0) {
      // The identity projector never changes; keep its log identical to Adam's.
      log.records.back().refresh = refreshed && cfg.optimizer.proj.method != ProjectionMethod::Identity;
    }
  }
  evaluate(cfg.steps, lr_at(cfg.steps, cfg), false);
  if (diverged(log.records.back().train_loss)) {
    throw DivergenceError("training diverged: final loss " + detail::format_double(log.records.back().train_loss),
                          cfg.steps, log);
  }
  if (ranks) {
    log.grad_high_water = ranks->front().grad_high_water;
    log.collective_csv = ranks->front().log.to_csv();
  } else {
    std::size_t hw = 0;
    for (const auto &w : model.weights) {
      hw = std::max(hw, w.size());
    }
    log.grad_high_water = hw; // per-layer fused update
  }
  return log;
}

} // namespace galore
