// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite: one PASS/FAIL line per criterion. Exits nonzero if any
// criterion fails.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "galore/config.hpp"
#include "galore/experiments.hpp"
#include "galore/memmodel.hpp"
#include "galore/train.hpp"
#include "oracles.hpp"

#ifndef GALORE_SOURCE_DIR
#define GALORE_SOURCE_DIR "."
#endif

using namespace galore;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string &what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + what;
    }
  }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string num(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

double relative_error(const ToyModel &a, const ToyModel &ref) {
  double num2 = 0.0;
  double den2 = 0.0;
  for (std::size_t l = 0; l < ref.weights.size(); ++l) {
    const double d = frobenius_norm(a.weights[l] - ref.weights[l]);
    const double r = frobenius_norm(ref.weights[l]);
    num2 += d * d;
    den2 += r * r;
  }
  return std::sqrt(num2 / den2);
}

Task toy_task(std::uint64_t seed, std::size_t in, std::size_t hidden, std::size_t out, std::size_t trank,
              std::size_t samples) {
  TaskConfig tc;
  tc.input_dim = in;
  tc.hidden_dim = hidden;
  tc.output_dim = out;
  tc.teacher_rank = trank;
  tc.samples = samples;
  tc.seed = seed;
  return build_task(tc);
}

// 1. Identity projector with alpha 1 reproduces full Adam exactly.
Outcome identity_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  const Task task = toy_task(11, 16, 32, 16, 4, 400);
  TrainConfig adam;
  adam.steps = 100;
  adam.eval_every = 10;
  adam.seed = 11;
  adam.optimizer.kind = OptimizerKind::FullAdam;
  TrainConfig ident = adam;
  ident.optimizer.kind = OptimizerKind::GaLore;
  ident.optimizer.proj.method = ProjectionMethod::Identity;
  ident.optimizer.proj.alpha = 1.0;
  ident.optimizer.proj.rank = 16;
  ident.optimizer.proj.update_freq = 7;
  ToyModel a = task.student;
  ToyModel b = task.student;
  const RunLog la = train(a, task.data, adam);
  const RunLog lb = train(b, task.data, ident);
  Outcome o;
  for (std::size_t l = 0; l < a.weights.size(); ++l) {
    o.require(a.weights[l] == b.weights[l], "layer " + std::to_string(l) + " differs");
  }
  o.require(la.to_csv() == lb.to_csv(), "run logs differ");
  const double secs = seconds_since(t0);
  o.require(secs < 5.0, "runtime " + num(secs) + " s");
  if (o.pass) {
    o.detail = "100 steps bit-identical, " + num(secs) + " s";
  }
  return o;
}

// 2. Two GaLore steps against a scalar re-derivation, bias correction on and off.
Outcome hand_trace() {
  const Matrix w0{{0.5, -0.25}, {1.0, 2.0}};
  const Matrix g1{{2.0, 1.0}, {1.0, 2.0}};
  const Matrix g2{{1.0, 0.0}, {0.5, -1.0}};
  const double s = 1.0 / std::sqrt(2.0);
  Outcome o;
  double worst = 0.0;
  for (bool bias : {true, false}) {
    AdamHyper h;
    h.lr = 0.01;
    h.bias_correction = bias;
    const auto cfg = oracle::galore_config(ProjectionMethod::Spectral, 1, 2, 0.25);
    Matrix w = w0;
    GaLoreLayerState layer;
    Rng rng(0);
    galore_step(w, g1, layer, h, cfg, 0, rng);
    galore_step(w, g2, layer, h, cfg, 1, rng);
    const auto expect = oracle::hand_two_steps({0.5, -0.25, 1.0, 2.0}, {s, s},
                                               {{{2.0, 1.0, 1.0, 2.0}, {1.0, 0.0, 0.5, -1.0}}}, 0.01, 0.25, bias);
    for (std::size_t i = 0; i < 4; ++i) {
      worst = std::max(worst, std::abs(w.data()[i] - expect.w[i]));
    }
  }
  o.require(worst <= 1e-12, "max deviation " + num(worst));
  if (o.pass) {
    o.detail = "max deviation " + num(worst) + " (bias correction on and off)";
  }
  return o;
}

// 3. ||G - P P^T G||_F^2 equals the discarded spectral energy.
Outcome spectral_identity() {
  Rng rng(303);
  Outcome o;
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t m = 2 + rng.uniform_index(63);
    const std::size_t n = 2 + rng.uniform_index(95);
    const std::size_t r = 1 + rng.uniform_index(std::min(m, n) - 1);
    const Matrix g = gaussian(rng, m, n);
    ProjectionConfig cfg;
    cfg.method = ProjectionMethod::Spectral;
    cfg.rank = r;
    Rng prng(trial);
    const ProjectorState ps = compute_projector(g, cfg, 0, prng);
    const Matrix resid = g - back_project(ps, project(ps, g), 1.0);
    const Matrix gram = m <= n ? matmul(g, transpose(g)) : matmul(transpose(g), g);
    const auto ev = oracle::symmetric_eigenvalues(gram);
    double tail = 0.0;
    for (std::size_t i = r; i < ev.size(); ++i) {
      tail += std::max(ev[i], 0.0);
    }
    const double lhs = frobenius_norm(resid) * frobenius_norm(resid);
    worst = std::max(worst, std::abs(lhs - tail) / tail);
  }
  o.require(worst <= 1e-6, "max relative error " + num(worst));
  if (o.pass) {
    o.detail = "100 matrices, max relative error " + num(worst);
  }
  return o;
}

// 4. Randomized SVD accuracy, determinism and speed.
Outcome randomized_svd_checks() {
  Outcome o;
  Rng rng(404);
  double planted = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t m = 20 + rng.uniform_index(60);
    const std::size_t n = 20 + rng.uniform_index(60);
    const std::size_t r = 1 + rng.uniform_index(8);
    const Matrix a = oracle::planted_rank(rng, m, n, r);
    Rng srng(trial);
    const Matrix back = reconstruct(randomized_svd(a, r, 8, 1, srng));
    planted = std::max(planted, frobenius_norm(a - back) / frobenius_norm(a));
  }
  o.require(planted <= 1e-8, "planted-rank error " + num(planted));

  double ratio = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t n = 120;
    const std::size_t r = 20;
    std::vector<double> sigma(n);
    for (std::size_t i = 0; i < n; ++i) {
      sigma[i] = std::pow(0.9, static_cast<double>(i));
    }
    const Matrix a = oracle::with_spectrum(rng, n + 30, n, sigma);
    Rng srng(100 + trial);
    const SvdResult res = randomized_svd(a, r, 8, 1, srng);
    const Matrix resid = a - matmul(res.u, matmul(transpose(res.u), a));
    double optimal2 = 0.0;
    for (std::size_t i = r; i < n; ++i) {
      optimal2 += sigma[i] * sigma[i];
    }
    ratio = std::max(ratio, frobenius_norm(resid) / std::sqrt(optimal2));
  }
  o.require(ratio <= 1.5, "residual ratio " + num(ratio));

  const Matrix a = gaussian(rng, 60, 40);
  Rng s1(7);
  Rng s2(7);
  const SvdResult x = randomized_svd(a, 5, 8, 1, s1);
  const SvdResult y = randomized_svd(a, 5, 8, 1, s2);
  o.require(x.u == y.u && x.s == y.s && x.v == y.v, "same seed gave different output");

  SvdBenchOptions bench;
  bench.trials = 1;
  bench.seed = 1;
  const SvdBenchRow row = svd_bench_one(1024, 256, bench);
  o.require(row.speedup > 1.0, "speedup " + num(row.speedup));
  if (o.pass) {
    o.detail = "planted " + num(planted) + ", residual ratio " + num(ratio) + ", 1024x1024 r=256 speedup " +
               num(row.speedup) + "x";
  }
  return o;
}

// 5. Analytic gradients against central differences.
Outcome gradient_check() {
  Outcome o;
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const auto variant = seed % 2 == 0 ? ModelVariant::MLP2 : ModelVariant::Linear;
    const ToyModel teacher = make_teacher(rng, variant, 5, 7, 4, 0);
    const ToyModel model = make_student(rng, teacher, 1.0);
    const SplitDataset data = make_dataset(rng, teacher, 10, 0.1, 0.2);
    const auto grads = gradients(model, data.train.x, data.train.y);
    for (std::size_t l = 0; l < model.weights.size(); ++l) {
      auto f = [&](const Matrix &w) {
        ToyModel m = model;
        m.weights[l] = w;
        return loss(m, data.train);
      };
      for (std::size_t i = 0; i < model.weights[l].rows(); ++i) {
        for (std::size_t j = 0; j < model.weights[l].cols(); ++j) {
          const double fd = oracle::central_difference(f, model.weights[l], i, j, 1e-5);
          const double an = grads[l](i, j);
          worst = std::max(worst, std::abs(an - fd) / std::max(1.0, std::abs(an)));
        }
      }
    }
  }
  o.require(worst <= 1e-6, "max error " + num(worst));
  if (o.pass) {
    o.detail = "20 seeds, max error " + num(worst);
  }
  return o;
}

// 6. Simulated FSDP reproduces the single-device run.
Outcome fsdp_parity() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(606);
  const ToyModel teacher = make_teacher(rng, ModelVariant::MLP2, 12, 24, 8, 3);
  const ToyModel student = make_student(rng, teacher, 0.5);
  const SplitDataset data = make_dataset(rng, teacher, 256, 0.01);
  TrainConfig cfg;
  cfg.steps = 50;
  cfg.batch_size = 16;
  cfg.seed = 6;
  cfg.eval_every = 50;
  cfg.optimizer.kind = OptimizerKind::GaLore;
  cfg.optimizer.proj.rank = 4;
  cfg.optimizer.proj.update_freq = 10;
  cfg.optimizer.proj.alpha = 0.5;
  ToyModel single = student;
  train(single, data, cfg);
  Outcome o;
  double worst = 0.0;
  std::size_t max_layer = 0;
  std::size_t sum_layers = 0;
  for (const auto &w : student.weights) {
    max_layer = std::max(max_layer, w.size());
    sum_layers += w.size();
  }
  for (std::size_t world : {2, 4}) {
    TrainConfig c = cfg;
    c.parallel = Parallelism::FSDP;
    c.world = world;
    ToyModel m = student;
    const RunLog log = train(m, data, c);
    worst = std::max(worst, relative_error(m, single));
    o.require(log.grad_high_water == max_layer, "world " + std::to_string(world) + " high-water " +
                                                    std::to_string(log.grad_high_water));
  }
  o.require(max_layer < sum_layers, "max layer not below layer sum");
  o.require(worst <= 1e-9, "relative error " + num(worst));
  const double secs = seconds_since(t0);
  o.require(secs < 30.0, "runtime " + num(secs) + " s");
  if (o.pass) {
    o.detail = "worlds 2,4 relative error " + num(worst) + ", high-water " + std::to_string(max_layer) + " < " +
               std::to_string(sum_layers) + ", " + num(secs) + " s";
  }
  return o;
}

// 7. Element-count formulas and memory orderings.
Outcome memory_formulas() {
  Outcome o;
  Rng rng(707);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t m = 1 + rng.uniform_index(5000);
    const std::size_t n = 1 + rng.uniform_index(5000);
    const std::size_t r = 1 + rng.uniform_index(std::min(m, n));
    const std::size_t a = std::min(m, n);
    const std::size_t b = std::max(m, n);
    const bool accum = trial % 2 == 1;
    const auto g = elements_galore(m, n, r, accum);
    const std::size_t expect_galore = a * b + a * r + 2 * b * r + (accum ? b * r : 0);
    const auto l = elements_lora(m, n, r);
    const std::size_t expect_lora = m * n + 3 * m * r + 3 * n * r;
    if (g.total() != expect_galore || l.total() != expect_lora) {
      o.require(false, "formula mismatch at " + std::to_string(m) + "x" + std::to_string(n) + " r=" +
                           std::to_string(r));
      break;
    }
  }
  const ModelSpec spec = llama7b();
  const auto galore = model_report(spec, Strategy::galore(1024), Sharding::single());
  const auto adam = model_report(spec, Strategy::full_adam(), Sharding::single());
  for (std::size_t i = 0; i < galore.per_layer.size(); ++i) {
    o.require(galore.per_layer[i].elements.optimizer_state < adam.per_layer[i].elements.optimizer_state,
              "layer " + galore.per_layer[i].shape.name + " optimizer state not smaller");
  }
  const auto galore_fsdp = model_report(spec, Strategy::galore(1024), Sharding::fsdp(2));
  const auto adam_fsdp = model_report(spec, Strategy::full_adam(), Sharding::fsdp(2));
  const auto gt = galore_fsdp.per_rank_bytes.total();
  const auto at = adam_fsdp.per_rank_bytes.total();
  o.require(gt < at, "GaLore+FSDP per rank " + std::to_string(gt) + " >= AdamW+FSDP " + std::to_string(at));
  if (o.pass) {
    o.detail = "1000 random shapes; per-rank bytes at world 2: GaLore " + num(gt / 1e9) + " GB < AdamW " +
               num(at / 1e9) + " GB";
  }
  return o;
}

// 8. Projection-method ordering on the sample comparison config.
Outcome projection_ordering() {
  const auto t0 = std::chrono::steady_clock::now();
  const ExperimentConfig cfg = load_config(std::string(GALORE_SOURCE_DIR) + "/configs/fig1.cfg");
  const auto runs = proj_compare(cfg, {"spectral", "randomized", "quant8", "random"});
  const double spectral = runs[0].log.final_val_loss();
  const double randomized = runs[1].log.final_val_loss();
  const double quant8 = runs[2].log.final_val_loss();
  const double random = runs[3].log.final_val_loss();
  Outcome o;
  const double gap = std::abs(randomized - spectral) / spectral;
  o.require(gap <= 0.05, "spectral/randomized gap " + num(gap));
  o.require(spectral < quant8, "quant8 " + num(quant8) + " not above spectral " + num(spectral));
  o.require(quant8 < random, "random " + num(random) + " not above quant8 " + num(quant8));
  o.require(std::max(spectral, randomized) < random, "random not strictly worst");
  const double secs = seconds_since(t0);
  o.require(secs < 60.0, "runtime " + num(secs) + " s");
  o.detail = (o.pass ? "" : o.detail + " | ") + "val loss spectral " + num(spectral) + ", randomized " +
             num(randomized) + " (gap " + num(100 * gap) + "%), quant8 " + num(quant8) + ", random " + num(random) +
             ", " + num(secs) + " s";
  return o;
}

// 9. Quantization error bounds and non-negative second moments.
Outcome quantization_bounds() {
  Outcome o;
  Rng rng(909);
  double worst = 0.0; // error over the bound, as a fraction of the bound
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t rows = 1 + rng.uniform_index(40);
    const std::size_t cols = 1 + rng.uniform_index(40);
    const double scale = std::pow(10.0, 4.0 * rng.uniform() - 2.0);
    Matrix x = scaled_gaussian(rng, rows, cols, scale);
    const std::size_t block = 1 + rng.uniform_index(300);

    const auto qs = quantize_moment(x, block, true);
    const Matrix bs = dequantize_moment(qs);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double bound = qs.block_scales[i / block] / 127.0 * 0.5;
      worst = std::max(worst, std::abs(bs.data()[i] - x.data()[i]) / (bound * (1 + 1e-12) + 1e-300));
    }

    Matrix sq = x;
    for (double &v : sq.data()) {
      v *= v;
    }
    const auto qu = quantize_moment(sq, block, false);
    const Matrix bu = dequantize_moment(qu);
    for (std::size_t i = 0; i < sq.size(); ++i) {
      const double bound = qu.block_scales[i / block] / 255.0;
      worst = std::max(worst, std::abs(bu.data()[i] - sq.data()[i]) / (bound * (1 + 1e-12) + 1e-300));
      o.require(bu.data()[i] >= 0.0, "negative decoded second moment");
    }

    const int bits = trial % 2 == 0 ? 8 : 4;
    const auto qp = quantize_projector(x, bits);
    const Matrix bp = dequantize_projector(qp);
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t j = 0; j < cols; ++j) {
        const double bound = qp.scales[j] / signed_code_max(bits) * 0.5;
        worst = std::max(worst, std::abs(bp(i, j) - x(i, j)) / (bound * (1 + 1e-12) + 1e-300));
      }
    }
  }
  o.require(worst <= 1.0, "error reached " + num(worst) + "x the bound");

  Matrix w = gaussian(rng, 16, 40);
  AdamState st(MomentStorage::Quantized8, 64);
  AdamHyper h;
  double min_v = 0.0;
  for (int t = 0; t < 100; ++t) {
    Matrix g = scaled_gaussian(rng, 16, 40, std::pow(10.0, 3.0 * rng.uniform() - 3.0));
    adam_step(w, g, st, h);
    for (double v : st.second_moment().data()) {
      min_v = std::min(min_v, v);
    }
  }
  o.require(min_v >= 0.0, "second moment reached " + num(min_v));
  if (o.pass) {
    o.detail = "1000 tensors, worst error " + num(worst) + " of bound; V >= 0 over 100 steps";
  }
  return o;
}

// 10. Learning-rate schedule endpoints and continuity.
Outcome lr_schedule() {
  Outcome o;
  TrainConfig cfg;
  cfg.steps = 1000;
  cfg.peak_lr = 3e-3;
  const auto warm = static_cast<std::size_t>(cfg.warmup_frac * cfg.steps);
  o.require(lr_at(0, cfg) == 0.0, "lr_at(0) != 0");
  o.require(lr_at(warm, cfg) == cfg.peak_lr, "lr_at(warmup end) != peak");
  o.require(lr_at(cfg.steps, cfg) == 0.1 * cfg.peak_lr, "lr_at(last) != 0.1 peak");
  // Continuous extension of both pieces at the boundary.
  const double d = 1e-9;
  const double s = static_cast<double>(warm);
  const double left = cfg.peak_lr * (s - d) / s;
  const double progress = d / (static_cast<double>(cfg.steps) - s);
  const double right = cfg.peak_lr * (0.1 + 0.9 * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
  o.require(std::abs(left - right) <= 1e-12, "jump at warmup boundary");
  double prev = cfg.peak_lr;
  for (std::size_t t = warm; t <= cfg.steps; ++t) {
    const double v = lr_at(t, cfg);
    o.require(v <= prev, "schedule rises at " + std::to_string(t));
    prev = v;
  }
  o.require(std::abs(lr_at(cfg.steps - 1, cfg) - lr_at(cfg.steps, cfg)) < 1e-8, "jump at final step");
  if (o.pass) {
    o.detail = "0 -> " + num(cfg.peak_lr) + " at step " + std::to_string(warm) + " -> " +
               num(lr_at(cfg.steps, cfg)) + " at step " + std::to_string(cfg.steps);
  }
  return o;
}

} // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"identity projector equals full Adam", identity_oracle},
      {"two-step hand trace", hand_trace},
      {"spectral residual identity", spectral_identity},
      {"randomized SVD", randomized_svd_checks},
      {"finite-difference gradients", gradient_check},
      {"FSDP parity and gradient high-water", fsdp_parity},
      {"memory formulas and orderings", memory_formulas},
      {"projection method ordering", projection_ordering},
      {"quantization bounds", quantization_bounds},
      {"learning-rate schedule", lr_schedule},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception &e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    failed += o.pass ? 0 : 1;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << (i + 1) << "] " << criteria[i].first << ": " << o.detail
              << std::endl;
  }
  std::cout << (criteria.size() - failed) << "/" << criteria.size() << " criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
