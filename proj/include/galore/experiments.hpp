// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "galore/config.hpp"
#include "galore/linalg.hpp"
#include "galore/train.hpp"

namespace galore {

struct MethodRun {
  std::string method;
  RunLog log;
};

/// Applies a proj-compare method name to an optimizer spec. Accepted names:
/// spectral, randomized, random, quant8, quant4, identity, adam.
inline void apply_method(OptimizerSpec &spec, const std::string &name) {
  if (name == "adam") {
    spec.kind = OptimizerKind::FullAdam;
    return;
  }
  spec.kind = OptimizerKind::GaLore;
  if (name == "quant8" || name == "quant4") {
    spec.proj.method = ProjectionMethod::QuantizedSpectral;
    spec.proj.quant_bits = name == "quant8" ? 8 : 4;
  } else if (name == "spectral" || name == "randomized" || name == "random" || name == "identity") {
    spec.proj.method = parse_projection_method(name);
  } else {
    throw ParameterError("unknown method '" + name + "'");
  }
}

inline std::vector<std::string> split_list(const std::string &s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) {
    item = detail::trim(item);
    if (!item.empty()) {
      out.push_back(item);
    }
  }
  return out;
}

/// One training run per method on the same task, data and seed.
inline std::vector<MethodRun> proj_compare(const ExperimentConfig &cfg, const std::vector<std::string> &methods,
                                           bool parallel = false) {
  if (methods.empty()) {
    throw ParameterError("proj-compare: no methods given");
  }
  std::vector<TrainConfig> configs;
  for (const auto &m : methods) {
    TrainConfig tc = cfg.train;
    apply_method(tc.optimizer, m);
    tc.validate();
    configs.push_back(tc);
  }
  const Task task = build_task(cfg.task);
  std::vector<MethodRun> runs(methods.size());
  std::vector<std::exception_ptr> errors(methods.size());
  auto one = [&](std::size_t i) {
    try {
      ToyModel student = task.student;
      runs[i] = {methods[i], train(student, task.data, configs[i])};
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  if (parallel) {
    std::vector<std::jthread> threads;
    for (std::size_t i = 0; i < methods.size(); ++i) {
      threads.emplace_back(one, i);
    }
  } else {
    for (std::size_t i = 0; i < methods.size(); ++i) {
      one(i);
    }
  }
  for (auto &e : errors) {
    if (e) {
      std::rethrow_exception(e);
    }
  }
  return runs;
}

/// RunLog CSVs of several runs with a leading `method` column.
inline std::string merged_csv(const std::vector<MethodRun> &runs) {
  std::string out = "method,step,train_loss,val_loss,lr,refresh\n";
  for (const auto &r : runs) {
    const std::string csv = r.log.to_csv();
    std::istringstream in(csv);
    std::string line;
    std::getline(in, line); // header
    while (std::getline(in, line)) {
      out += r.method + ',' + line + '\n';
    }
  }
  return out;
}

struct SvdBenchRow {
  std::size_t size = 0;
  std::size_t rank = 0;
  double full_seconds = 0.0;
  double randomized_seconds = 0.0;
  double speedup = 0.0;
  /// ||A - U U^T A||_F of the randomized basis over the optimal rank-r residual.
  double residual_ratio = 0.0;
};

struct SvdBenchOptions {
  std::vector<std::size_t> sizes{256, 512, 1024};
  double rank_frac = 0.25;
  std::size_t trials = 5;
  std::size_t oversample = 8;
  std::size_t power_iters = 1;
  std::uint64_t seed = 0;
};

/// n x n test matrix with geometric spectrum decaying to 0.1 at index `rank`.
inline Matrix decaying_matrix(Rng &rng, std::size_t n, std::size_t rank) {
  const Matrix u = qr_thin(gaussian(rng, n, n)).q;
  const Matrix v = qr_thin(gaussian(rng, n, n)).q;
  const double rate = std::pow(0.1, 1.0 / static_cast<double>(std::max<std::size_t>(rank, 1)));
  Matrix us = u;
  for (std::size_t j = 0; j < n; ++j) {
    const double s = std::pow(rate, static_cast<double>(j));
    for (std::size_t i = 0; i < n; ++i) {
      us(i, j) *= s;
    }
  }
  return matmul(us, transpose(v));
}

namespace detail {

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

template <typename F> double seconds(F &&f) {
  const auto t0 = std::chrono::steady_clock::now();
  f();
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

} // namespace detail

inline SvdBenchRow svd_bench_one(std::size_t n, std::size_t rank, const SvdBenchOptions &opt) {
  Rng data(Rng(opt.seed).fork(n));
  const Matrix a = decaying_matrix(data, n, rank);
  std::vector<double> full_t;
  std::vector<double> rand_t;
  SvdResult full;
  SvdResult approx;
  for (std::size_t t = 0; t < opt.trials; ++t) {
    full_t.push_back(detail::seconds([&] { full = svd_full(a); }));
    Rng rng(Rng(opt.seed).fork(1000 + t));
    rand_t.push_back(detail::seconds([&] { approx = randomized_svd(a, rank, opt.oversample, opt.power_iters, rng); }));
  }
  double optimal2 = 0.0;
  for (std::size_t i = rank; i < full.s.size(); ++i) {
    optimal2 += full.s[i] * full.s[i];
  }
  const Matrix resid = a - matmul(approx.u, matmul(transpose(approx.u), a));
  SvdBenchRow row;
  row.size = n;
  row.rank = rank;
  row.full_seconds = detail::median(full_t);
  row.randomized_seconds = detail::median(rand_t);
  row.speedup = row.full_seconds / row.randomized_seconds;
  row.residual_ratio = frobenius_norm(resid) / std::sqrt(optimal2);
  return row;
}

inline std::vector<SvdBenchRow> svd_bench(const SvdBenchOptions &opt) {
  if (opt.sizes.empty() || opt.trials < 1 || !(opt.rank_frac > 0.0 && opt.rank_frac < 1.0)) {
    throw ParameterError("svd-bench: need sizes, trials >= 1 and rank_frac in (0, 1)");
  }
  std::vector<SvdBenchRow> rows;
  for (std::size_t n : opt.sizes) {
    const auto rank = static_cast<std::size_t>(std::llround(opt.rank_frac * static_cast<double>(n)));
    if (rank < 1 || rank + opt.oversample > n) {
      throw ParameterError("svd-bench: size " + std::to_string(n) + " too small for rank fraction and oversample");
    }
    rows.push_back(svd_bench_one(n, rank, opt));
  }
  return rows;
}

inline std::string bench_csv(const std::vector<SvdBenchRow> &rows) {
  std::string out = "size,rank,full_seconds,randomized_seconds,speedup,residual_ratio\n";
  for (const auto &r : rows) {
    out += std::to_string(r.size) + ',' + std::to_string(r.rank) + ',' + detail::format_double(r.full_seconds) + ',' +
           detail::format_double(r.randomized_seconds) + ',' + detail::format_double(r.speedup) + ',' +
           detail::format_double(r.residual_ratio) + '\n';
  }
  return out;
}

} // namespace galore
