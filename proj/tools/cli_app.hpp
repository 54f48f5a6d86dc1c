// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end. `run_cli` takes the argument vector and output
// streams so it can be driven from tests without a subprocess.
#pragma once

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "galore/config.hpp"
#include "galore/experiments.hpp"
#include "galore/memmodel.hpp"
#include "galore/train.hpp"

namespace galore::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kNumeric = 2 };

/// GALORE_DETERMINISTIC=0 lets runs and simulated ranks use threads.
inline bool deterministic_mode() {
  const char *v = std::getenv("GALORE_DETERMINISTIC");
  return v == nullptr || std::string(v) != "0";
}

namespace detail {

inline void write_output(const std::string &path, const std::string &text, std::ostream &out) {
  if (path.empty() || path == "-") {
    out << text;
    return;
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) {
    throw ConfigError("cannot write output file '" + path + "'");
  }
  f << text;
  if (!f) {
    throw ConfigError("failed writing output file '" + path + "'");
  }
}

inline std::string fixed(double v, int precision = 6) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

} // namespace detail

inline int run_cli(const std::vector<std::string> &args, std::ostream &out, std::ostream &err) {
  CLI::App app{"Desk-scale GaLore: low-rank gradient projection experiments", "galore"};
  app.require_subcommand(1);

  // train
  std::string train_config;
  std::optional<std::uint64_t> train_seed;
  std::string train_out;
  auto *train_cmd = app.add_subcommand("train", "Train the toy model from a config file; writes the run log CSV");
  train_cmd->add_option("--config", train_config, "Experiment config file (key = value lines)")->required();
  train_cmd->add_option("--seed", train_seed, "Override train.seed");
  train_cmd->add_option("--out", train_out, "Output CSV path (default: config 'output', else stdout)");

  // proj-compare
  std::string cmp_config;
  std::string cmp_methods = "spectral,randomized,random,quant8";
  std::optional<std::uint64_t> cmp_seed;
  std::string cmp_out;
  auto *cmp_cmd = app.add_subcommand("proj-compare", "Train once per projection method and compare final losses");
  cmp_cmd->add_option("--config", cmp_config, "Experiment config file")->required();
  cmp_cmd->add_option("--methods", cmp_methods,
                      "Comma-separated methods: spectral, randomized, random, quant8, quant4, identity, adam")
      ->capture_default_str();
  cmp_cmd->add_option("--seed", cmp_seed, "Override train.seed");
  cmp_cmd->add_option("--out", cmp_out, "Merged CSV path (default: config 'output', else stdout)");

  // svd-bench
  SvdBenchOptions bench;
  std::string bench_sizes = "256,512,1024";
  std::string bench_out;
  auto *bench_cmd = app.add_subcommand("svd-bench", "Time full vs randomized SVD and report subspace accuracy");
  bench_cmd->add_option("--sizes", bench_sizes, "Comma-separated square matrix sizes")->capture_default_str();
  bench_cmd->add_option("--rank-frac", bench.rank_frac, "Target rank as a fraction of the size")->capture_default_str();
  bench_cmd->add_option("--trials", bench.trials, "Timed repetitions (median is reported)")->capture_default_str();
  bench_cmd->add_option("--oversample", bench.oversample, "Randomized SVD oversampling p")->capture_default_str();
  bench_cmd->add_option("--power-iters", bench.power_iters, "Randomized SVD power iterations q")->capture_default_str();
  bench_cmd->add_option("--seed", bench.seed, "Seed for test matrices and sketches")->capture_default_str();
  bench_cmd->add_option("--out", bench_out, "Output CSV path (default: stdout)");

  // memory-report
  std::string mem_model = "llama7b";
  std::string mem_strategy = "galore";
  std::size_t mem_rank = 1024;
  int mem_bits = 8;
  std::size_t mem_world = 1;
  std::string mem_sharding;
  std::size_t mem_dtype = 4;
  bool mem_accum = false;
  double mem_device_gb = 80.0;
  std::string mem_out;
  auto *mem_cmd = app.add_subcommand("memory-report", "Analytic memory estimate as JSON");
  mem_cmd->add_option("--model", mem_model, "Model preset")->capture_default_str();
  mem_cmd->add_option("--strategy", mem_strategy, "adamw, adam8bit, galore, galore-quant or lora")
      ->capture_default_str();
  mem_cmd->add_option("--rank", mem_rank, "Rank for galore, galore-quant and lora")->capture_default_str();
  mem_cmd->add_option("--bits", mem_bits, "Projector bits for galore-quant (4 or 8)")->capture_default_str();
  mem_cmd->add_option("--world", mem_world, "Number of devices")->capture_default_str();
  mem_cmd->add_option("--sharding", mem_sharding, "single, ddp or fsdp (default: fsdp when world > 1)");
  mem_cmd->add_option("--dtype-bytes", mem_dtype, "Bytes per element")->capture_default_str();
  mem_cmd->add_flag("--grad-accum", mem_accum, "Count the accumulated low-rank gradient");
  mem_cmd->add_option("--device-gb", mem_device_gb, "Device memory for the exceeds_device flag")
      ->capture_default_str();
  mem_cmd->add_option("--out", mem_out, "Output JSON path (default: stdout)");

  std::vector<std::string> argv_rev(args.rbegin(), args.rend());
  try {
    app.parse(argv_rev);
  } catch (const CLI::ParseError &e) {
    return app.exit(e, out, err) == 0 ? kOk : kUsage;
  }

  const bool det = deterministic_mode();
  try {
    if (train_cmd->parsed()) {
      ExperimentConfig cfg = load_config(train_config);
      if (train_seed) {
        cfg.train.seed = *train_seed;
      }
      cfg.train.threaded = !det;
      const std::string path = train_out.empty() ? cfg.output : train_out;
      const Task task = build_task(cfg.task);
      ToyModel student = task.student;
      try {
        const RunLog log = train(student, task.data, cfg.train);
        detail::write_output(path, log.to_csv(), out);
        err << "final train_loss " << detail::fixed(log.final_train_loss()) << " val_loss "
            << detail::fixed(log.final_val_loss()) << '\n';
      } catch (const DivergenceError &e) {
        detail::write_output(path, e.log().to_csv(), out);
        throw;
      }
    } else if (cmp_cmd->parsed()) {
      ExperimentConfig cfg = load_config(cmp_config);
      if (cmp_seed) {
        cfg.train.seed = *cmp_seed;
      }
      const auto runs = proj_compare(cfg, split_list(cmp_methods), !det);
      const std::string path = cmp_out.empty() ? cfg.output : cmp_out;
      detail::write_output(path, merged_csv(runs), out);
      std::ostream &table = (path.empty() || path == "-") ? err : out;
      const double ref = runs.front().log.final_val_loss();
      table << std::left << std::setw(12) << "method" << std::setw(16) << "final_val_loss"
            << "rel_to_" << runs.front().method << '\n';
      for (const auto &r : runs) {
        table << std::left << std::setw(12) << r.method << std::setw(16) << detail::fixed(r.log.final_val_loss())
              << detail::fixed(r.log.final_val_loss() / ref, 4) << '\n';
      }
    } else if (bench_cmd->parsed()) {
      bench.sizes.clear();
      for (const auto &s : split_list(bench_sizes)) {
        bench.sizes.push_back(galore::detail::parse_number<std::size_t>("--sizes", s));
      }
      detail::write_output(bench_out, bench_csv(svd_bench(bench)), out);
    } else if (mem_cmd->parsed()) {
      const ModelSpec base = model_preset(mem_model);
      ModelSpec spec = base;
      spec.dtype_bytes = mem_dtype;
      Strategy st;
      st.kind = parse_strategy(mem_strategy);
      if (st.kind != StrategyKind::FullAdam && st.kind != StrategyKind::Adam8bit) {
        st.rank = mem_rank;
      }
      st.bits = mem_bits;
      Sharding sh;
      sh.world = mem_world;
      const std::string shard_name = mem_sharding.empty() ? (mem_world > 1 ? "fsdp" : "single") : mem_sharding;
      if (shard_name == "single") {
        sh.kind = ShardingKind::Single;
      } else if (shard_name == "ddp") {
        sh.kind = ShardingKind::DDP;
      } else if (shard_name == "fsdp") {
        sh.kind = ShardingKind::FSDP;
      } else {
        throw ParameterError("unknown sharding '" + shard_name + "'");
      }
      ReportOptions opt;
      opt.with_grad_accum = mem_accum;
      opt.device_bytes = static_cast<std::uint64_t>(mem_device_gb * 1e9);
      detail::write_output(mem_out, to_json(model_report(spec, st, sh, opt)).dump(2) + "\n", out);
    }
  } catch (const NumericError &e) {
    err << "error: " << e.what() << '\n';
    return kNumeric;
  } catch (const ConvergenceError &e) {
    err << "error: " << e.what() << '\n';
    return kNumeric;
  } catch (const Error &e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  }
  return kOk;
}

} // namespace galore::cli
