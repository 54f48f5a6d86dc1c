// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <string_view>

#include "galore/errors.hpp"
#include "galore/train.hpp"

namespace galore {

/// Synthetic teacher-student regression task.
struct TaskConfig {
  ModelVariant variant = ModelVariant::MLP2;
  std::size_t input_dim = 32;
  std::size_t hidden_dim = 64;
  std::size_t output_dim = 32;
  std::size_t teacher_rank = 4; // 0 = full rank
  std::size_t samples = 1000;
  double noise_sd = 0.01;
  double val_frac = 0.2;
  double student_scale = 0.5;
  std::uint64_t seed = 0;
};

struct ExperimentConfig {
  TaskConfig task;
  TrainConfig train;
  std::string output; // empty = stdout
};

struct Task {
  ToyModel teacher;
  ToyModel student;
  SplitDataset data;
};

inline Task build_task(const TaskConfig &c) {
  Rng rng(c.seed);
  Task t;
  t.teacher = make_teacher(rng, c.variant, c.input_dim, c.hidden_dim, c.output_dim, c.teacher_rank);
  t.student = make_student(rng, t.teacher, c.student_scale);
  t.data = make_dataset(rng, t.teacher, c.samples, c.noise_sd, c.val_frac);
  return t;
}

inline ProjectionMethod parse_projection_method(const std::string &s) {
  if (s == "spectral") {
    return ProjectionMethod::Spectral;
  }
  if (s == "randomized") {
    return ProjectionMethod::RandomizedSpectral;
  }
  if (s == "random") {
    return ProjectionMethod::RandomGaussian;
  }
  if (s == "quantized") {
    return ProjectionMethod::QuantizedSpectral;
  }
  if (s == "identity") {
    return ProjectionMethod::Identity;
  }
  throw ParameterError("unknown projection method '" + s + "'");
}

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) {
    return {};
  }
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T> T parse_number(const std::string &key, const std::string &value) {
  T out{};
  const auto *end = value.data() + value.size();
  const auto res = std::from_chars(value.data(), end, out);
  if (res.ec != std::errc() || res.ptr != end) {
    throw ConfigError("config key '" + key + "': cannot parse '" + value + "' as a number");
  }
  return out;
}

inline bool parse_bool(const std::string &key, const std::string &value) {
  if (value == "true" || value == "1") {
    return true;
  }
  if (value == "false" || value == "0") {
    return false;
  }
  throw ConfigError("config key '" + key + "': expected true or false, got '" + value + "'");
}

using Setter = std::function<void(ExperimentConfig &, const std::string &key, const std::string &value)>;

template <typename T> Setter number(T TaskConfig::*field) {
  return [field](ExperimentConfig &c, const std::string &k, const std::string &v) {
    c.task.*field = parse_number<T>(k, v);
  };
}

template <typename T> Setter train_number(T TrainConfig::*field) {
  return [field](ExperimentConfig &c, const std::string &k, const std::string &v) {
    c.train.*field = parse_number<T>(k, v);
  };
}

template <typename T> Setter adam_number(T AdamHyper::*field) {
  return [field](ExperimentConfig &c, const std::string &k, const std::string &v) {
    c.train.optimizer.hyper.*field = parse_number<T>(k, v);
  };
}

template <typename T> Setter proj_number(T ProjectionConfig::*field) {
  return [field](ExperimentConfig &c, const std::string &k, const std::string &v) {
    c.train.optimizer.proj.*field = parse_number<T>(k, v);
  };
}

template <typename F> Setter with_config_error(F f) {
  return [f](ExperimentConfig &c, const std::string &k, const std::string &v) {
    try {
      f(c, v);
    } catch (const ParameterError &e) {
      throw ConfigError("config key '" + k + "': " + e.what());
    }
  };
}

inline const std::map<std::string, Setter> &config_keys() {
  static const std::map<std::string, Setter> keys = {
      {"task.variant", with_config_error([](ExperimentConfig &c, const std::string &v) {
         if (v == "linear") {
           c.task.variant = ModelVariant::Linear;
         } else if (v == "mlp2") {
           c.task.variant = ModelVariant::MLP2;
         } else {
           throw ParameterError("expected linear or mlp2, got '" + v + "'");
         }
       })},
      {"task.input_dim", number(&TaskConfig::input_dim)},
      {"task.hidden_dim", number(&TaskConfig::hidden_dim)},
      {"task.output_dim", number(&TaskConfig::output_dim)},
      {"task.teacher_rank", number(&TaskConfig::teacher_rank)},
      {"task.samples", number(&TaskConfig::samples)},
      {"task.noise_sd", number(&TaskConfig::noise_sd)},
      {"task.val_frac", number(&TaskConfig::val_frac)},
      {"task.student_scale", number(&TaskConfig::student_scale)},
      {"task.seed", number(&TaskConfig::seed)},
      {"train.steps", train_number(&TrainConfig::steps)},
      {"train.batch_size", train_number(&TrainConfig::batch_size)},
      {"train.lr", train_number(&TrainConfig::peak_lr)},
      {"train.warmup_frac", train_number(&TrainConfig::warmup_frac)},
      {"train.final_lr_frac", train_number(&TrainConfig::final_lr_frac)},
      {"train.seed", train_number(&TrainConfig::seed)},
      {"train.eval_every", train_number(&TrainConfig::eval_every)},
      {"optimizer", with_config_error([](ExperimentConfig &c, const std::string &v) {
         if (v == "adam") {
           c.train.optimizer.kind = OptimizerKind::FullAdam;
         } else if (v == "adam8bit") {
           c.train.optimizer.kind = OptimizerKind::Adam8bit;
         } else if (v == "galore") {
           c.train.optimizer.kind = OptimizerKind::GaLore;
         } else {
           throw ParameterError("expected adam, adam8bit or galore, got '" + v + "'");
         }
       })},
      {"adam.beta1", adam_number(&AdamHyper::beta1)},
      {"adam.beta2", adam_number(&AdamHyper::beta2)},
      {"adam.eps", adam_number(&AdamHyper::eps)},
      {"adam.weight_decay", adam_number(&AdamHyper::weight_decay)},
      {"adam.bias_correction", [](ExperimentConfig &c, const std::string &k, const std::string &v) {
         c.train.optimizer.hyper.bias_correction = parse_bool(k, v);
       }},
      {"adam.block_size", [](ExperimentConfig &c, const std::string &k, const std::string &v) {
         c.train.optimizer.block_size = parse_number<std::size_t>(k, v);
       }},
      {"galore.rank", proj_number(&ProjectionConfig::rank)},
      {"galore.update_freq", proj_number(&ProjectionConfig::update_freq)},
      {"galore.method", with_config_error([](ExperimentConfig &c, const std::string &v) {
         c.train.optimizer.proj.method = parse_projection_method(v);
       })},
      {"galore.alpha", proj_number(&ProjectionConfig::alpha)},
      {"galore.quant_bits", proj_number(&ProjectionConfig::quant_bits)},
      {"galore.oversample", proj_number(&ProjectionConfig::oversample)},
      {"galore.power_iters", proj_number(&ProjectionConfig::power_iters)},
      {"galore.reset_moments", [](ExperimentConfig &c, const std::string &k, const std::string &v) {
         c.train.optimizer.proj.reset_moments_on_refresh = parse_bool(k, v);
       }},
      {"galore.moments", with_config_error([](ExperimentConfig &c, const std::string &v) {
         if (v == "full") {
           c.train.optimizer.galore_moments = MomentStorage::Full64;
         } else if (v == "8bit") {
           c.train.optimizer.galore_moments = MomentStorage::Quantized8;
         } else {
           throw ParameterError("expected full or 8bit, got '" + v + "'");
         }
       })},
      {"parallel", with_config_error([](ExperimentConfig &c, const std::string &v) {
         if (v == "none") {
           c.train.parallel = Parallelism::None;
         } else if (v == "ddp") {
           c.train.parallel = Parallelism::DDP;
         } else if (v == "fsdp") {
           c.train.parallel = Parallelism::FSDP;
         } else {
           throw ParameterError("expected none, ddp or fsdp, got '" + v + "'");
         }
       })},
      {"world", train_number(&TrainConfig::world)},
      {"output", [](ExperimentConfig &c, const std::string &, const std::string &v) { c.output = v; }},
  };
  return keys;
}

} // namespace detail

/// Parses `key = value` lines. `#` starts a comment; blank lines are ignored.
/// Unknown keys, repeated keys and malformed values raise ConfigError naming
/// the key. The result is validated as a whole.
inline ExperimentConfig parse_config(const std::string &text, const std::string &source = "<config>") {
  ExperimentConfig cfg;
  std::map<std::string, std::size_t> seen;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) {
      line.erase(hash);
    }
    const std::string body = detail::trim(line);
    if (body.empty()) {
      continue;
    }
    const auto eq = body.find('=');
    const std::string where = source + ":" + std::to_string(lineno);
    if (eq == std::string::npos) {
      throw ConfigError(where + ": expected key = value, got '" + body + "'");
    }
    const std::string key = detail::trim(std::string_view(body).substr(0, eq));
    const std::string value = detail::trim(std::string_view(body).substr(eq + 1));
    const auto &keys = detail::config_keys();
    const auto it = keys.find(key);
    if (it == keys.end()) {
      throw ConfigError(where + ": unknown config key '" + key + "'");
    }
    if (const auto prev = seen.find(key); prev != seen.end()) {
      throw ConfigError(where + ": config key '" + key + "' repeats line " + std::to_string(prev->second));
    }
    seen[key] = lineno;
    if (value.empty()) {
      throw ConfigError(where + ": config key '" + key + "' has no value");
    }
    try {
      it->second(cfg, key, value);
    } catch (const ConfigError &e) {
      throw ConfigError(where + ": " + e.what());
    }
  }
  try {
    cfg.train.validate();
  } catch (const ParameterError &e) {
    throw ConfigError(source + ": " + e.what());
  }
  return cfg;
}

inline ExperimentConfig load_config(const std::string &path) {
  std::ifstream f(path);
  if (!f) {
    throw ConfigError("cannot open config file '" + path + "'");
  }
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str(), path);
}

} // namespace galore
