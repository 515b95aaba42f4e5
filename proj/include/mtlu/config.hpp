#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "mtlu/activations.hpp"
#include "mtlu/dataset.hpp"
#include "mtlu/errors.hpp"
#include "mtlu/eval.hpp"
#include "mtlu/networks.hpp"
#include "mtlu/training.hpp"

namespace mtlu {

// Everything one experiment needs, addressed by flat dotted keys.
struct ExperimentConfig {
  Task task = Task::super_resolution;
  int factor = 4;
  double sigma = 25.0;
  std::string arch = "auto";  // auto: fsrnet for sr, fdnet for denoise
  int depth = 7;
  int width = 64;
  int kernel = 3;
  bool bicubic_skip = false;
  DenoiseTarget denoise_target = DenoiseTarget::noise_residual;
  ActivationSpec af{};
  TrainConfig train{};
  int patch = 24;
  bool augment = true;
  std::int64_t checkpoint_every = 0;
  std::string data_dir;
  int synthetic_count = 200;
  int synthetic_size = 96;
  std::uint64_t data_seed = 7;
  std::string val_dir;
  int val_count = 20;
  std::uint64_t val_seed = 8;
  int eval_shave = -1;
  std::uint64_t eval_seed = 0;
  std::string out_dir = "run";

  NetworkSpec network_spec() const {
    NetworkSpec s;
    s.arch = arch == "auto" ? (task == Task::super_resolution ? Architecture::fsrnet : Architecture::fdnet)
                            : parse_architecture(arch);
    s.task = task;
    s.factor = factor;
    s.depth = depth;
    s.width = width;
    s.channels = 1;
    s.kernel = kernel;
    s.af = af;
    s.bicubic_skip = bicubic_skip;
    s.denoise_target = denoise_target;
    return s;
  }

  DatasetSpec dataset_spec() const { return {task, factor, sigma, patch, augment}; }

  EvalOptions eval_options() const {
    EvalOptions o;
    o.task = task;
    o.factor = factor;
    o.sigma = sigma;
    o.seed = eval_seed;
    o.shave = eval_shave;
    o.multiple = network_spec().arch == Architecture::fdnet ? kFdnetShuffle : 1;
    return o;
  }
};

namespace config_detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <class I>
I parse_int(const std::string& key, const std::string& v) {
  I out{};
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw ConfigError("key '" + key + "': expected an integer, got '" + v + "'");
  return out;
}

inline double parse_double(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double d = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size() || !std::isfinite(d))
    throw ConfigError("key '" + key + "': expected a number, got '" + v + "'");
  return d;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("key '" + key + "': expected true or false, got '" + v + "'");
}

// Shortest text that parses back to the same double.
inline std::string fmt(double d) {
  char buf[40];
  const auto r = std::to_chars(buf, buf + sizeof buf, d);
  return std::string(buf, r.ptr);
}
inline std::string fmt(bool b) { return b ? "true" : "false"; }

struct Key {
  std::string name;
  std::string doc;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

#define MTLU_INT_KEY(NAME, FIELD, TYPE, DOC)                                                          \
  Key {                                                                                               \
    NAME, DOC, [](ExperimentConfig& c, const std::string& v) { c.FIELD = parse_int<TYPE>(NAME, v); }, \
        [](const ExperimentConfig& c) { return std::to_string(c.FIELD); }                             \
  }
#define MTLU_DOUBLE_KEY(NAME, FIELD, DOC)                                                          \
  Key {                                                                                            \
    NAME, DOC, [](ExperimentConfig& c, const std::string& v) { c.FIELD = parse_double(NAME, v); }, \
        [](const ExperimentConfig& c) { return fmt(c.FIELD); }                                     \
  }
#define MTLU_BOOL_KEY(NAME, FIELD, DOC)                                                          \
  Key {                                                                                          \
    NAME, DOC, [](ExperimentConfig& c, const std::string& v) { c.FIELD = parse_bool(NAME, v); }, \
        [](const ExperimentConfig& c) { return fmt(c.FIELD); }                                   \
  }
#define MTLU_STRING_KEY(NAME, FIELD, DOC)                                            \
  Key {                                                                              \
    NAME, DOC, [](ExperimentConfig& c, const std::string& v) { c.FIELD = v; },       \
        [](const ExperimentConfig& c) { return c.FIELD; }                            \
  }

inline const std::vector<Key>& keys() {
  static const std::vector<Key> table = {
      Key{"task", "sr or denoise",
          [](ExperimentConfig& c, const std::string& v) { c.task = parse_task(v); },
          [](const ExperimentConfig& c) { return std::string(to_string(c.task)); }},
      MTLU_INT_KEY("task.factor", factor, int, "SR upscaling factor (2, 3 or 4)"),
      MTLU_DOUBLE_KEY("task.sigma", sigma, "AWGN standard deviation on the 0-255 scale"),
      Key{"net.arch", "auto, fsrnet, fdnet or plain (auto: fsrnet for sr, fdnet for denoise)",
          [](ExperimentConfig& c, const std::string& v) {
            if (v != "auto") parse_architecture(v);
            c.arch = v;
          },
          [](const ExperimentConfig& c) { return c.arch; }},
      MTLU_INT_KEY("net.depth", depth, int, "number of conv layers"),
      MTLU_INT_KEY("net.width", width, int, "feature maps per trunk layer"),
      MTLU_INT_KEY("net.kernel", kernel, int, "conv kernel size (odd)"),
      MTLU_BOOL_KEY("net.bicubic_skip", bicubic_skip, "add a bicubic upscale of the input to the FSRnet output"),
      Key{"net.denoise_target", "noise (output = input - prediction) or clean",
          [](ExperimentConfig& c, const std::string& v) { c.denoise_target = parse_denoise_target(v); },
          [](const ExperimentConfig& c) { return std::string(to_string(c.denoise_target)); }},
      Key{"af.kind", "relu, prelu, mtlu, maxout, apl or plf",
          [](ExperimentConfig& c, const std::string& v) { c.af.kind = parse_activation_kind(v); },
          [](const ExperimentConfig& c) { return std::string(to_string(c.af.kind)); }},
      MTLU_INT_KEY("af.bins", af.bins, int, "MTLU bin count"),
      MTLU_DOUBLE_KEY("af.bin_width", af.bin_width, "MTLU bin width"),
      Key{"af.left_edge", "MTLU left edge, or auto for -bins*bin_width/2",
          [](ExperimentConfig& c, const std::string& v) {
            if (v == "auto") c.af.left_edge.reset();
            else c.af.left_edge = parse_double("af.left_edge", v);
          },
          [](const ExperimentConfig& c) { return c.af.left_edge ? fmt(*c.af.left_edge) : std::string("auto"); }},
      MTLU_BOOL_KEY("af.shared", af.shared, "one MTLU shared by all channels of a layer"),
      Key{"af.grad_norm", "MTLU parameter gradient scaling: bins_over_signals, signal_count or none",
          [](ExperimentConfig& c, const std::string& v) { c.af.grad_norm = parse_grad_normalization(v); },
          [](const ExperimentConfig& c) { return std::string(to_string(c.af.grad_norm)); }},
      MTLU_INT_KEY("af.apl_kernels", af.apl_kernels, int, "APL hinge count S"),
      MTLU_INT_KEY("af.plf_segments", af.plf_segments, int, "PLF segment count M"),
      MTLU_DOUBLE_KEY("af.plf_interval", af.plf_interval, "PLF anchor spacing"),
      MTLU_DOUBLE_KEY("af.prelu_init", af.prelu_init, "initial PReLU negative slope"),
      MTLU_INT_KEY("train.batch", train.batch_size, int, "patches per iteration"),
      MTLU_DOUBLE_KEY("train.lr", train.lr_init, "initial learning rate"),
      MTLU_INT_KEY("train.lr_halve_every", train.lr_halve_every, std::int64_t,
                   "halve the learning rate every this many iterations (0: iters/7)"),
      MTLU_DOUBLE_KEY("train.lr_stop", train.lr_stop_below, "stop once the learning rate falls below this"),
      MTLU_DOUBLE_KEY("train.weight_decay", train.weight_decay, "L2 factor for conv weights and biases"),
      MTLU_INT_KEY("train.iters", train.max_iters, std::int64_t, "maximum iterations"),
      MTLU_INT_KEY("train.seed", train.seed, std::uint64_t, "seed for initialization and patch sampling"),
      MTLU_INT_KEY("train.patch", patch, int, "input patch side (LR side for sr)"),
      MTLU_BOOL_KEY("train.augment", augment, "random flips and transposes of patches"),
      MTLU_INT_KEY("train.log_every", train.log_every, std::int64_t, "iterations per log record"),
      MTLU_INT_KEY("train.val_every", train.val_every, std::int64_t, "iterations per validation (0: end only)"),
      MTLU_INT_KEY("train.checkpoint_every", checkpoint_every, std::int64_t,
                   "iterations per intermediate checkpoint (0: final only)"),
      MTLU_STRING_KEY("data.dir", data_dir, "training PNG directory (empty: synthetic corpus)"),
      MTLU_INT_KEY("data.synthetic_count", synthetic_count, int, "synthetic training images"),
      MTLU_INT_KEY("data.synthetic_size", synthetic_size, int, "synthetic image side"),
      MTLU_INT_KEY("data.seed", data_seed, std::uint64_t, "synthetic training corpus seed"),
      MTLU_STRING_KEY("data.val_dir", val_dir, "validation PNG directory (empty: synthetic)"),
      MTLU_INT_KEY("data.val_count", val_count, int, "synthetic validation images (0: no validation)"),
      MTLU_INT_KEY("data.val_seed", val_seed, std::uint64_t, "synthetic validation corpus seed"),
      MTLU_INT_KEY("eval.shave", eval_shave, int, "PSNR border shave (-1: factor for sr, 0 for denoise)"),
      MTLU_INT_KEY("eval.seed", eval_seed, std::uint64_t, "evaluation noise seed"),
      MTLU_STRING_KEY("out.dir", out_dir, "output directory"),
  };
  return table;
}

#undef MTLU_INT_KEY
#undef MTLU_DOUBLE_KEY
#undef MTLU_BOOL_KEY
#undef MTLU_STRING_KEY

inline const Key& find_key(const std::string& name) {
  for (const auto& k : keys())
    if (k.name == name) return k;
  throw ConfigError("unknown config key '" + name + "'");
}

}  // namespace config_detail

inline std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& k : config_detail::keys()) out.push_back(k.name);
  return out;
}

inline std::string config_get(const ExperimentConfig& c, const std::string& key) {
  return config_detail::find_key(key).get(c);
}

inline void config_set(ExperimentConfig& c, const std::string& key, const std::string& value) {
  config_detail::find_key(key).set(c, value);
}

// "key=value"
inline void apply_override(ExperimentConfig& c, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos)
    throw ConfigError("expected key=value, got '" + std::string(assignment) + "'");
  config_set(c, config_detail::trim(assignment.substr(0, eq)), config_detail::trim(assignment.substr(eq + 1)));
}

// One key=value per line; blank lines and lines starting with # are ignored.
inline void apply_config_text(ExperimentConfig& c, std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = config_detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    try {
      apply_override(c, t);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config file '" + path.string() + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  ExperimentConfig c;
  try {
    apply_config_text(c, ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return c;
}

// Every key with its current value and description; parses back to the same config.
inline std::string dump_config(const ExperimentConfig& c) {
  std::string out;
  for (const auto& k : config_detail::keys()) out += "# " + k.doc + "\n" + k.name + "=" + k.get(c) + "\n";
  return out;
}

inline std::vector<NamedPlane> training_images(const ExperimentConfig& c) {
  if (!c.data_dir.empty()) return load_luma_dir(c.data_dir);
  return synthetic_corpus(c.synthetic_count, c.synthetic_size, c.data_seed);
}

// Empty when validation is switched off.
inline std::vector<NamedPlane> validation_images(const ExperimentConfig& c) {
  if (!c.val_dir.empty()) return load_luma_dir(c.val_dir);
  return synthetic_corpus(c.val_count, c.synthetic_size, c.val_seed);
}

// Initialization draws from its own stream so patch sampling stays unchanged
// when the architecture changes.
template <class T>
Network<T> initial_network(const ExperimentConfig& c) {
  Rng init(c.train.seed ^ 0xA5A5A5A5A5A5A5A5ULL);
  return build_network<T>(c.network_spec(), init);
}

}  // namespace mtlu
