#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "mtlu/dataset.hpp"
#include "mtlu/errors.hpp"
#include "mtlu/eval.hpp"
#include "mtlu/networks.hpp"
#include "mtlu/ops.hpp"
#include "mtlu/tensor.hpp"

namespace mtlu {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction. Weight decay is L2 in the gradient
// (g += wd * p before the moment update) and only touches groups whose
// decay flag is set.
template <class T>
class Adam {
 public:
  Adam(std::vector<ParamGroup<T>> groups, AdamConfig cfg = {}) : groups_(std::move(groups)), cfg_(cfg) {
    for (const auto& g : groups_) {
      m_.emplace_back(g.tensor->size(), 0.0);
      v_.emplace_back(g.tensor->size(), 0.0);
    }
  }

  std::int64_t steps() const { return t_; }
  const std::vector<ParamGroup<T>>& groups() const { return groups_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }

  // Parameters without a gradient slot are treated as having zero gradient.
  void step(double lr, double weight_decay) {
    for (const auto& g : groups_) {
      if (!g.tensor->has_grad()) continue;
      for (T v : std::as_const(*g.tensor).grad())
        if (!std::isfinite(static_cast<double>(v)))
          throw NumericError("non-finite gradient in parameter group '" + g.name + "'");
    }
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t gi = 0; gi < groups_.size(); ++gi) {
      auto& g = groups_[gi];
      const bool has = g.tensor->has_grad();
      auto data = g.tensor->data();
      std::span<const T> grad = has ? std::as_const(*g.tensor).grad() : std::span<const T>();
      const double wd = g.decay ? weight_decay : 0.0;
      auto& m = m_[gi];
      auto& v = v_[gi];
      for (std::size_t i = 0; i < data.size(); ++i) {
        const double p = static_cast<double>(data[i]);
        const double gr = (has ? static_cast<double>(grad[i]) : 0.0) + wd * p;
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gr;
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gr * gr;
        const double mh = m[i] / c1, vh = v[i] / c2;
        data[i] = static_cast<T>(p - lr * mh / (std::sqrt(vh) + cfg_.eps));
      }
    }
  }

 private:
  std::vector<ParamGroup<T>> groups_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::int64_t t_ = 0;
};

struct TrainConfig {
  int batch_size = 32;
  double lr_init = 1e-3;
  std::int64_t lr_halve_every = 0;  // 0: max(1, max_iters / 7)
  double lr_stop_below = 1e-5;
  double weight_decay = 1e-4;
  std::int64_t max_iters = 1000;
  std::uint64_t seed = 1;
  std::int64_t log_every = 100;
  std::int64_t val_every = 0;  // 0: validate only at the end

  // Seven halvings take 1e-3 below 1e-5, so the automatic interval spreads
  // them evenly over max_iters.
  std::int64_t halve_interval() const {
    if (lr_halve_every > 0) return lr_halve_every;
    return std::max<std::int64_t>(1, max_iters / 7);
  }

  void validate() const {
    if (batch_size < 1) throw ConfigError("train.batch must be positive");
    if (!(lr_init > 0.0)) throw ConfigError("train.lr must be positive");
    if (!(lr_stop_below > 0.0) || !(lr_stop_below < lr_init))
      throw ConfigError("train.lr_stop must be positive and below train.lr");
    if (lr_halve_every < 0) throw ConfigError("train.lr_halve_every must be non-negative");
    if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay must be non-negative");
    if (max_iters < 0) throw ConfigError("train.iters must be non-negative");
    if (log_every < 1) throw ConfigError("train.log_every must be positive");
    if (val_every < 0) throw ConfigError("train.val_every must be non-negative");
  }
};

// lr_init * 2^-floor(iter / halve_every)
inline double lr_at(std::int64_t iter, const TrainConfig& cfg) {
  if (iter < 0) throw ConfigError("iteration must be non-negative");
  return cfg.lr_init * std::ldexp(1.0, -static_cast<int>(std::min<std::int64_t>(iter / cfg.halve_interval(), 2000)));
}

struct LogRecord {
  std::int64_t iter = 0;  // iterations completed
  double lr = 0.0;
  double loss = 0.0;      // mean over the logging interval
  std::optional<double> val_psnr_db;
};

struct TrainReport {
  std::vector<double> losses;  // per iteration
  std::vector<LogRecord> records;
  std::int64_t iterations = 0;
  bool stopped_by_schedule = false;
  std::optional<double> final_val_psnr_db;
};

inline void write_record(std::ostream& os, const LogRecord& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "{\"iter\":%lld,\"lr\":%.6g,\"loss\":%.9g", static_cast<long long>(r.iter), r.lr,
                r.loss);
  os << buf;
  if (r.val_psnr_db) os << ",\"val_psnr_db\":" << format_db(*r.val_psnr_db);
  os << "}\n" << std::flush;
}

template <class T>
struct TrainHooks {
  std::function<void(Network<T>&, std::int64_t)> after_backward;
  std::ostream* log = nullptr;
  const std::vector<NamedPlane>* validation = nullptr;
  EvalOptions val_options{};
  // Called every checkpoint_every iterations with the updated network.
  std::function<void(const Network<T>&, std::int64_t)> checkpoint;
  std::int64_t checkpoint_every = 0;
};

// Minibatch MSE training. Patches and all randomness come from streams
// derived from cfg.seed, so identical inputs give identical runs.
template <class T>
TrainReport train(Network<T>& net, const PatchDataset& data, const TrainConfig& cfg, TrainHooks<T> hooks = {}) {
  cfg.validate();
  if (net.spec().task != data.spec().task) throw ConfigError("dataset task does not match the network task");
  if (net.spec().task == Task::super_resolution && net.spec().factor != data.spec().factor)
    throw ConfigError("dataset SR factor does not match the network");
  Rng root(cfg.seed);
  Rng data_rng = root.split();
  Adam<T> opt(net.registry());
  TrainReport rep;

  auto validate = [&]() -> std::optional<double> {
    if (!hooks.validation || hooks.validation->empty()) return std::nullopt;
    return eval_benchmark(net, *hooks.validation, hooks.val_options).mean_psnr_db;
  };

  double interval_sum = 0.0;
  std::int64_t interval_n = 0;
  for (std::int64_t it = 0; it < cfg.max_iters; ++it) {
    const double lr = lr_at(it, cfg);
    if (lr < cfg.lr_stop_below) {
      rep.stopped_by_schedule = true;
      break;
    }
    Batch<T> b = data.template sample<T>(data_rng, cfg.batch_size);
    net.zero_grad();
    Tape<T> tape;
    auto x = make_var(std::move(b.input));
    auto target = make_var(std::move(b.target));
    auto y = net.forward(tape, x, Mode::train);
    auto loss = mse_loss(tape, y, target);
    const double lv = static_cast<double>((*loss)[0]);
    if (!std::isfinite(lv)) throw NumericError("non-finite loss at iteration " + std::to_string(it));
    tape.backward(loss);
    if (hooks.after_backward) hooks.after_backward(net, it);
    opt.step(lr, cfg.weight_decay);

    rep.losses.push_back(lv);
    rep.iterations = it + 1;
    if (hooks.checkpoint && hooks.checkpoint_every > 0 && (it + 1) % hooks.checkpoint_every == 0)
      hooks.checkpoint(net, it + 1);
    interval_sum += lv;
    ++interval_n;
    const bool log_now = (it + 1) % cfg.log_every == 0;
    const bool val_now = cfg.val_every > 0 && (it + 1) % cfg.val_every == 0;
    if (log_now || val_now) {
      LogRecord r{it + 1, lr, interval_sum / static_cast<double>(interval_n), std::nullopt};
      if (val_now) r.val_psnr_db = validate();
      if (hooks.log) write_record(*hooks.log, r);
      rep.records.push_back(r);
      interval_sum = 0.0;
      interval_n = 0;
    }
  }
  if (interval_n > 0) {
    LogRecord r{rep.iterations, lr_at(std::max<std::int64_t>(rep.iterations - 1, 0), cfg),
                interval_sum / static_cast<double>(interval_n), std::nullopt};
    if (hooks.log) write_record(*hooks.log, r);
    rep.records.push_back(r);
  }
  rep.final_val_psnr_db = validate();
  if (rep.final_val_psnr_db && hooks.log) {
    LogRecord r{rep.iterations, lr_at(std::max<std::int64_t>(rep.iterations - 1, 0), cfg), 0.0,
                rep.final_val_psnr_db};
    if (!rep.losses.empty()) r.loss = rep.records.back().loss;
    write_record(*hooks.log, r);
  }
  return rep;
}

// Moving average with a trailing window, for loss curves.
inline std::vector<double> smooth(const std::vector<double>& v, std::size_t window) {
  std::vector<double> out(v.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    acc += v[i];
    if (i >= window) acc -= v[i - window];
    out[i] = acc / static_cast<double>(std::min(i + 1, window));
  }
  return out;
}

}  // namespace mtlu
