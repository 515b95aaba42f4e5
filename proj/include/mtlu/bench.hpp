#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "mtlu/activations.hpp"
#include "mtlu/tensor.hpp"

namespace mtlu {

struct BenchOptions {
  Shape shape{1, 64, 256, 256};  // 2^22 elements
  int repeats = 15;
  int warmup = 3;
  bool backward = false;
  std::uint64_t seed = 5;
};

struct BenchRow {
  std::string activation;
  std::string hyper;  // e.g. bins=40
  std::string pass;   // forward or backward
  std::int64_t elements = 0;
  int repeats = 0;
  double median_ms = 0.0;
  double iqr_ms = 0.0;
};

namespace detail {

// Linear-interpolated quantile of a sorted sample.
inline double quantile(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) return 0.0;
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

template <class F>
std::vector<double> time_runs(F&& fn, int repeats, int warmup) {
  for (int i = 0; i < warmup; ++i) fn();
  std::vector<double> ms;
  for (int i = 0; i < repeats; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  std::sort(ms.begin(), ms.end());
  return ms;
}

inline std::string hyper_of(const ActivationSpec& s) {
  switch (s.kind) {
    case ActivationKind::mtlu: return "bins=" + std::to_string(s.bins);
    case ActivationKind::apl: return "kernels=" + std::to_string(s.apl_kernels);
    case ActivationKind::plf: return "segments=" + std::to_string(s.plf_segments);
    default: return "-";
  }
}

}  // namespace detail

// Wall-clock of one activation forward (or backward) pass on a fixed tensor
// of N(0, 1) inputs, float precision. Parameters are randomized so every
// bin and hinge is active.
inline BenchRow bench_activation(const ActivationSpec& spec, const BenchOptions& opt) {
  if (opt.repeats < 1) throw ConfigError("bench repeats must be at least 1");
  if (opt.warmup < 0) throw ConfigError("bench warmup must be non-negative");
  Rng rng(opt.seed);
  const Tensor<float> x = randn<float>(opt.shape, rng);
  auto act = Activation<float>::make(spec, opt.shape.c);
  for (auto& [name, v] : act.parameters())
    for (auto& e : v->data()) e += static_cast<float>(0.1 * rng.normal());
  const Shape out_shape{opt.shape.n, act.out_channels(), opt.shape.h, opt.shape.w};
  const Tensor<float> up = randn<float>(out_shape, rng);

  volatile float sink = 0.0f;
  auto forward = [&]() -> Tensor<float> {
    switch (spec.kind) {
      case ActivationKind::relu: return relu_forward(x);
      case ActivationKind::maxout: return maxout_forward(x);
      case ActivationKind::prelu: return prelu_forward(x, std::get<PreluParams<float>>(act.params()));
      case ActivationKind::mtlu: return mtlu_forward(x, std::get<MtluParams<float>>(act.params()));
      case ActivationKind::apl: return apl_forward(x, std::get<AplParams<float>>(act.params()));
      case ActivationKind::plf: return plf_forward(x, std::get<PlfParams<float>>(act.params()));
    }
    return {};
  };
  auto backward = [&]() -> float {
    switch (spec.kind) {
      case ActivationKind::relu: {
        Tape<float> tape;
        auto xv = make_var(x.detached(), true);
        auto y = relu(tape, xv);
        tape.backward(y, up);
        return xv->grad()[0];
      }
      case ActivationKind::maxout: return maxout_backward(x, up)[0];
      case ActivationKind::prelu: return prelu_backward(x, up, std::get<PreluParams<float>>(act.params())).grad_x[0];
      case ActivationKind::mtlu: return mtlu_backward(x, up, std::get<MtluParams<float>>(act.params())).grad_x[0];
      case ActivationKind::apl: return apl_backward(x, up, std::get<AplParams<float>>(act.params())).grad_x[0];
      case ActivationKind::plf: return plf_backward(x, up, std::get<PlfParams<float>>(act.params())).grad_x[0];
    }
    return 0.0f;
  };

  std::vector<double> ms;
  if (opt.backward)
    ms = detail::time_runs([&] { sink = sink + backward(); }, opt.repeats, opt.warmup);
  else
    ms = detail::time_runs([&] { sink = sink + forward()[0]; }, opt.repeats, opt.warmup);

  BenchRow row;
  row.activation = std::string(to_string(spec.kind));
  row.hyper = detail::hyper_of(spec);
  row.pass = opt.backward ? "backward" : "forward";
  row.elements = static_cast<std::int64_t>(x.size());
  row.repeats = opt.repeats;
  row.median_ms = detail::quantile(ms, 0.5);
  row.iqr_ms = detail::quantile(ms, 0.75) - detail::quantile(ms, 0.25);
  return row;
}

inline void write_bench_csv_header(std::ostream& os) {
  os << "activation,hyper,pass,elements,repeats,median_ms,iqr_ms\n";
}

inline void write_bench_csv_row(std::ostream& os, const BenchRow& r) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%.4f,%.4f", r.median_ms, r.iqr_ms);
  os << r.activation << ',' << r.hyper << ',' << r.pass << ',' << r.elements << ',' << r.repeats << ',' << buf
     << '\n';
}

}  // namespace mtlu
