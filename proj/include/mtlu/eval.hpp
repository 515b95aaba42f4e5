#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <functional>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "mtlu/dataset.hpp"
#include "mtlu/metrics.hpp"
#include "mtlu/networks.hpp"

namespace mtlu {

struct EvalOptions {
  Task task = Task::super_resolution;
  int factor = 2;
  double sigma = 25.0;
  std::uint64_t seed = 0;
  int shave = -1;    // -1: the SR factor for SR, 0 for denoising
  int multiple = 1;  // denoising mod-crop for networks with divisibility constraints

  int effective_shave() const {
    if (shave >= 0) return shave;
    return task == Task::super_resolution ? factor : 0;
  }
};

struct EvalRow {
  std::string name;
  double psnr_db = 0.0;
  double baseline_db = 0.0;  // bicubic upscale for SR, noisy input for denoising
  double runtime_ms = 0.0;
};

struct EvalReport {
  std::vector<EvalRow> rows;  // input order
  double mean_psnr_db = 0.0;
  double mean_baseline_db = 0.0;
};

using PlaneModel = std::function<Plane(const Plane&)>;

// 64-bit FNV-1a; seeds per-image noise so results do not depend on order.
inline std::uint64_t name_hash(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline Plane noisy_copy(const Plane& clean, double sigma, std::uint64_t seed, const std::string& name) {
  Rng rng(seed ^ name_hash(name));
  return add_awgn(clean, sigma, rng);
}

namespace detail {

// Mean over rows taken in name order; +inf rows make the mean +inf.
inline double ordered_mean(const std::vector<EvalRow>& rows, double EvalRow::*field) {
  std::vector<const EvalRow*> order;
  for (const auto& r : rows) order.push_back(&r);
  std::sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->name < b->name; });
  double acc = 0.0;
  for (const auto* r : order) acc += r->*field;
  return order.empty() ? 0.0 : acc / static_cast<double>(order.size());
}

}  // namespace detail

// SR: PSNR of model(LR) against the mod-cropped HR with a border shave.
// Denoising: PSNR of model(clean + noise) against the clean image.
inline EvalReport eval_benchmark(const PlaneModel& model, const std::vector<NamedPlane>& images,
                                 const EvalOptions& opt) {
  EvalReport rep;
  const int shave = opt.effective_shave();
  for (const auto& im : images) {
    EvalRow row;
    row.name = im.name;
    Plane input, reference, baseline;
    if (opt.task == Task::super_resolution) {
      auto pair = make_sr_pair(im.plane, opt.factor);
      baseline = resize_bicubic(pair.lr, pair.hr.width, pair.hr.height);
      input = std::move(pair.lr);
      reference = std::move(pair.hr);
    } else {
      reference = mod_crop(im.plane, opt.multiple);
      input = noisy_copy(reference, opt.sigma, opt.seed, im.name);
      baseline = input;
    }
    const auto t0 = std::chrono::steady_clock::now();
    const Plane out = model(input);
    const auto t1 = std::chrono::steady_clock::now();
    row.runtime_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    row.psnr_db = psnr(out, reference, 1.0, shave);
    row.baseline_db = psnr(baseline, reference, 1.0, shave);
    rep.rows.push_back(std::move(row));
  }
  rep.mean_psnr_db = detail::ordered_mean(rep.rows, &EvalRow::psnr_db);
  rep.mean_baseline_db = detail::ordered_mean(rep.rows, &EvalRow::baseline_db);
  return rep;
}

template <class T>
PlaneModel network_model(Network<T>& net) {
  return [&net](const Plane& p) { return to_plane(net.infer(to_tensor<T>(p))); };
}

template <class T>
EvalOptions eval_options_for(const Network<T>& net, double sigma = 25.0, std::uint64_t seed = 0) {
  EvalOptions o;
  o.task = net.spec().task;
  o.factor = net.spec().factor;
  o.sigma = sigma;
  o.seed = seed;
  o.multiple = net.spec().arch == Architecture::fdnet ? kFdnetShuffle : 1;
  return o;
}

template <class T>
EvalReport eval_benchmark(Network<T>& net, const std::vector<NamedPlane>& images, const EvalOptions& opt) {
  return eval_benchmark(network_model(net), images, opt);
}

inline std::string format_db(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

// image_name,psnr_db,runtime_ms
inline void write_eval_csv(const EvalReport& rep, std::ostream& os) {
  os << "image_name,psnr_db,runtime_ms\n";
  char ms[32];
  for (const auto& r : rep.rows) {
    std::snprintf(ms, sizeof ms, "%.3f", r.runtime_ms);
    os << r.name << ',' << format_db(r.psnr_db) << ',' << ms << '\n';
  }
}

}  // namespace mtlu
