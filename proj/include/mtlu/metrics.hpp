#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <string>

#include "mtlu/errors.hpp"
#include "mtlu/resample.hpp"
#include "mtlu/tensor.hpp"

namespace mtlu {

// Returned by psnr() for identical inputs.
inline constexpr double kPsnrIdentical = std::numeric_limits<double>::infinity();

inline double mean_squared_error(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("mse: size mismatch");
  if (a.empty()) throw ShapeError("mse: empty input");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.size());
}

// 10 log10(peak^2 / MSE) in dB, computed in double; +inf when MSE is 0.
inline double psnr(std::span<const double> a, std::span<const double> b, double peak = 1.0) {
  const double mse = mean_squared_error(a, b);
  if (mse == 0.0) return kPsnrIdentical;
  return 10.0 * std::log10(peak * peak / mse);
}

// PSNR over the interior left after removing `shave` pixels on every side.
inline double psnr(const Plane& a, const Plane& b, double peak = 1.0, int shave = 0) {
  if (a.width != b.width || a.height != b.height)
    throw ShapeError("psnr: image sizes differ (" + std::to_string(a.width) + "x" + std::to_string(a.height) +
                     " vs " + std::to_string(b.width) + "x" + std::to_string(b.height) + ")");
  if (shave < 0 || 2 * shave >= a.width || 2 * shave >= a.height)
    throw ShapeError("psnr: border shave leaves no pixels");
  if (shave == 0) return psnr(std::span<const double>(a.data), std::span<const double>(b.data), peak);
  const Plane ca = crop(a, shave, shave, a.width - 2 * shave, a.height - 2 * shave);
  const Plane cb = crop(b, shave, shave, b.width - 2 * shave, b.height - 2 * shave);
  return psnr(std::span<const double>(ca.data), std::span<const double>(cb.data), peak);
}

// y = x + n, n ~ N(0, (sigma/255)^2) on the real view; not clipped.
inline Plane add_awgn(const Plane& clean, double sigma_8bit, Rng& rng) {
  if (!(sigma_8bit >= 0.0)) throw ConfigError("noise level must be non-negative");
  Plane out = clean;
  if (sigma_8bit == 0.0) return out;
  const double s = sigma_8bit / 255.0;
  for (auto& v : out.data) v += s * rng.normal();
  return out;
}

inline Plane clip01(Plane p) {
  for (auto& v : p.data) v = std::clamp(v, 0.0, 1.0);
  return p;
}

}  // namespace mtlu
